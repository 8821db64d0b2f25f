"""Simulated spinning-LiDAR scans, smooth ground-truth trajectories and IMU streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import quat_conj, quat_exp, quat_mul, quat_to_rot, rotate
from .pointcloud import TrajectorySample

GRAVITY = np.array([0.0, 0.0, -9.81])

PoseFn = Callable[[float], tuple[np.ndarray, np.ndarray]]


@dataclass
class Scan:
    """One sweep: points in the sensor frame of their emission pose."""

    points: np.ndarray
    rel_times: np.ndarray
    stamp: float
    period: float = 0.1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.rel_times = np.asarray(self.rel_times, dtype=float).reshape(-1)
        if len(self.points) != len(self.rel_times):
            raise ValueError("points and rel_times must have equal length")
        if np.any(np.diff(self.rel_times) < 0):
            raise ValueError("rel_times must be nondecreasing")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def end_stamp(self) -> float:
        return self.stamp + self.period


@dataclass
class RayPattern:
    """Unit ray directions in the sensor frame with per-ray sweep fraction."""

    directions: np.ndarray
    rel_times: np.ndarray

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=float).reshape(-1, 3)
        self.rel_times = np.asarray(self.rel_times, dtype=float).reshape(-1)
        if len(self.directions) == 0:
            raise ValueError("ray pattern is empty")


def spinning_pattern(rings: int = 16, azimuth_steps: int = 900, fov_deg=(-45.0, 45.0)) -> RayPattern:
    """Azimuth-major ray order; each column fires at fraction ``j / (steps - 1)``."""
    el = np.radians(np.linspace(fov_deg[0], fov_deg[1], rings)) if rings > 1 else np.zeros(1)
    az = 2.0 * math.pi * np.arange(azimuth_steps) / azimuth_steps
    A, E = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    frac = np.arange(azimuth_steps) / max(azimuth_steps - 1, 1)
    return RayPattern(dirs, np.repeat(frac, rings))


def simulate_scan(
    scene,
    pose_fn: PoseFn,
    stamp: float,
    sweep_period: float = 0.1,
    ray_pattern: RayPattern | None = None,
    distort: bool = True,
    *,
    max_range: float = 60.0,
    range_noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Scan:
    """Ray-cast ``scene`` from the sensor pose at each ray's emission time."""
    pattern = ray_pattern or spinning_pattern()
    times = stamp + (pattern.rel_times * sweep_period if distort else np.zeros(len(pattern.rel_times)))
    uniq, inv = np.unique(times, return_inverse=True)
    poses = [pose_fn(float(t)) for t in uniq]
    P = np.array([p for p, _ in poses])[inv]
    Q = np.array([q for _, q in poses])[inv]
    world_dirs = rotate(Q, pattern.directions)
    rng_ = scene.raycast(P, world_dirs)
    hit = np.isfinite(rng_) & (rng_ <= max_range)
    r = rng_[hit]
    if range_noise > 0:
        r = r + (rng or np.random.default_rng(0)).normal(scale=range_noise, size=r.shape)
    pts = pattern.directions[hit] * r[:, None]
    return Scan(pts, pattern.rel_times[hit], stamp, sweep_period)


# -- trajectories -----------------------------------------------------------------


@dataclass
class LoopTrajectory:
    """Closed planar loop with a gentle vertical bob and yaw wobble.

    All derivatives are analytic so IMU samples are exact.
    """

    center: tuple[float, float, float] = (0.2, 0.05, 1.0)
    radius: float = 1.5
    period: float = 20.0
    bob: float = 0.1
    yaw_wobble: float = 0.3
    t0: float = 0.0

    @property
    def omega(self) -> float:
        return 2.0 * math.pi / self.period

    def _phase(self, t):
        return self.omega * (np.asarray(t, dtype=float) - self.t0)

    def position(self, t) -> np.ndarray:
        a = self._phase(t)
        c = np.asarray(self.center)
        return c + np.stack([self.radius * np.cos(a), self.radius * np.sin(a), self.bob * np.sin(2 * a)], axis=-1)

    def velocity(self, t) -> np.ndarray:
        a, w = self._phase(t), self.omega
        return np.stack(
            [-self.radius * w * np.sin(a), self.radius * w * np.cos(a), 2 * self.bob * w * np.cos(2 * a)], axis=-1
        )

    def acceleration(self, t) -> np.ndarray:
        a, w = self._phase(t), self.omega
        return np.stack(
            [-self.radius * w * w * np.cos(a), -self.radius * w * w * np.sin(a), -4 * self.bob * w * w * np.sin(2 * a)],
            axis=-1,
        )

    def yaw(self, t):
        a = self._phase(t)
        return a + 0.5 * math.pi + self.yaw_wobble * np.sin(3 * a)

    def yaw_rate(self, t):
        a = self._phase(t)
        return self.omega * (1.0 + 3 * self.yaw_wobble * np.cos(3 * a))

    def orientation(self, t) -> np.ndarray:
        y = np.asarray(self.yaw(t))
        return quat_exp(np.stack([np.zeros_like(y), np.zeros_like(y), y], axis=-1))

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.position(t), self.orientation(t)

    def imu(self, t):
        """Body-frame specific force and angular rate at time ``t``."""
        q = self.orientation(t)
        f_world = self.acceleration(t) - GRAVITY
        accel = rotate(quat_conj(q), f_world)
        yr = np.asarray(self.yaw_rate(t))
        gyro = np.stack([np.zeros_like(yr), np.zeros_like(yr), yr], axis=-1)
        return accel, gyro

    def samples(self, stamps) -> list[TrajectorySample]:
        return [TrajectorySample(float(t), self.position(t), self.orientation(t)) for t in stamps]


def synthesize_imu(traj, t_start: float, t_end: float, rate: float = 200.0, *, noise=None, rng=None):
    """IMU samples at ``rate`` Hz covering ``[t_start, t_end]`` inclusive."""
    from .eskf import ImuSample

    n = int(round((t_end - t_start) * rate))
    stamps = t_start + np.arange(n + 1) / rate
    acc, gyr = traj.imu(stamps)
    if noise is not None:
        rng = rng or np.random.default_rng(0)
        acc = acc + rng.normal(scale=noise[0], size=acc.shape)
        gyr = gyr + rng.normal(scale=noise[1], size=gyr.shape)
    return [ImuSample(float(t), a, g) for t, a, g in zip(stamps, acc, gyr)]


@dataclass
class Sequence:
    scans: list[Scan]
    imu: list
    truth: list[TrajectorySample] = field(default_factory=list)
    trajectory: LoopTrajectory | None = None


def make_sequence(
    scene,
    n_scans: int = 200,
    *,
    trajectory: LoopTrajectory | None = None,
    sweep_period: float = 0.1,
    ray_pattern: RayPattern | None = None,
    distort: bool = True,
    imu_rate: float = 200.0,
    range_noise: float = 0.0,
    seed: int = 0,
) -> Sequence:
    """Consecutive sweeps along ``trajectory`` plus an IMU stream and truth at sweep ends."""
    traj = trajectory or LoopTrajectory()
    rng = np.random.default_rng(seed)
    pattern = ray_pattern or spinning_pattern()
    scans = []
    for k in range(n_scans):
        stamp = traj.t0 + k * sweep_period
        scans.append(
            simulate_scan(scene, traj.pose, stamp, sweep_period, pattern, distort, range_noise=range_noise, rng=rng)
        )
    imu = synthesize_imu(traj, traj.t0, traj.t0 + n_scans * sweep_period, imu_rate)
    truth = traj.samples([s.end_stamp for s in scans])
    return Sequence(scans, imu, truth, traj)


def transform_points(points, position, orientation) -> np.ndarray:
    return np.asarray(points, dtype=float) @ quat_to_rot(orientation).T + np.asarray(position, dtype=float)


def relative_pose(p_a, q_a, p_b, q_b):
    """Pose of frame b expressed in frame a."""
    qa_inv = quat_conj(q_a)
    return rotate(qa_inv, np.asarray(p_b) - np.asarray(p_a)), quat_mul(qa_inv, q_b)
