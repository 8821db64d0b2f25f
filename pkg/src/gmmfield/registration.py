"""Direct scan-to-map registration and the sequential localization loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .eskf import ESKF, NominalState, default_measurement_cov, deskew
from .geometry import angle_between, quat_exp, quat_from_yaw, quat_mul, quat_normalize, quat_to_rot
from .lm import LMConfig, lm_solve
from .pointcloud import TrajectorySample, voxel_downsample


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pose6D:
    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=float).reshape(4)))

    @classmethod
    def identity(cls) -> "Pose6D":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.q)

    def apply(self, pts) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.R.T + self.t

    def compose(self, other: "Pose6D") -> "Pose6D":
        return Pose6D(self.R @ other.t + self.t, quat_mul(self.q, other.q))

    def inverse(self) -> "Pose6D":
        Rt = self.R.T
        return Pose6D(-Rt @ self.t, self.q * np.array([1.0, -1.0, -1.0, -1.0]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.q])

    @classmethod
    def from_vector(cls, x) -> "Pose6D":
        return cls(x[:3], x[3:7])


@dataclass
class RegistrationConfig:
    coarse_cauchy_scale: float = 1.0
    fine_cauchy_scale: float = 0.1
    max_iterations: int = 30
    rel_cost_tol: float = 1e-8
    step_tol: float = 1e-8
    min_valid_fraction: float = 0.2
    initial_damping: float = 1e-3

    def validate(self) -> None:
        from .fitter import ConfigError

        if not (self.coarse_cauchy_scale > self.fine_cauchy_scale > 0):
            raise ConfigError("registration scales must satisfy coarse > fine > 0")
        if not 0 <= self.min_valid_fraction <= 1:
            raise ConfigError("min_valid_fraction must be in [0, 1]")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")

    def lm_config(self) -> LMConfig:
        return LMConfig(
            max_iterations=self.max_iterations,
            initial_damping=self.initial_damping,
            rel_cost_tol=self.rel_cost_tol,
            step_tol=self.step_tol,
        )


@dataclass
class RegistrationResult:
    pose: Pose6D
    final_cost: float
    iterations: tuple[int, int]
    valid_fraction: float
    converged: bool
    mean_abs_residual: float
    status: tuple[str, str] = ("", "")


def robust_weight(residual, scale: float):
    """Cauchy rescaling: returns ``(sqrt(rho') * r, sqrt(rho'))``.

    With ``rho(s) = c^2 log(1 + s / c^2)`` and ``s = r^2``, ``rho'(s) = 1 / (1 + s / c^2)``.
    Because ``rho'' < 0`` the second-order Triggs term is dropped, leaving
    plain square-root weighting of residual and Jacobian.
    """
    if not scale > 0:
        raise ValueError("scale must be > 0")
    r = np.asarray(residual, dtype=float)
    w = 1.0 / np.sqrt(1.0 + r * r / (scale * scale))
    out = (r * w, w)
    return (float(out[0]), float(out[1])) if r.ndim == 0 else out


def cauchy_cost(residual, scale: float) -> float:
    """``0.5 * sum rho(r_i^2)``."""
    r = np.asarray(residual, dtype=float)
    c2 = scale * scale
    return 0.5 * float(np.sum(c2 * np.log1p(r * r / c2)))


class _ScanProblem:
    def __init__(self, gmap, points: np.ndarray, scale: float):
        self.map = gmap
        self.p = np.ascontiguousarray(points, dtype=float)
        self.scale = scale
        self._key = None

    def _eval(self, x):
        key = x.tobytes()
        if key != self._key:
            pose = Pose6D.from_vector(x)
            world = pose.apply(self.p)
            res = self.map.query_batch(world)
            d = np.where(res.valid, res.values, 0.0)
            g = np.where(res.valid[:, None], res.gradients, 0.0)
            self._key, self._cache = key, (pose, d, g, res.valid)
        return self._cache

    def residual(self, x):
        _, d, _, _ = self._eval(x)
        return robust_weight(d, self.scale)[0]

    def raw(self, x):
        return self._eval(x)[1]

    def cost(self, x, _r):
        return cauchy_cost(self.raw(x), self.scale)

    def jacobian(self, x):
        pose, d, g, _ = self._eval(x)
        J = np.empty((len(self.p), 6))
        J[:, :3] = g
        # g^T (-R [p]x) = -((R^T g) x p)^T
        J[:, 3:] = -np.cross(g @ pose.R, self.p)
        _, w = robust_weight(d, self.scale)
        return J * w[:, None]

    @staticmethod
    def retract(x, dx):
        return np.concatenate([x[:3] + dx[:3], quat_normalize(quat_mul(x[3:7], quat_exp(dx[3:6])))])


def registration_jacobian(gmap, points, pose: Pose6D) -> np.ndarray:
    """Unweighted d(d_i)/d(t, dtheta) rows."""
    # a huge Cauchy scale makes the robust weight exactly 1
    return _ScanProblem(gmap, points, 1e150).jacobian(pose.as_vector())


def register(gmap, scan_points, initial: Pose6D, cfg: RegistrationConfig | None = None) -> RegistrationResult:
    """Two-stage Cauchy-robust alignment of ``scan_points`` (sensor frame) to the map."""
    cfg = cfg or RegistrationConfig()
    cfg.validate()
    pts = np.asarray(scan_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise RegistrationError("scan is empty")
    x = initial.as_vector()
    iters, status, cost = [], [], 0.0
    failed = False
    for scale in (cfg.coarse_cauchy_scale, cfg.fine_cauchy_scale):
        prob = _ScanProblem(gmap, pts, scale)
        res = lm_solve(prob.residual, prob.jacobian, x, cfg.lm_config(), cost_fn=prob.cost, retract=prob.retract)
        x, cost = res.params, res.cost
        iters.append(res.iterations)
        status.append(res.status)
        failed |= res.status in ("normal equations failed", "damping limit")
    pose = Pose6D.from_vector(x)
    _, d, _, valid = prob._eval(x)
    vf = float(valid.mean())
    mar = float(np.abs(d[valid]).mean()) if valid.any() else float("nan")
    return RegistrationResult(
        pose=pose,
        final_cost=float(cost),
        iterations=tuple(iters),
        valid_fraction=vf,
        converged=bool(vf >= cfg.min_valid_fraction and not failed),
        mean_abs_residual=mar,
        status=tuple(status),
    )


# -- localization ------------------------------------------------------------------


@dataclass
class Setup:
    """``inertial``, ``noimu`` or ``noise`` (Inertial prior perturbed by ``sigma_t``/``sigma_yaw``)."""

    kind: str = "inertial"
    sigma_t: float = 0.0
    sigma_yaw: float = 0.0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("inertial", "noimu", "noise"):
            raise ValueError(f"unknown setup {self.kind!r}")

    @classmethod
    def low(cls) -> "Setup":
        return cls("noise", 0.25, 0.05)

    @classmethod
    def high(cls) -> "Setup":
        return cls("noise", 0.5, 0.1)

    @classmethod
    def parse(cls, name: str, sigma_t: float | None = None, sigma_yaw: float | None = None) -> "Setup":
        name = name.lower()
        if name == "low":
            return cls.low()
        if name == "high":
            return cls.high()
        if name == "noise":
            return cls("noise", sigma_t or 0.0, sigma_yaw or 0.0)
        return cls(name)


@dataclass
class LocalizationResult:
    trajectory: list[TrajectorySample]
    timings_ms: np.ndarray
    costs: np.ndarray
    failed: np.ndarray
    iterations: list[tuple[int, int]] = field(default_factory=list)


def _perturb(pose: Pose6D, setup: Setup, rng: np.random.Generator) -> Pose6D:
    dt = rng.normal(scale=setup.sigma_t, size=3) if setup.sigma_t > 0 else np.zeros(3)
    dyaw = rng.normal(scale=setup.sigma_yaw) if setup.sigma_yaw > 0 else 0.0
    return Pose6D(pose.t + dt, quat_mul(quat_from_yaw(dyaw), pose.q))


def run_localization(
    gmap,
    scans,
    imu=None,
    setup: Setup | str = "inertial",
    initial_pose: Pose6D | None = None,
    seed: int = 0,
    *,
    cfg: RegistrationConfig | None = None,
    scan_voxel: float = 0.5,
    initial_velocity=None,
    meas_cov=None,
) -> LocalizationResult:
    """Sequential scan-to-map localization.

    Estimates are the registered sensor poses, stamped at sweep end; without
    an IMU no deskew is possible, so the estimate is stamped at mid-sweep,
    the time the undistorted scan best represents.
    """
    setup = Setup.parse(setup) if isinstance(setup, str) else setup
    cfg = cfg or RegistrationConfig()
    rng = np.random.default_rng(seed)
    scans = list(scans)
    if not scans:
        raise ValueError("no scans")
    use_imu = setup.kind != "noimu"
    if use_imu and not imu:
        raise ValueError(f"setup {setup.kind!r} needs an IMU stream")
    pose = initial_pose or Pose6D.identity()
    filt = None
    if use_imu:
        v0 = np.zeros(3) if initial_velocity is None else np.asarray(initial_velocity, float)
        filt = ESKF(NominalState(p=pose.t, v=v0, q=pose.q, stamp=scans[0].stamp))
        imu = list(imu)
    mcov = default_measurement_cov() if meas_cov is None else meas_cov

    traj, times, costs, failed, iters = [], [], [], [], []
    for scan in scans:
        t0 = time.perf_counter()
        if use_imu:
            filt.propagate_to(imu, scan.end_stamp)
            pts = deskew(scan, filt.history)
            prior = Pose6D(filt.state.p, filt.state.q)
            if setup.kind == "noise":
                prior = _perturb(prior, setup, rng)
            stamp = scan.end_stamp
        else:
            pts = scan.points
            prior = pose
            stamp = scan.stamp + 0.5 * scan.period
        pts = voxel_downsample(pts, scan_voxel) if scan_voxel > 0 else pts
        res = register(gmap, pts, prior, cfg)
        ok = res.converged
        if ok and use_imu:
            # a gated innovation means the scan locked onto the wrong basin
            ok = filt.update(res.pose.t, res.pose.q, mcov).applied
            filt.history.trim_before(scan.end_stamp - 1.0)
        if ok:
            pose = res.pose
        else:
            pose = Pose6D(filt.state.p, filt.state.q) if use_imu else pose
        times.append((time.perf_counter() - t0) * 1e3)
        traj.append(TrajectorySample(stamp, pose.t.copy(), pose.q.copy()))
        costs.append(res.final_cost)
        failed.append(not ok)
        iters.append(res.iterations)
    return LocalizationResult(traj, np.array(times), np.array(costs), np.array(failed), iters)


def trajectory_rmse(estimate, truth) -> tuple[float, float]:
    """Position RMSE (m) and rotation RMSE (deg) with truth interpolated to estimate stamps."""
    from .eskf import StateHistory, poses_at

    truth = sorted(truth, key=lambda s: s.stamp)
    if len(truth) < 1:
        raise ValueError("truth is empty")
    lo, hi = truth[0].stamp, truth[-1].stamp
    est = [s for s in estimate if lo - 1e-9 <= s.stamp <= hi + 1e-9]
    if len(est) < 2:
        raise ValueError("fewer than 2 estimate samples overlap the truth span")
    hist = StateHistory([s.stamp for s in truth], [s.position for s in truth], [s.orientation for s in truth])
    ts = np.array([s.stamp for s in est])
    p_true, q_true, _ = poses_at(hist, ts)
    p_est = np.array([s.position for s in est])
    q_est = np.array([s.orientation for s in est])
    pos = float(np.sqrt(np.mean(np.sum((p_est - p_true) ** 2, axis=1))))
    rot = float(np.degrees(np.sqrt(np.mean(angle_between(q_est, q_true) ** 2))))
    return pos, rot
