"""Error-state Kalman filter over [dp, dv, dtheta, dba, dbg] and scan deskewing."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import quat_conj, quat_exp, quat_log, quat_mul, quat_normalize, quat_to_rot, rotate, skew, slerp

GRAVITY = np.array([0.0, 0.0, -9.81])
# chi-square 0.999 quantile with 6 degrees of freedom
POSE_GATE = 22.457744484825323


@dataclass(frozen=True)
class ImuSample:
    stamp: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class NominalState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stamp: float = 0.0


@dataclass
class NoiseParams:
    """Continuous-time noise densities (consumer-grade IMU defaults)."""

    accel: float = 2e-2  # m/s^2/sqrt(Hz)
    gyro: float = 2e-3  # rad/s/sqrt(Hz)
    accel_bias: float = 1e-4
    gyro_bias: float = 1e-5


@dataclass
class Extrinsic:
    """Sensor (LiDAR) pose in the body (IMU) frame."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))


def default_covariance() -> np.ndarray:
    return np.diag([1e-4] * 3 + [1e-2] * 3 + [1e-4] * 3 + [1e-3] * 3 + [1e-5] * 3).astype(float)


def default_measurement_cov(sigma_p: float = 0.05, sigma_theta: float = 0.01) -> np.ndarray:
    return np.diag([sigma_p**2] * 3 + [sigma_theta**2] * 3)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(
    state: NominalState,
    cov: np.ndarray,
    imu: ImuSample,
    noise: NoiseParams | None = None,
    gravity=GRAVITY,
) -> tuple[NominalState, np.ndarray]:
    """Propagate over ``[state.stamp, imu.stamp]`` holding ``imu`` constant."""
    dt = imu.stamp - state.stamp
    if not dt > 0:
        raise ValueError(f"IMU stamp {imu.stamp} does not advance past state stamp {state.stamp}")
    noise = noise or NoiseParams()
    g = np.asarray(gravity, dtype=float)
    a_b = np.asarray(imu.accel, float) - state.b_a
    w_b = np.asarray(imu.gyro, float) - state.b_g
    R = quat_to_rot(state.q)
    acc = R @ a_b + g
    p = state.p + state.v * dt + 0.5 * acc * dt * dt
    v = state.v + acc * dt
    q = quat_normalize(quat_mul(state.q, quat_exp(w_b * dt)))

    F = np.eye(15)
    F[0:3, 3:6] = np.eye(3) * dt
    F[3:6, 6:9] = -R @ skew(a_b) * dt
    F[3:6, 9:12] = -R * dt
    F[6:9, 6:9] = quat_to_rot(quat_exp(w_b * dt)).T
    F[6:9, 12:15] = -np.eye(3) * dt
    Q = np.zeros((15, 15))
    Q[3:6, 3:6] = np.eye(3) * noise.accel**2 * dt
    Q[6:9, 6:9] = np.eye(3) * noise.gyro**2 * dt
    Q[9:12, 9:12] = np.eye(3) * noise.accel_bias**2 * dt
    Q[12:15, 12:15] = np.eye(3) * noise.gyro_bias**2 * dt
    P = _symmetrize(F @ cov @ F.T + Q)
    return replace(state, p=p, v=v, q=q, stamp=float(imu.stamp)), P


@dataclass
class UpdateResult:
    state: NominalState
    cov: np.ndarray
    applied: bool
    mahalanobis: float


def update_pose(
    state: NominalState,
    cov: np.ndarray,
    meas_position,
    meas_orientation,
    meas_cov: np.ndarray | None = None,
    *,
    gate: float | None = POSE_GATE,
) -> UpdateResult:
    """Fuse a full pose measurement; skipped when the innovation fails the gate."""
    Rm = default_measurement_cov() if meas_cov is None else np.asarray(meas_cov, float)
    r = np.concatenate(
        [np.asarray(meas_position, float) - state.p, quat_log(quat_mul(quat_conj(state.q), meas_orientation))]
    )
    H = np.zeros((6, 15))
    H[0:3, 0:3] = np.eye(3)
    H[3:6, 6:9] = np.eye(3)
    S = H @ cov @ H.T + Rm
    S = _symmetrize(S)
    m2 = float(r @ np.linalg.solve(S, r))
    if gate is not None and m2 > gate:
        return UpdateResult(state, cov, False, m2)
    K = np.linalg.solve(S, H @ cov).T
    dx = K @ r
    I_KH = np.eye(15) - K @ H
    P = I_KH @ cov @ I_KH.T + K @ Rm @ K.T
    dth = dx[6:9]
    new = replace(
        state,
        p=state.p + dx[0:3],
        v=state.v + dx[3:6],
        q=quat_normalize(quat_mul(state.q, quat_exp(dth))),
        b_a=state.b_a + dx[9:12],
        b_g=state.b_g + dx[12:15],
    )
    G = np.eye(15)
    G[6:9, 6:9] = np.eye(3) - 0.5 * skew(dth)
    P = _symmetrize(G @ P @ G.T)
    return UpdateResult(new, P, True, m2)


class StateHistory:
    """Time-ordered poses for interpolation; stamps strictly increase."""

    def __init__(self, stamps=(), positions=(), orientations=()):
        self.stamps: list[float] = list(map(float, stamps))
        self.positions: list[np.ndarray] = [np.asarray(p, float) for p in positions]
        self.orientations: list[np.ndarray] = [np.asarray(q, float) for q in orientations]

    def append(self, stamp: float, position, orientation) -> None:
        if self.stamps and stamp <= self.stamps[-1]:
            if stamp == self.stamps[-1]:
                self.positions[-1], self.orientations[-1] = np.asarray(position, float), np.asarray(orientation, float)
                return
            raise ValueError("history stamps must increase")
        self.stamps.append(float(stamp))
        self.positions.append(np.asarray(position, float))
        self.orientations.append(np.asarray(orientation, float))

    def append_state(self, s: NominalState) -> None:
        self.append(s.stamp, s.p, s.q)

    def __len__(self) -> int:
        return len(self.stamps)

    def trim_before(self, t: float) -> None:
        i = max(0, bisect.bisect_right(self.stamps, t) - 1)
        del self.stamps[:i], self.positions[:i], self.orientations[:i]

    @classmethod
    def from_function(cls, pose_fn, stamps) -> "StateHistory":
        h = cls()
        for t in stamps:
            p, q = pose_fn(float(t))
            h.append(float(t), p, q)
        return h


def pose_at(history: StateHistory, t: float) -> tuple[np.ndarray, np.ndarray, bool]:
    """Interpolated pose at ``t``; the flag is True when ``t`` was clamped to the span."""
    p, q, clamped = poses_at(history, np.array([t], dtype=float))
    return p[0], q[0], bool(clamped[0])


def poses_at(history: StateHistory, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(history) == 0:
        raise ValueError("pose history is empty")
    ts = np.asarray(ts, dtype=float)
    stamps = np.asarray(history.stamps)
    P = np.asarray(history.positions)
    Q = np.asarray(history.orientations)
    clamped = (ts < stamps[0]) | (ts > stamps[-1])
    tc = np.clip(ts, stamps[0], stamps[-1])
    if len(stamps) == 1:
        return np.repeat(P, len(ts), 0), np.repeat(Q, len(ts), 0), clamped
    i1 = np.clip(np.searchsorted(stamps, tc, side="right"), 1, len(stamps) - 1)
    i0 = i1 - 1
    u = (tc - stamps[i0]) / (stamps[i1] - stamps[i0])
    exact = tc == stamps[i0]
    pos = P[i0] + u[:, None] * (P[i1] - P[i0])
    quat = slerp(Q[i0], Q[i1], u)
    pos[exact], quat[exact] = P[i0][exact], Q[i0][exact]
    at_end = tc == stamps[i1]
    pos[at_end], quat[at_end] = P[i1][at_end], Q[i1][at_end]
    return pos, quat, clamped


def deskew(scan, history: StateHistory, target_time: float | None = None, extrinsic: Extrinsic | None = None) -> np.ndarray:
    """Move every point from its emission frame into the sensor frame at ``target_time`` (default sweep end)."""
    target = scan.stamp + scan.period if target_time is None else target_time
    ts = scan.stamp + scan.rel_times * scan.period
    pos, quat, _ = poses_at(history, ts)
    p_t, q_t, _ = pose_at(history, target)
    pts = scan.points
    if extrinsic is not None:
        pts = rotate(extrinsic.rotation, pts) + extrinsic.translation
    world = rotate(quat, pts) + pos
    local = rotate(quat_conj(q_t), world - p_t)
    if extrinsic is not None:
        local = rotate(quat_conj(extrinsic.rotation), local - extrinsic.translation)
    return local


class ESKF:
    """Stateful wrapper that keeps a pose history for deskewing."""

    def __init__(self, state: NominalState, cov=None, noise=None, gravity=GRAVITY):
        self.state = state
        self.cov = default_covariance() if cov is None else np.asarray(cov, float)
        self.noise = noise or NoiseParams()
        self.gravity = np.asarray(gravity, float)
        self.history = StateHistory()
        self.history.append_state(state)

    def propagate(self, samples) -> None:
        for s in samples:
            if s.stamp <= self.state.stamp:
                continue
            self.state, self.cov = predict(self.state, self.cov, s, self.noise, self.gravity)
            self.history.append_state(self.state)

    def propagate_to(self, imu, t: float) -> None:
        """Integrate samples up to ``t``; the last segment reuses the latest sample."""
        self.propagate(s for s in imu if s.stamp <= t)
        if t > self.state.stamp:
            last = [s for s in imu if s.stamp <= t]
            ref = last[-1] if last else imu[0]
            self.state, self.cov = predict(self.state, self.cov, ImuSample(t, ref.accel, ref.gyro), self.noise, self.gravity)
            self.history.append_state(self.state)

    def update(self, position, orientation, meas_cov=None, gate=POSE_GATE) -> UpdateResult:
        res = update_pose(self.state, self.cov, position, orientation, meas_cov, gate=gate)
        self.state, self.cov = res.state, res.cov
        if res.applied:
            self.history.append_state(self.state)
        return res
