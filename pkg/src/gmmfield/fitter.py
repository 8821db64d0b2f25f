"""Per-block regression of a Gaussian mixture onto a local EDT."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .edt import ExtremaSet, LocalEdtGrid
from .field import EXP_CUTOFF, GaussianKernel
from .lm import LMConfig, lm_solve


class ConfigError(ValueError):
    """Raised for configuration values that violate documented invariants."""


@dataclass
class FitConfig:
    mae_tolerance: float = 0.05
    max_kernels: int = 64
    kernel_increment: int = 2
    initial_kernels: int = 4
    initial_kernels_empty: int = 1
    max_lm_iterations: int = 30
    lm_initial_damping: float = 1e-3
    parameter_bounds: tuple[float, float] = (0.05, 10.0)
    negative_seed_weight: float = 0.5
    growth_length_scale: float = 0.2
    prune_weight: float = 1e-4

    def validate(self) -> None:
        if not self.mae_tolerance > 0:
            raise ConfigError("fit.mae_tolerance must be > 0")
        if self.max_kernels < 1:
            raise ConfigError("fit.max_kernels must be >= 1")
        if self.kernel_increment < 1:
            raise ConfigError("fit.kernel_increment must be >= 1")
        lo, hi = self.parameter_bounds
        if not (0 < lo < hi):
            raise ConfigError("fit.parameter_bounds must satisfy 0 < min < max")

    def lm_config(self) -> LMConfig:
        return LMConfig(max_iterations=self.max_lm_iterations, initial_damping=self.lm_initial_damping)


@dataclass
class FittedBlock:
    params: np.ndarray  # (K, 7): w, mx, my, mz, lx, ly, lz
    mae: float
    sample_count: int
    converged: bool
    iterations: int = field(default=0, compare=False)

    @property
    def kernels(self) -> list[GaussianKernel]:
        return [GaussianKernel.from_row(row) for row in self.params]

    def __len__(self) -> int:
        return len(self.params)


def _to_theta(params: np.ndarray) -> np.ndarray:
    theta = params.copy()
    theta[:, 4:7] = np.log(theta[:, 4:7])
    return theta.ravel()


def _to_params(theta: np.ndarray) -> np.ndarray:
    p = theta.reshape(-1, 7).copy()
    p[:, 4:7] = np.exp(p[:, 4:7])
    return p


def initialize_kernels(
    extrema: ExtremaSet,
    edt: LocalEdtGrid,
    budget: int,
    *,
    length_scale: float | None = None,
    negative_weight: float = 0.5,
) -> list[GaussianKernel]:
    """Seed kernels at EDT extrema.

    Maxima become positive kernels weighted by their distance, minima negative
    kernels of magnitude ``negative_weight``. When there are more extrema than
    ``budget``, the ones farthest from the grid's mean distance are kept. With
    no extrema at all, one kernel carrying the mean distance sits at the grid
    center.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    extent = np.asarray(edt.dims) * edt.voxel_size
    ls = float(length_scale) if length_scale is not None else 0.5 * float(extent.max())
    scales = (ls, ls, ls)
    mean = float(np.mean(edt.distances))
    if len(extrema) == 0:
        center = edt.origin + 0.5 * (np.asarray(edt.dims) - 1) * edt.voxel_size
        return [GaussianKernel(mean if mean != 0.0 else 1e-3, tuple(center), scales)]
    seeds = [(pos, d, +1) for pos, d in extrema.maxima] + [(pos, d, -1) for pos, d in extrema.minima]
    residual = np.array([abs(d - mean) for _, d, _ in seeds])
    order = np.argsort(-residual, kind="stable")[:budget]
    out = []
    for i in order:
        pos, d, sign = seeds[i]
        w = d if sign > 0 else -abs(negative_weight)
        if w == 0.0:
            w = 1e-3
        out.append(GaussianKernel(w, tuple(pos), scales))
    return out


def _pick_growth_sites(x: np.ndarray, resid: np.ndarray, count: int, spacing: float) -> list[int]:
    order = np.argsort(-np.abs(resid), kind="stable")
    picked: list[int] = []
    for i in order:
        if len(picked) == count:
            break
        if all(np.linalg.norm(x[i] - x[j]) >= spacing for j in picked):
            picked.append(int(i))
    return picked


class _Problem:
    def __init__(self, x: np.ndarray, target: np.ndarray, bounds: tuple[float, float]):
        self.x = np.ascontiguousarray(x)
        self.target = target
        self.log_lo, self.log_hi = math.log(bounds[0]), math.log(bounds[1])

    def predict(self, params: np.ndarray) -> np.ndarray:
        val, _ = _backend.mixture_eval(np.ascontiguousarray(params), self.x, EXP_CUTOFF)
        return val

    def residual(self, theta):
        return self.predict(_to_params(theta)) - self.target

    def jacobian(self, theta):
        _, jac = _backend.mixture_jacobian(_to_params(theta), self.x, EXP_CUTOFF)
        return jac

    def retract(self, theta, step):
        t = (theta + step).reshape(-1, 7)
        t[:, 4:7] = np.clip(t[:, 4:7], self.log_lo, self.log_hi)
        return t.ravel()

    def solve(self, params: np.ndarray, cfg: LMConfig):
        res = lm_solve(self.residual, self.jacobian, _to_theta(params), cfg, retract=self.retract)
        return _to_params(res.params), res


def fit_block(
    edt: LocalEdtGrid,
    extrema: ExtremaSet,
    cfg: FitConfig | None = None,
    *,
    block_size: float | None = None,
    empty: bool | None = None,
) -> FittedBlock:
    """Fit kernels to every voxel-center sample of ``edt``.

    Capacity grows by ``kernel_increment`` kernels, placed at the samples with
    the largest absolute residual, until the MAE meets ``mae_tolerance`` or
    ``max_kernels`` is reached.
    """
    cfg = cfg or FitConfig()
    cfg.validate()
    x = edt.centers()
    target = edt.targets.ravel().astype(float)
    if empty is None:
        empty = edt.occupied is None or not bool(np.any(edt.occupied))
    budget = cfg.initial_kernels_empty if empty else cfg.initial_kernels
    budget = max(1, min(budget, cfg.max_kernels))
    ls = 0.5 * block_size if block_size is not None else None
    seeds = initialize_kernels(extrema, edt, budget, length_scale=ls, negative_weight=cfg.negative_seed_weight)
    lo, hi = cfg.parameter_bounds
    params = np.stack([k.as_row() for k in seeds])
    params[:, 4:7] = np.clip(params[:, 4:7], lo, hi)

    problem = _Problem(x, target, cfg.parameter_bounds)
    lm_cfg = cfg.lm_config()
    iterations = 0
    failed = False
    while True:
        params, res = problem.solve(params, lm_cfg)
        iterations += res.iterations
        failed = res.status in ("normal equations failed",)
        resid = target - problem.predict(params)
        mae = float(np.mean(np.abs(resid)))
        if mae <= cfg.mae_tolerance or len(params) >= cfg.max_kernels:
            break
        add = min(cfg.kernel_increment, cfg.max_kernels - len(params))
        sites = _pick_growth_sites(x, resid, add, cfg.growth_length_scale)
        g = cfg.growth_length_scale
        new = [[resid[i] if resid[i] != 0.0 else 1e-3, *x[i], g, g, g] for i in sites]
        params = np.vstack([params, np.array(new)])

    keep = np.abs(params[:, 0]) >= cfg.prune_weight
    if not keep.all() and keep.any():
        params = params[keep]
        mae = float(np.mean(np.abs(target - problem.predict(params))))
    return FittedBlock(
        params=params,
        mae=mae,
        sample_count=len(target),
        converged=bool(mae <= cfg.mae_tolerance and not failed),
        iterations=iterations,
    )
