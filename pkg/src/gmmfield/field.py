"""Axis-aligned Gaussian kernels, their sums, and the smoothstep blend."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend

#: Kernels whose exponent falls to ``-EXP_CUTOFF`` or below contribute nothing.
#: The dropped tail is below exp(-20) ~ 2.1e-9 times the kernel weight.
EXP_CUTOFF = 20.0


@dataclass(frozen=True)
class GaussianKernel:
    """One anisotropic, axis-aligned Gaussian: ``w * exp(-0.5 * sum((x - mu)^2 / l^2))``."""

    weight: float
    center: tuple[float, float, float]
    length_scales: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "length_scales", tuple(float(s) for s in self.length_scales))
        if len(self.center) != 3 or len(self.length_scales) != 3:
            raise ValueError("center and length_scales must be 3-vectors")
        if not all(s > 0.0 and math.isfinite(s) for s in self.length_scales):
            raise ValueError(f"length scales must be positive, got {self.length_scales}")
        if not math.isfinite(self.weight) or self.weight == 0.0:
            raise ValueError(f"weight must be finite and nonzero, got {self.weight}")

    def as_row(self) -> np.ndarray:
        return np.array([self.weight, *self.center, *self.length_scales])

    @classmethod
    def from_row(cls, row) -> "GaussianKernel":
        return cls(float(row[0]), tuple(row[1:4]), tuple(row[4:7]))


@dataclass(frozen=True)
class FieldSample:
    """Distance value and gradient at a query point.

    Outside the mapped volume ``valid`` is False and value/gradient are zero.
    """

    value: float
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    valid: bool = True

    @classmethod
    def invalid(cls) -> "FieldSample":
        return cls(0.0, np.zeros(3), False)


def kernels_to_array(kernels: Sequence[GaussianKernel] | np.ndarray) -> np.ndarray:
    """Pack kernels into a ``(K, 7)`` float array ``[w, mx, my, mz, lx, ly, lz]``."""
    if isinstance(kernels, np.ndarray):
        return np.ascontiguousarray(kernels, dtype=float).reshape(-1, 7)
    if len(kernels) == 0:
        return np.zeros((0, 7))
    return np.ascontiguousarray(np.stack([k.as_row() for k in kernels]))


def _exponent(k: GaussianKernel, x) -> float:
    return -0.5 * sum((x[j] - k.center[j]) ** 2 / k.length_scales[j] ** 2 for j in range(3))


def eval_kernel(k: GaussianKernel, x) -> float:
    e = _exponent(k, x)
    if e <= -EXP_CUTOFF:
        return 0.0
    return k.weight * math.exp(e)


def eval_kernel_gradient(k: GaussianKernel, x) -> np.ndarray:
    g = eval_kernel(k, x)
    return np.array([-g * (x[j] - k.center[j]) / k.length_scales[j] ** 2 for j in range(3)])


def eval_mixture(kernels, x) -> tuple[float, np.ndarray]:
    """Sum of kernels and its gradient at one point, in a single pass."""
    params = kernels_to_array(kernels)
    val, grad = _backend.mixture_eval(params, np.asarray(x, dtype=float).reshape(1, 3), EXP_CUTOFF)
    return float(val[0]), grad[0]


def eval_mixture_batch(kernels, xs) -> tuple[np.ndarray, np.ndarray]:
    params = kernels_to_array(kernels)
    xs = np.ascontiguousarray(xs, dtype=float).reshape(-1, 3)
    return _backend.mixture_eval(params, xs, EXP_CUTOFF)


def smoothstep(t):
    """Cubic ``3t^2 - 2t^3`` with the argument clamped to [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    out = t * t * (3.0 - 2.0 * t)
    return float(out) if np.ndim(out) == 0 else out


def smoothstep_derivative(t):
    t = np.asarray(t, dtype=float)
    out = np.where((t > 0.0) & (t < 1.0), 6.0 * t * (1.0 - t), 0.0)
    return float(out) if out.ndim == 0 else out
