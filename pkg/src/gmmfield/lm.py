"""Levenberg-Marquardt for small dense least-squares problems."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg


@dataclass
class LMConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-3
    damping_shrink: float = 0.5
    damping_grow: float = 4.0
    max_damping: float = 1e16
    rel_cost_tol: float = 1e-8
    grad_tol: float = 1e-10
    step_tol: float = 0.0


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    converged: bool
    iterations: int = 0
    accepted_costs: list[float] = field(default_factory=list)
    status: str = ""

    def __iter__(self):
        # allows ``params, cost, converged = lm_solve(...)``
        return iter((self.params, self.cost, self.converged))


def _half_sq(params, r):
    return 0.5 * float(r @ r)


def lm_solve(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], np.ndarray],
    initial_params,
    cfg: LMConfig | None = None,
    *,
    cost_fn: Callable[[np.ndarray, np.ndarray], float] | None = None,
    retract: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> LMResult:
    """Minimize ``cost_fn(x, r(x))`` (default ``0.5 |r|^2``) by damped Gauss-Newton.

    The normal equations use Marquardt scaling ``(J^T J + lambda diag(J^T J)) dx = -J^T r``.
    Accepted steps shrink lambda by ``damping_shrink``, rejected ones grow it
    by ``damping_grow``. ``retract(x, dx)`` applies a step on a manifold or
    under box constraints; plain addition otherwise.
    """
    cfg = cfg or LMConfig()
    cost_fn = cost_fn or _half_sq
    retract = retract or (lambda x, dx: x + dx)

    x = np.array(initial_params, dtype=float)
    r = residual_fn(x)
    cost = cost_fn(x, r)
    result = LMResult(x, cost, False, 0, [cost])
    if cost == 0.0:
        result.converged, result.status = True, "zero residual"
        return result

    lam = cfg.initial_damping
    jac = jacobian_fn(x)
    for it in range(1, cfg.max_iterations + 1):
        result.iterations = it
        g = jac.T @ r
        if np.max(np.abs(g)) < cfg.grad_tol:
            result.converged, result.status = True, "gradient"
            break
        A = jac.T @ jac
        diag = np.diag(A).copy()
        floor = max(diag.max(), 1.0) * 1e-12
        diag = np.maximum(diag, floor)
        accepted = False
        while True:
            try:
                factor = linalg.cho_factor(A + lam * np.diag(diag), check_finite=False)
                step = linalg.cho_solve(factor, -g, check_finite=False)
                ok = bool(np.all(np.isfinite(step)))
            except (linalg.LinAlgError, ValueError):
                ok = False
            if ok:
                x_new = retract(x, step)
                r_new = residual_fn(x_new)
                cost_new = cost_fn(x_new, r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    accepted = True
                    break
                if np.linalg.norm(step) <= 1e-12 * (np.linalg.norm(x) + 1e-12):
                    result.converged, result.status = True, "no progress at machine precision"
                    break
            lam *= cfg.damping_grow
            if lam > cfg.max_damping:
                result.status = "damping limit" if ok else "normal equations failed"
                break
        if not accepted:
            break
        rel = (cost - cost_new) / cost
        step_norm = float(np.linalg.norm(step))
        x, r, cost = x_new, r_new, cost_new
        result.accepted_costs.append(cost)
        lam = max(lam * cfg.damping_shrink, 1e-15)
        if cost == 0.0 or rel < cfg.rel_cost_tol:
            result.converged, result.status = True, "relative cost"
            break
        if step_norm < cfg.step_tol:
            result.converged, result.status = True, "step norm"
            break
        jac = jacobian_fn(x)
    else:
        result.status = "max iterations"
    result.params, result.cost = x, cost
    return result
