"""Timing comparison of the compiled kernels against the numpy fallback."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _backend


@dataclass
class BenchRow:
    kernel: str
    backend: str
    size: str
    seconds: float
    max_abs_diff: float


def _best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _cases(rng: np.random.Generator, scale: int):
    k = 24
    params = np.column_stack(
        [rng.normal(size=k), rng.uniform(-0.5, 0.5, (k, 3)), rng.uniform(0.1, 0.6, (k, 3))]
    )
    pts = rng.uniform(-0.6, 0.6, (4096 * scale, 3))
    occ = rng.random((24, 24, 24)) < 0.02
    occ[12, 12, 12] = True

    # a 2x2x2 block map for the blended query
    B, delta = 1.0, 0.25
    keys = [(i, j, l) for i in range(2) for j in range(2) for l in range(2)]
    origins = np.array(keys, dtype=float) * B
    blk = [np.column_stack([rng.uniform(0.2, 1.0, 6), o + rng.uniform(0, B, (6, 3)), rng.uniform(0.2, 0.6, (6, 3))]) for o in origins]
    kstart = np.concatenate([[0], np.cumsum([len(b) for b in blk])]).astype(np.int64)
    stacked = np.vstack(blk)
    qx = rng.uniform(0.0, 2.0, (2048 * scale, 3))
    slots = np.full((len(qx), 8), -1, dtype=np.int64)
    for n, x in enumerate(qx):
        cand = [s for s, o in enumerate(origins) if np.all(x > o - delta) and np.all(x < o + B + delta)]
        slots[n, : len(cand)] = cand

    yield "mixture_eval", f"K={k} N={len(pts)}", lambda m: m.mixture_eval(params, pts, 20.0)
    yield "mixture_jacobian", f"K={k} N={len(pts)}", lambda m: m.mixture_jacobian(params, pts, 20.0)
    yield "squared_edt", "24^3", lambda m: m.squared_edt(occ)
    yield (
        "blend_eval",
        f"blocks=8 N={len(qx)}",
        lambda m: m.blend_eval(qx, slots, origins, kstart, stacked, B, delta, 20.0),
    )


def _first_array(out) -> np.ndarray:
    return np.asarray(out[0] if isinstance(out, tuple) else out, dtype=float)


def run_benchmark(*, repeat: int = 3, scale: int = 1, seed: int = 0) -> list[BenchRow]:
    """Time each kernel on both backends with identical inputs."""
    backends = ["python"] + (["cython"] if _backend.compiled_available() else [])
    rows = []
    for name, size, call in _cases(np.random.default_rng(seed), scale):
        ref = None
        for b in backends:
            secs, out = _best_of(lambda: call(_backend.get_impl(b)), repeat)
            arr = _first_array(out)
            diff = 0.0 if ref is None else float(np.max(np.abs(arr - ref)))
            ref = arr if ref is None else ref
            rows.append(BenchRow(name, b, size, secs, diff))
    return rows


def format_rows(rows: list[BenchRow]) -> str:
    lines = ["kernel,backend,size,seconds,speedup,max_abs_diff"]
    base = {r.kernel: r.seconds for r in rows if r.backend == "python"}
    for r in rows:
        lines.append(f"{r.kernel},{r.backend},{r.size},{r.seconds:.6f},{base[r.kernel] / r.seconds:.2f},{r.max_abs_diff:.3e}")
    return "\n".join(lines) + "\n"
