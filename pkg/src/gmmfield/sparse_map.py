"""Block-sparse Gaussian distance map: build pipeline and blended queries."""
from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np
from scipy.spatial import cKDTree

from . import _backend
from .edt import exact_edt, find_extrema, voxelize_region
from .field import EXP_CUTOFF, FieldSample
from .fitter import ConfigError, FitConfig, FittedBlock, fit_block

log = logging.getLogger(__name__)

_KEY_BITS = 21
_KEY_OFFSET = 1 << 20
_KEY_MASK = (1 << _KEY_BITS) - 1


def pack_key(idx) -> np.ndarray | int:
    """Pack integer block indices (..., 3) into one int64 per block."""
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(np.abs(idx) >= _KEY_OFFSET):
        raise ValueError("block index outside the +-2^20 hashable range")
    u = idx + _KEY_OFFSET
    key = (u[..., 0] << (2 * _KEY_BITS)) | (u[..., 1] << _KEY_BITS) | u[..., 2]
    return int(key) if key.ndim == 0 else key


def unpack_key(key) -> np.ndarray:
    key = np.asarray(key, dtype=np.int64)
    return np.stack(
        [(key >> (2 * _KEY_BITS)) & _KEY_MASK, (key >> _KEY_BITS) & _KEY_MASK, key & _KEY_MASK], axis=-1
    ) - _KEY_OFFSET


def f32(x):
    """Round to the nearest float32 value, kept as float64."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass
class MapConfig:
    block_size: float = 1.0
    overlap_margin: float = 0.25
    activation_distance: float = 1.5
    edt_voxel_size: float = 0.1
    halo: float | None = None  # None: wide enough that every fit sample sees its nearest point
    fit: FitConfig = field(default_factory=FitConfig)

    def validate(self) -> None:
        if not self.block_size > 0:
            raise ConfigError("map.block_size must be > 0")
        if not (0 < self.overlap_margin < self.block_size / 2):
            raise ConfigError(
                f"map.overlap_margin must satisfy 0 < delta < block_size/2 "
                f"(got delta={self.overlap_margin}, block_size={self.block_size})"
            )
        if self.activation_distance < self.block_size / 2:
            raise ConfigError("map.activation_distance must be >= block_size/2")
        if not self.edt_voxel_size > 0:
            raise ConfigError("map.edt_voxel_size must be > 0")
        if self.halo is not None and self.halo < 0:
            raise ConfigError("map.halo must be >= 0")
        self.fit.validate()

    def effective_halo(self) -> float:
        if self.halo is not None:
            return self.halo
        reach = (0.5 * self.block_size + self.overlap_margin) * math.sqrt(3.0)
        return self.activation_distance + reach


@dataclass
class FieldBatch:
    """Vectorized query results; indexing yields :class:`FieldSample`."""

    values: np.ndarray
    gradients: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i) -> FieldSample:
        return FieldSample(float(self.values[i]), self.gradients[i].copy(), bool(self.valid[i]))

    def __iter__(self) -> Iterator[FieldSample]:
        return (self[i] for i in range(len(self)))


class SparseGmmMap:
    """Immutable block hash of fitted kernel sets.

    Parameters are held at float32 precision so a saved and reloaded map
    answers queries bit-identically.
    """

    def __init__(
        self,
        config: MapConfig,
        blocks: dict[tuple[int, int, int], FittedBlock],
        bounds: np.ndarray | None = None,
        global_mae: float | None = None,
    ):
        config = replace(config, block_size=float(f32(config.block_size)), overlap_margin=float(f32(config.overlap_margin)))
        self.config = config
        self.blocks: dict[tuple[int, int, int], FittedBlock] = {}
        for idx, blk in blocks.items():
            self.blocks[tuple(int(i) for i in idx)] = replace(blk, params=f32(blk.params).reshape(-1, 7), mae=float(f32(blk.mae)))
        if global_mae is None:
            n = sum(b.sample_count for b in self.blocks.values())
            global_mae = sum(b.mae * b.sample_count for b in self.blocks.values()) / n if n else 0.0
        self.global_mae = float(f32(global_mae))
        if bounds is None:
            bounds = self._block_bounds()
        self.bounds = f32(bounds).reshape(2, 3)
        self._pack()

    # -- construction helpers -------------------------------------------------
    def _block_bounds(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros((2, 3))
        idx = np.array(list(self.blocks), dtype=float)
        b = self.config.block_size
        return np.stack([idx.min(axis=0) * b, (idx.max(axis=0) + 1) * b])

    def _pack(self) -> None:
        keys = np.array([pack_key(i) for i in self.blocks], dtype=np.int64)
        order = np.argsort(keys, kind="stable")
        idx_list = list(self.blocks)
        self._keys = keys[order]
        self._indices = [idx_list[i] for i in order]
        self._origins = np.ascontiguousarray(
            np.array(self._indices, dtype=float).reshape(-1, 3) * self.config.block_size
        )
        counts = np.array([len(self.blocks[i]) for i in self._indices], dtype=np.int64)
        self._kstart = np.ascontiguousarray(np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        if len(self._indices):
            self._params = np.ascontiguousarray(np.vstack([self.blocks[i].params for i in self._indices]))
        else:
            self._params = np.zeros((0, 7))

    # -- introspection -----------------------------------------------------------
    @property
    def block_size(self) -> float:
        return self.config.block_size

    @property
    def overlap_margin(self) -> float:
        return self.config.overlap_margin

    @property
    def total_kernels(self) -> int:
        return int(self._kstart[-1])

    def __len__(self) -> int:
        return len(self.blocks)

    def sorted_blocks(self) -> list[tuple[tuple[int, int, int], FittedBlock]]:
        return [(i, self.blocks[i]) for i in self._indices]

    @property
    def flagged_blocks(self) -> list[tuple[int, int, int]]:
        return [i for i in self._indices if not self.blocks[i].converged]

    # -- queries -----------------------------------------------------------------
    def _slots(self, xs: np.ndarray) -> np.ndarray:
        b, delta = self.config.block_size, self.config.overlap_margin
        base = np.floor(xs / b).astype(np.int64)
        frac = xs - base * b
        nb = np.where(frac < delta, -1, np.where(frac > b - delta, 1, 0))
        slots = np.full((len(xs), 8), -1, dtype=np.int64)
        if not len(self._keys):
            return slots
        for s, combo in enumerate(itertools.product((0, 1), repeat=3)):
            c = np.array(combo)
            usable = np.all((c == 0) | (nb != 0), axis=1)
            if not usable.any():
                continue
            idx = base + c * nb
            inrange = usable & np.all(np.abs(idx) < _KEY_OFFSET, axis=1)
            keys = pack_key(np.where(inrange[:, None], idx, 0))
            pos = np.searchsorted(self._keys, keys)
            pos_c = np.minimum(pos, len(self._keys) - 1)
            hit = inrange & (self._keys[pos_c] == keys)
            slots[hit, s] = pos_c[hit]
        # Only points inside an active cube are valid. In the outer margin band
        # all covering weights can vanish together, so the normalized blend has
        # an unbounded gradient there; with the floor cube present the weight
        # sum stays >= 1/8.
        slots[slots[:, 0] < 0] = -1
        return slots

    def query_batch(self, xs) -> FieldBatch:
        xs = np.ascontiguousarray(np.asarray(xs, dtype=float).reshape(-1, 3))
        if len(xs) == 0:
            return FieldBatch(np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=bool))
        slots = self._slots(xs)
        val, grad, valid = _backend.blend_eval(
            xs, slots, self._origins, self._kstart, self._params,
            self.config.block_size, self.config.overlap_margin, EXP_CUTOFF,
        )
        return FieldBatch(np.asarray(val), np.asarray(grad), np.asarray(valid).astype(bool))

    def query(self, x) -> FieldSample:
        return self.query_batch(np.asarray(x, dtype=float).reshape(1, 3))[0]

    def block_weights(self, x) -> dict[tuple[int, int, int], float]:
        """Normalized blending weight of every block whose domain holds ``x``."""
        from .field import smoothstep

        x = np.asarray(x, dtype=float)
        b, delta = self.config.block_size, self.config.overlap_margin
        raw = {}
        for s in self._slots(x.reshape(1, 3))[0]:
            if s < 0:
                continue
            o = self._origins[s]
            t_lo = (x - (o - delta)) / (2 * delta)
            t_hi = ((o + b + delta) - x) / (2 * delta)
            w = float(np.prod(smoothstep(t_lo) * smoothstep(t_hi)))
            if w > 0:
                raw[self._indices[s]] = w
        total = sum(raw.values())
        return {k: v / total for k, v in raw.items()}


# -- build pipeline -------------------------------------------------------------


@dataclass
class BuildReport:
    block_count: int
    total_kernels: int
    global_mae: float
    flagged: int
    seconds: float


def active_blocks(points: np.ndarray, cfg: MapConfig) -> list[tuple[int, int, int]]:
    """Cubes holding a point, plus empty cubes whose center lies within ``activation_distance``."""
    b = cfg.block_size
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    occupied = np.unique(np.floor(pts / b).astype(np.int64), axis=0)
    reach = int(math.ceil(cfg.activation_distance / b + 0.5))
    offs = np.array(list(itertools.product(range(-reach, reach + 1), repeat=3)), dtype=np.int64)
    cand = np.unique((occupied[:, None, :] + offs[None, :, :]).reshape(-1, 3), axis=0)
    occ_keys = set(map(tuple, occupied.tolist()))
    tree = cKDTree(pts)
    dist, _ = tree.query((cand + 0.5) * b)
    chosen = [
        tuple(int(v) for v in c)
        for c, d in zip(cand, dist)
        if tuple(c.tolist()) in occ_keys or d <= cfg.activation_distance
    ]
    chosen.sort(key=lambda i: pack_key(i))
    return chosen


def _voxel_centroids(points: np.ndarray, v: float) -> np.ndarray:
    idx = np.floor(points / v).astype(np.int64)
    _, inv, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, points)
    return sums / counts[:, None]


def fit_cube(idx, points: np.ndarray, cfg: MapConfig) -> FittedBlock:
    """Voxelize, EDT, and fit one cube over its domain expanded by the overlap margin."""
    b, v = cfg.block_size, cfg.edt_voxel_size
    halo = cfg.effective_halo()
    origin = np.asarray(idx, dtype=float) * b
    lo_box, hi_box = origin - halo - v, origin + b + halo + v
    near = points[np.all((points >= lo_box) & (points < hi_box), axis=1)]
    grid = voxelize_region(near, origin, b, halo, v)
    n_halo = int(math.ceil(halo / v - 1e-9))
    n_core = int(math.ceil(b / v - 1e-9))
    m = min(n_halo, int(math.ceil(cfg.overlap_margin / v - 1e-9)))
    lo = np.full(3, n_halo - m)
    local = exact_edt(grid, cap=cfg.activation_distance, region=(lo, lo + n_core + 2 * m))
    core = grid.occupied[n_halo : n_halo + n_core, n_halo : n_halo + n_core, n_halo : n_halo + n_core]
    extrema = find_extrema(local)
    return fit_block(local, extrema, cfg.fit, block_size=b, empty=not bool(core.any()))


def _fit_many(args):
    indices, points, cfg = args
    return [fit_cube(i, points, cfg) for i in indices]


def build_map(
    points,
    cfg: MapConfig | None = None,
    *,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> SparseGmmMap:
    """Select active cubes, fit each one independently, and assemble the map."""
    cfg = cfg or MapConfig()
    cfg.validate()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("build_map needs at least one point")
    t0 = time.perf_counter()
    indices = active_blocks(pts, cfg)
    centroids = _voxel_centroids(pts, cfg.edt_voxel_size)
    blocks: dict[tuple[int, int, int], FittedBlock] = {}
    if workers > 1 and len(indices) > 1:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk, fitted in zip(chunks, pool.map(_fit_many, [(c, centroids, cfg) for c in chunks])):
                blocks.update(zip(chunk, fitted))
    else:
        for n, idx in enumerate(indices):
            blocks[idx] = fit_cube(idx, centroids, cfg)
            if progress:
                progress(n + 1, len(indices))
    m = SparseGmmMap(cfg, blocks)
    m.build_report = BuildReport(len(m), m.total_kernels, m.global_mae, len(m.flagged_blocks), time.perf_counter() - t0)
    if m.flagged_blocks:
        log.warning("%d of %d blocks did not reach the MAE tolerance", len(m.flagged_blocks), len(m))
    return m


# -- evaluation -------------------------------------------------------------------


@dataclass
class ReconstructionMetrics:
    mae: float
    median: float
    std: float
    grad_mean: float
    grad_std: float
    probes: int
    trimmed: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def probe_grid(bounds: np.ndarray, step: float) -> np.ndarray:
    axes = [np.arange(bounds[0, j] + 0.5 * step, bounds[1, j], step) for j in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def eval_reconstruction(
    gmap: SparseGmmMap,
    truth_points=None,
    probe_step: float = 0.3,
    outlier_trim: float = 1e-4,
    *,
    truth_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    grad_min_distance: float = 0.0,
) -> ReconstructionMetrics:
    """Distance error and gradient-norm statistics on a uniform probe lattice.

    Truth is the nearest-neighbor distance to ``truth_points`` or, when given,
    ``truth_fn(probes)``. The largest ``outlier_trim`` fraction of absolute
    errors is dropped before computing statistics.
    """
    if probe_step <= 0:
        raise ConfigError("probe_step must be > 0")
    if not 0 <= outlier_trim < 1:
        raise ConfigError("outlier_trim must be in [0, 1)")
    probes = probe_grid(gmap.bounds, probe_step)
    res = gmap.query_batch(probes)
    probes = probes[res.valid]
    if len(probes) == 0:
        raise ValueError("no probe falls inside the mapped domain")
    if truth_fn is not None:
        truth = np.asarray(truth_fn(probes), dtype=float)
    else:
        pts = np.asarray(truth_points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("truth_points is empty")
        truth, _ = cKDTree(pts).query(probes)
    est = res.values[res.valid]
    gnorm = np.linalg.norm(res.gradients[res.valid], axis=1)
    err = np.abs(est - truth)
    n_trim = int(math.floor(outlier_trim * len(err)))
    keep = np.argsort(err, kind="stable")[: len(err) - n_trim]
    err, gnorm, truth = err[keep], gnorm[keep], truth[keep]
    gsel = gnorm[truth >= grad_min_distance]
    return ReconstructionMetrics(
        mae=float(err.mean()),
        median=float(np.median(err)),
        std=float(err.std()),
        grad_mean=float(gsel.mean()) if len(gsel) else float("nan"),
        grad_std=float(gsel.std()) if len(gsel) else float("nan"),
        probes=int(len(err)),
        trimmed=n_trim,
    )
