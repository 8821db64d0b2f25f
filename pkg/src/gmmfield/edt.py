"""Local voxel grids, their exact Euclidean distance transform, and NMS extrema."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend


@dataclass
class OccupancyGrid:
    """Boolean voxel grid; ``origin`` is the world position of voxel (0, 0, 0)'s center."""

    occupied: np.ndarray
    origin: np.ndarray
    voxel_size: float
    centroids: np.ndarray | None = None  # (n0, n1, n2, 3), nan where free

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.occupied.shape)


@dataclass
class LocalEdtGrid:
    """Dense distance samples at voxel centers.

    ``distances`` is the exact EDT between voxel centers. ``surface_distances``
    measures from each voxel center to the point centroid of its nearest
    occupied voxel, which removes the half-voxel quantization bias.
    """

    origin: np.ndarray
    voxel_size: float
    distances: np.ndarray
    surface_distances: np.ndarray | None = None
    occupied: np.ndarray | None = field(default=None, repr=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.distances.shape)

    @property
    def targets(self) -> np.ndarray:
        """Regression targets: surface distances when available."""
        return self.distances if self.surface_distances is None else self.surface_distances

    def centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, C order, shape (N, 3)."""
        axes = [self.origin[j] + self.voxel_size * np.arange(self.dims[j]) for j in range(3)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)

    def index_to_world(self, idx) -> np.ndarray:
        return self.origin + self.voxel_size * np.asarray(idx, dtype=float)

    def crop(self, lo, hi) -> "LocalEdtGrid":
        """Sub-grid ``[lo, hi)`` in voxel indices."""
        sl = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
        return LocalEdtGrid(
            origin=self.index_to_world(lo),
            voxel_size=self.voxel_size,
            distances=self.distances[sl].copy(),
            surface_distances=None if self.surface_distances is None else self.surface_distances[sl].copy(),
            occupied=None if self.occupied is None else self.occupied[sl].copy(),
        )


@dataclass
class ExtremaSet:
    maxima: list[tuple[np.ndarray, float]] = field(default_factory=list)
    minima: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.maxima) + len(self.minima)


def voxelize_region(points, cube_origin, cube_size: float, halo: float, voxel_size: float) -> OccupancyGrid:
    """Bin points into a grid covering the cube expanded by ``halo`` on every side."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if halo < 0:
        raise ValueError("halo must be non-negative")
    n_halo = int(math.ceil(halo / voxel_size - 1e-9))
    n_core = int(math.ceil(cube_size / voxel_size - 1e-9))
    n = n_core + 2 * n_halo
    cube_origin = np.asarray(cube_origin, dtype=float)
    lo = cube_origin - n_halo * voxel_size
    occupied = np.zeros((n, n, n), dtype=bool)
    centroids = np.full((n, n, n, 3), np.nan)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts):
        idx = np.floor((pts - lo) / voxel_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < n), axis=1)
        idx, pts = idx[inside], pts[inside]
        if len(idx):
            flat = np.ravel_multi_index(idx.T, (n, n, n))
            uniq, inv, counts = np.unique(flat, return_inverse=True, return_counts=True)
            sums = np.zeros((len(uniq), 3))
            np.add.at(sums, inv, pts)
            occupied.ravel()[uniq] = True
            centroids.reshape(-1, 3)[uniq] = sums / counts[:, None]
    return OccupancyGrid(occupied, lo + 0.5 * voxel_size, float(voxel_size), centroids)


def exact_edt(
    grid: OccupancyGrid,
    voxel_size: float | None = None,
    cap: float = 1.5,
    *,
    region: tuple | None = None,
) -> LocalEdtGrid:
    """Exact EDT of an occupancy grid in meters.

    An all-free grid has no surface to measure from; every voxel gets ``cap``.
    ``region=(lo, hi)`` returns only the voxel sub-range ``[lo, hi)``; the
    transform itself always runs over the whole grid.
    """
    h = grid.voxel_size if voxel_size is None else float(voxel_size)
    occ = np.ascontiguousarray(grid.occupied, dtype=np.uint8)
    lo = np.zeros(3, dtype=np.int64) if region is None else np.asarray(region[0], dtype=np.int64)
    hi = np.array(occ.shape, dtype=np.int64) if region is None else np.asarray(region[1], dtype=np.int64)
    sl = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
    origin = np.asarray(grid.origin, float) + h * lo
    occ_out = grid.occupied[sl].copy()
    if not occ.any():
        full = np.full(occ_out.shape, float(cap))
        return LocalEdtGrid(origin, h, full, full.copy(), occ_out)
    sq, feat = _backend.squared_edt(occ)
    dist = np.sqrt(sq[sl]) * h
    surface = None
    if grid.centroids is not None:
        centers = np.stack(
            np.meshgrid(*[origin[j] + h * np.arange(hi[j] - lo[j]) for j in range(3)], indexing="ij"),
            axis=-1,
        )
        near = grid.centroids.reshape(-1, 3)[feat[sl].ravel()].reshape(centers.shape)
        surface = np.linalg.norm(centers - near, axis=-1)
    return LocalEdtGrid(origin, h, dist, surface, occ_out)


_OFFSETS = [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]


def extrema_masks(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks of strict 26-neighbor maxima/minima (interior voxels only)."""
    n0, n1, n2 = values.shape
    is_max = np.zeros(values.shape, dtype=bool)
    is_min = np.zeros(values.shape, dtype=bool)
    if min(values.shape) < 3:
        return is_max, is_min
    core = values[1:-1, 1:-1, 1:-1]
    mx = np.ones(core.shape, dtype=bool)
    mn = np.ones(core.shape, dtype=bool)
    for dx, dy, dz in _OFFSETS:
        nb = values[1 + dx : n0 - 1 + dx, 1 + dy : n1 - 1 + dy, 1 + dz : n2 - 1 + dz]
        mx &= core > nb
        mn &= core < nb
    is_max[1:-1, 1:-1, 1:-1] = mx
    is_min[1:-1, 1:-1, 1:-1] = mn
    return is_max, is_min


def find_extrema(edt: LocalEdtGrid, *, field: str = "distances") -> ExtremaSet:
    """Strict local extrema of the EDT, reported at voxel centers.

    ``field="targets"`` searches the fit targets (sub-voxel distances when
    present), where occupied voxels are not a flat plateau of zeros and so
    surface minima can be found. ``field="distances"`` uses the voxel EDT.
    """
    values = edt.targets if field == "targets" else edt.distances
    is_max, is_min = extrema_masks(values)
    out = ExtremaSet()
    for idx in np.argwhere(is_max):
        out.maxima.append((edt.index_to_world(idx), float(values[tuple(idx)])))
    for idx in np.argwhere(is_min):
        out.minima.append((edt.index_to_world(idx), float(values[tuple(idx)])))
    return out
