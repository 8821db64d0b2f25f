"""Analytic synthetic scenes: surface sampling, exact distance, and ray casting.

Scene files hold one directive per line; ``#`` starts a comment::

    density 100            # samples per square meter
    seed 0                 # used only when noise > 0
    noise 0.0              # isotropic Gaussian point noise (m)
    sphere   cx cy cz r
    box      xmin ymin zmin xmax ymax zmax      # all six faces
    plane    cx cy cz nx ny nz half_u half_v    # finite rectangle
    cylinder cx cy r zmin zmax                  # vertical, lateral surface only
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_EPS = 1e-9


def _grid_1d(length: float, spacing: float) -> np.ndarray:
    n = max(1, int(round(length / spacing)))
    return (np.arange(n) + 0.5) * (length / n)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def area(self) -> float:
        return 4.0 * math.pi * self.radius**2

    def sample(self, density: float) -> np.ndarray:
        n = max(1, int(round(self.area() * density)))
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        phi = i * math.pi * (3.0 - math.sqrt(5.0))
        r = np.sqrt(1.0 - z * z)
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * dirs

    def distance(self, x: np.ndarray) -> np.ndarray:
        return np.abs(np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius)

    def raycast(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        oc = o - np.asarray(self.center)
        b = np.einsum("ij,ij->i", oc, d)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - c
        t = np.full(len(o), np.inf)
        ok = disc >= 0
        s = np.sqrt(np.where(ok, disc, 0.0))
        t1, t2 = -b - s, -b + s
        t = np.where(ok & (t1 > _EPS), t1, t)
        t = np.where(ok & (t1 <= _EPS) & (t2 > _EPS), t2, t)
        return t


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def area(self) -> float:
        a, b, c = np.subtract(self.hi, self.lo)
        return 2.0 * (a * b + b * c + a * c)

    def sample(self, density: float) -> np.ndarray:
        h = 1.0 / math.sqrt(density)
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        out = []
        for axis in range(3):
            u, v = [j for j in range(3) if j != axis]
            gu = lo[u] + _grid_1d(hi[u] - lo[u], h)
            gv = lo[v] + _grid_1d(hi[v] - lo[v], h)
            U, V = np.meshgrid(gu, gv, indexing="ij")
            for level in (lo[axis], hi[axis]):
                p = np.empty((U.size, 3))
                p[:, axis] = level
                p[:, u] = U.ravel()
                p[:, v] = V.ravel()
                out.append(p)
        return np.vstack(out)

    def distance(self, x: np.ndarray) -> np.ndarray:
        c = 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))
        h = 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))
        q = np.abs(x - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = -np.max(q, axis=-1)
        return np.where(np.any(q > 0, axis=-1), outside, inside)

    def raycast(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t0 = (np.asarray(self.lo) - o) * inv
            t1 = (np.asarray(self.hi) - o) * inv
        tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
        tmax = np.where(np.isnan(t0), np.inf, np.maximum(t0, t1))
        near = tmin.max(axis=1)
        far = tmax.min(axis=1)
        hit = near <= far
        t = np.full(len(o), np.inf)
        t = np.where(hit & (near > _EPS), near, t)
        t = np.where(hit & (near <= _EPS) & (far > _EPS), far, t)
        return t


@dataclass(frozen=True)
class Plane:
    """Finite rectangle centered at ``center`` with unit ``normal``."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    half_u: float
    half_v: float

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = np.asarray(self.normal, float)
        n = n / np.linalg.norm(n)
        ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(n, ref)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u), n

    def area(self) -> float:
        return 4.0 * self.half_u * self.half_v

    def sample(self, density: float) -> np.ndarray:
        h = 1.0 / math.sqrt(density)
        u, v, _ = self.basis()
        gu = _grid_1d(2 * self.half_u, h) - self.half_u
        gv = _grid_1d(2 * self.half_v, h) - self.half_v
        U, V = np.meshgrid(gu, gv, indexing="ij")
        return np.asarray(self.center) + U.reshape(-1, 1) * u + V.reshape(-1, 1) * v

    def distance(self, x: np.ndarray) -> np.ndarray:
        u, v, n = self.basis()
        r = x - np.asarray(self.center)
        du = np.maximum(np.abs(r @ u) - self.half_u, 0.0)
        dv = np.maximum(np.abs(r @ v) - self.half_v, 0.0)
        return np.sqrt(du * du + dv * dv + (r @ n) ** 2)

    def raycast(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        u, v, n = self.basis()
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((np.asarray(self.center) - o) @ n) / denom
        hit_p = o + np.nan_to_num(t, posinf=0.0, neginf=0.0)[:, None] * d
        r = hit_p - np.asarray(self.center)
        inside = (np.abs(r @ u) <= self.half_u) & (np.abs(r @ v) <= self.half_v)
        ok = (np.abs(denom) > 1e-12) & (t > _EPS) & inside
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Cylinder:
    """Vertical tube (no caps)."""

    cx: float
    cy: float
    radius: float
    zmin: float
    zmax: float

    def area(self) -> float:
        return 2.0 * math.pi * self.radius * (self.zmax - self.zmin)

    def sample(self, density: float) -> np.ndarray:
        h = 1.0 / math.sqrt(density)
        th = _grid_1d(2 * math.pi, h / self.radius)
        z = self.zmin + _grid_1d(self.zmax - self.zmin, h)
        T, Z = np.meshgrid(th, z, indexing="ij")
        return np.stack(
            [self.cx + self.radius * np.cos(T.ravel()), self.cy + self.radius * np.sin(T.ravel()), Z.ravel()],
            axis=1,
        )

    def distance(self, x: np.ndarray) -> np.ndarray:
        rho = np.hypot(x[..., 0] - self.cx, x[..., 1] - self.cy)
        dz = np.maximum(np.maximum(self.zmin - x[..., 2], x[..., 2] - self.zmax), 0.0)
        return np.hypot(rho - self.radius, dz)

    def raycast(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        ox, oy = o[:, 0] - self.cx, o[:, 1] - self.cy
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = ox * d[:, 0] + oy * d[:, 1]
        c = ox * ox + oy * oy - self.radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = b * b - a * c
            s = np.sqrt(np.where(disc >= 0, disc, 0.0))
            roots = [(-b - s) / a, (-b + s) / a]
        t = np.full(len(o), np.inf)
        for root in reversed(roots):
            z = o[:, 2] + root * d[:, 2]
            ok = (a > 1e-15) & (disc >= 0) & (root > _EPS) & (z >= self.zmin) & (z <= self.zmax)
            t = np.where(ok, root, t)
        return t


Primitive = Sphere | Box | Plane | Cylinder


@dataclass
class Scene:
    primitives: list = field(default_factory=list)
    density: float = 100.0
    seed: int = 0
    noise: float = 0.0

    def points(self) -> np.ndarray:
        if not self.primitives:
            raise ValueError("scene has no primitives")
        pts = np.vstack([p.sample(self.density) for p in self.primitives])
        if self.noise > 0:
            rng = np.random.default_rng(self.seed)
            pts = pts + rng.normal(scale=self.noise, size=pts.shape)
        return pts

    def distance(self, x) -> np.ndarray:
        """Exact unsigned distance from ``x`` (..., 3) to the nearest surface."""
        x = np.asarray(x, dtype=float)
        return np.min(np.stack([p.distance(x) for p in self.primitives]), axis=0)

    def raycast(self, origins, directions) -> np.ndarray:
        """Distance along each unit ray to the first surface hit (``inf`` on a miss)."""
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        o = np.broadcast_to(o, d.shape)
        return np.min(np.stack([p.raycast(o, d) for p in self.primitives]), axis=0)


def generate_scene(spec) -> np.ndarray:
    """Surface samples of a :class:`Scene` or scene-file text."""
    scene = spec if isinstance(spec, Scene) else parse_scene(spec)
    return scene.points()


def parse_scene(text: str) -> Scene:
    scene = Scene()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        try:
            vals = [float(a) for a in args]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric argument in {raw!r}") from None
        expect = {"density": 1, "seed": 1, "noise": 1, "sphere": 4, "box": 6, "plane": 8, "cylinder": 5}
        if word not in expect:
            raise ValueError(f"line {lineno}: unknown directive {word!r}")
        if len(vals) != expect[word]:
            raise ValueError(f"line {lineno}: {word} takes {expect[word]} numbers, got {len(vals)}")
        bad = {
            "density": lambda v: v[0] <= 0,
            "noise": lambda v: v[0] < 0,
            "sphere": lambda v: v[3] <= 0,
            "box": lambda v: not all(lo < hi for lo, hi in zip(v[:3], v[3:])),
            "plane": lambda v: v[6] <= 0 or v[7] <= 0 or not any(v[3:6]),
            "cylinder": lambda v: v[2] <= 0 or v[3] >= v[4],
        }.get(word)
        if bad is not None and bad(vals):
            raise ValueError(f"line {lineno}: degenerate {word} {' '.join(args)}")
        if word == "density":
            scene.density = vals[0]
        elif word == "seed":
            scene.seed = int(vals[0])
        elif word == "noise":
            scene.noise = vals[0]
        elif word == "sphere":
            scene.primitives.append(Sphere(tuple(vals[:3]), vals[3]))
        elif word == "box":
            scene.primitives.append(Box(tuple(vals[:3]), tuple(vals[3:])))
        elif word == "plane":
            scene.primitives.append(Plane(tuple(vals[:3]), tuple(vals[3:6]), vals[6], vals[7]))
        else:
            scene.primitives.append(Cylinder(*vals))
    if not scene.primitives:
        raise ValueError("scene spec is empty")
    return scene


def load_scene(path) -> Scene:
    return parse_scene(Path(path).read_text())


def sphere_scene(radius: float = 5.0, density: float = 100.0, center=(0.0, 0.0, 0.0)) -> Scene:
    return Scene([Sphere(tuple(center), radius)], density=density)


def box_room_scene(density: float = 100.0) -> Scene:
    """Closed room with a crate and a pillar; the default registration testbed."""
    return Scene(
        [
            Box((-3.02, -2.43, -0.27), (3.38, 2.61, 2.36)),
            Box((0.63, 0.57, -0.27), (1.78, 1.48, 0.71)),
            Cylinder(-2.05, -1.55, 0.31, -0.27, 2.36),
        ],
        density=density,
    )
