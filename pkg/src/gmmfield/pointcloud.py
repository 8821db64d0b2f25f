"""Point cloud, trajectory, IMU and scan file I/O plus voxel downsampling."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass(frozen=True)
class TrajectorySample:
    stamp: float
    position: np.ndarray
    orientation: np.ndarray  # [w, x, y, z]


def voxel_downsample(points, resolution: float) -> np.ndarray:
    """Centroid of each occupied voxel, ordered by ascending packed voxel key."""
    if not resolution > 0:
        raise ValueError("resolution must be > 0")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    idx = np.floor(pts / resolution).astype(np.int64)
    # lexicographic order of (ix, iy, iz) equals packed-key order
    _, inv, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, pts)
    return sums / counts[:, None]


def _floats(fields: list[str], n: int, lineno: int, path) -> list[float]:
    if len(fields) < n:
        raise DataFormatError(f"{path}:{lineno}: expected {n} numbers, got {len(fields)}")
    try:
        return [float(f) for f in fields[:n]]
    except ValueError as exc:
        raise DataFormatError(f"{path}:{lineno}: {exc}") from None


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if s:
                yield lineno, s.replace(",", " ").split()


def _load_ply(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DataFormatError(f"{path}:1: missing 'ply' magic")
    n_vertex, props, in_vertex, end = None, [], False, None
    for lineno, line in enumerate(lines[1:], 2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and (len(tok) < 2 or tok[1] != "ascii"):
            raise DataFormatError(f"{path}:{lineno}: only ASCII PLY is supported")
        elif tok[0] == "element":
            in_vertex = len(tok) >= 3 and tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            end = lineno
            break
    if end is None or n_vertex is None:
        raise DataFormatError(f"{path}: incomplete PLY header")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise DataFormatError(f"{path}: PLY vertex lacks x/y/z properties") from None
    out = np.empty((n_vertex, 3))
    for i in range(n_vertex):
        lineno = end + 1 + i
        if lineno - 1 >= len(lines):
            raise DataFormatError(f"{path}:{lineno}: expected {n_vertex} vertices, file ended")
        fields = lines[lineno - 1].split()
        vals = _floats(fields, len(props), lineno, path)
        out[i] = [vals[c] for c in cols]
    return out


def load_cloud(path) -> np.ndarray:
    """Read an ASCII PLY or whitespace ``x y z`` text file."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(3)
    if head == b"ply":
        return _load_ply(path)
    rows = [_floats(f, 3, n, path) for n, f in _data_lines(path)]
    return np.array(rows, dtype=float).reshape(-1, 3)


def write_cloud(path, points) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        if path.suffix.lower() == ".ply":
            fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(pts)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for p in pts:
            fh.write(" ".join(map(repr, p.tolist())) + "\n")


def load_trajectory(path, *, norm_tol: float = 1e-3) -> list[TrajectorySample]:
    """TUM lines ``stamp x y z qx qy qz qw``; quaternions are renormalized."""
    out = []
    for lineno, fields in _data_lines(path):
        t, x, y, z, qx, qy, qz, qw = _floats(fields, 8, lineno, path)
        q = np.array([qw, qx, qy, qz])
        n = np.linalg.norm(q)
        if abs(n - 1.0) > norm_tol:
            raise DataFormatError(f"{path}:{lineno}: quaternion norm {n:.6f} is not unit")
        out.append(TrajectorySample(t, np.array([x, y, z]), q / n))
    return out


def write_trajectory(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            p, q = s.position, s.orientation
            fh.write(f"{s.stamp:.9f} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f} {q[0]:.9f}\n")


def load_imu(path):
    """Lines ``stamp ax ay az gx gy gz``; stamps must strictly increase."""
    from .eskf import ImuSample

    out = []
    last = -np.inf
    for lineno, fields in _data_lines(path):
        t, ax, ay, az, gx, gy, gz = _floats(fields, 7, lineno, path)
        if not t > last:
            raise DataFormatError(f"{path}:{lineno}: IMU stamps must strictly increase")
        last = t
        out.append(ImuSample(t, np.array([ax, ay, az]), np.array([gx, gy, gz])))
    return out


def write_imu(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            a, g = s.accel, s.gyro
            fh.write(f"{s.stamp:.9f} " + " ".join(f"{v:.12g}" for v in (*a, *g)) + "\n")


def load_scan(path):
    """Scan text file: ``# stamp <t> period <T>`` header, then ``x y z rel_time`` lines."""
    from .synthetic import Scan

    stamp, period = 0.0, 0.1
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                tok = s[1:].split()
                for key, val in zip(tok[::2], tok[1::2]):
                    if key == "stamp":
                        stamp = float(val)
                    elif key == "period":
                        period = float(val)
                continue
            rows.append(_floats(s.split(), 4, lineno, path))
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return Scan(arr[:, :3], arr[:, 3], stamp, period)


def write_scan(path, scan) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# stamp {float(scan.stamp)!r} period {float(scan.period)!r}\n")
        for p, r in zip(scan.points.tolist(), scan.rel_times.tolist()):
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r} {r!r}\n")


def scan_files(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix == ".scan") if d.is_dir() else []


def file_digest(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(os.fspath(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
