"""Binary ``.bin`` map format. The byte layout is documented in FORMAT.md."""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO

import numpy as np

from .fitter import FittedBlock
from .sparse_map import MapConfig, SparseGmmMap

MAGIC = b"GEDF"
VERSION = 1

HEADER = struct.Struct("<4sH3f6fI")
RECORD = struct.Struct("<3iHfB")
KERNEL_BYTES = 7 * 4
FLAG_CONVERGED = 0x01


class MapFormatError(ValueError):
    """Base class for malformed map files."""


class BadMagicError(MapFormatError):
    pass


class UnsupportedVersionError(MapFormatError):
    pass


class TruncatedStreamError(MapFormatError):
    pass


class TruncatedBlockError(TruncatedStreamError):
    def __init__(self, ordinal: int, index=None):
        where = f"block #{ordinal}" + (f" at index {tuple(index)}" if index is not None else "")
        super().__init__(f"truncated block record: {where}")
        self.ordinal = ordinal
        self.index = index


class InvalidKernelError(MapFormatError):
    pass


def expected_size(block_count: int, total_kernels: int) -> int:
    return HEADER.size + RECORD.size * block_count + KERNEL_BYTES * total_kernels


def encode(gmap: SparseGmmMap) -> bytes:
    bounds = np.asarray(gmap.bounds, dtype=np.float32).reshape(6)
    out = [
        HEADER.pack(
            MAGIC, VERSION, gmap.block_size, gmap.overlap_margin, gmap.global_mae, *bounds.tolist(), len(gmap)
        )
    ]
    for idx, blk in gmap.sorted_blocks():
        flags = FLAG_CONVERGED if blk.converged else 0
        out.append(RECORD.pack(*idx, len(blk), blk.mae, flags))
        out.append(np.ascontiguousarray(blk.params, dtype="<f4").tobytes())
    return b"".join(out)


def save_map(gmap: SparseGmmMap, sink: BinaryIO | str | os.PathLike) -> int:
    """Write ``gmap`` and return the number of bytes written."""
    data = encode(gmap)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return len(data)


def _read_exact(src: BinaryIO, n: int) -> bytes:
    buf = src.read(n)
    return buf if buf is not None else b""


def decode(data: bytes) -> SparseGmmMap:
    return load_map(io.BytesIO(data))


def load_map(source: BinaryIO | str | os.PathLike | bytes) -> SparseGmmMap:
    if isinstance(source, (bytes, bytearray)):
        return decode(bytes(source))
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return load_map(fh)
    head = _read_exact(source, HEADER.size)
    if len(head) >= 4 and head[:4] != MAGIC:
        raise BadMagicError(f"not a map file: magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) < HEADER.size:
        raise TruncatedStreamError(f"truncated header: {len(head)} of {HEADER.size} bytes")
    magic, version, block_size, overlap, global_mae, *rest = HEADER.unpack(head)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported map version {version} (reader supports {VERSION})")
    bounds = np.array(rest[:6], dtype=np.float64).reshape(2, 3)
    count = rest[6]
    blocks = {}
    for n in range(count):
        raw = _read_exact(source, RECORD.size)
        if len(raw) < RECORD.size:
            raise TruncatedBlockError(n)
        ix, iy, iz, k, mae, flags = RECORD.unpack(raw)
        if k == 0:
            raise MapFormatError(f"block {(ix, iy, iz)} stores zero kernels")
        payload = _read_exact(source, k * KERNEL_BYTES)
        if len(payload) < k * KERNEL_BYTES:
            raise TruncatedBlockError(n, (ix, iy, iz))
        params = np.frombuffer(payload, dtype="<f4").reshape(k, 7).astype(np.float64)
        if not np.all(params[:, 4:7] > 0):
            raise InvalidKernelError(f"block {(ix, iy, iz)} has a non-positive length scale")
        blocks[(ix, iy, iz)] = FittedBlock(params, float(mae), 0, bool(flags & FLAG_CONVERGED))
    cfg = MapConfig(block_size=float(block_size), overlap_margin=float(overlap))
    return SparseGmmMap(cfg, blocks, bounds=bounds, global_mae=float(global_mae))
