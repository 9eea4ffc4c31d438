"""VSSC semantic grid files.

Layout, little-endian::

    magic        b"VSSC"
    version      u16
    dims         3 x u16  (nx, ny, nz)
    voxel size   3 x f32
    origin       3 x f32
    label table  u8 count, then count NUL-terminated names
    payload      (label u8, run u32) pairs, run-length over x-fastest order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedError, VersionError
from .voxelgrid import GridSpec, SemanticGrid, SemanticLabel

VSSC_MAGIC = b"VSSC"
VSSC_VERSION = 1
_FIXED = struct.Struct("<4sH3H3f3f")
RUN_DTYPE = np.dtype([("label", "u1"), ("run", "<u4")])


def _f32_value(v: float) -> float:
    # shortest decimal that round-trips the f32, so 0.4 comes back as 0.4
    return float(str(np.float32(v)))


def run_length_encode(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = np.asarray(flat).ravel()
    if flat.size == 0:
        return flat[:0], np.zeros(0, dtype=np.int64)
    starts = np.concatenate([[0], np.flatnonzero(np.diff(flat)) + 1])
    runs = np.diff(np.concatenate([starts, [flat.size]]))
    return flat[starts], runs


def grid_to_bytes(g: SemanticGrid) -> bytes:
    spec = g.spec
    head = _FIXED.pack(VSSC_MAGIC, VSSC_VERSION, *spec.dims, *spec.voxel_size, *spec.origin)
    names = [lab.name.encode() + b"\0" for lab in SemanticLabel]
    table = struct.pack("<B", len(names)) + b"".join(names)
    values, runs = run_length_encode(g.labels)
    rec = np.empty(len(values), dtype=RUN_DTYPE)
    rec["label"] = values
    rec["run"] = runs
    return head + table + rec.tobytes()


def grid_from_bytes(buf: bytes) -> SemanticGrid:
    if len(buf) < 4 or buf[:4] != VSSC_MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}", 0)
    if len(buf) < _FIXED.size:
        raise TruncatedError("truncated VSSC header", len(buf))
    _, version, nx, ny, nz, vx, vy, vz, ox, oy, oz = _FIXED.unpack_from(buf)
    if version != VSSC_VERSION:
        raise VersionError(f"unsupported VSSC version {version}", 4)
    pos = _FIXED.size
    if pos >= len(buf):
        raise TruncatedError("missing label table", pos)
    n_names = buf[pos]
    pos += 1
    names = []
    for _ in range(n_names):
        end = buf.find(b"\0", pos)
        if end < 0:
            raise TruncatedError("unterminated label name", pos)
        names.append(buf[pos:end].decode())
        pos = end + 1
    expected = [lab.name for lab in SemanticLabel]
    if names != expected[: len(names)]:
        raise FormatError(f"label table {names} does not match {expected}", _FIXED.size)

    spec = GridSpec(
        (_f32_value(ox), _f32_value(oy), _f32_value(oz)),
        (_f32_value(vx), _f32_value(vy), _f32_value(vz)),
        (nx, ny, nz),
    )
    payload = len(buf) - pos
    n_pairs = payload // RUN_DTYPE.itemsize
    rec = np.frombuffer(buf, dtype=RUN_DTYPE, count=n_pairs, offset=pos)
    total = int(rec["run"].sum(dtype=np.int64))
    if total < spec.size:
        raise TruncatedError(
            f"run-length payload covers {total} of {spec.size} voxels", pos + n_pairs * RUN_DTYPE.itemsize
        )
    if payload % RUN_DTYPE.itemsize:
        raise TruncatedError("partial run-length pair", pos + n_pairs * RUN_DTYPE.itemsize)
    if total > spec.size:
        raise FormatError(f"run-length payload covers {total} voxels, grid has {spec.size}", pos)
    if n_pairs and rec["label"].max() >= max(n_names, 1):
        bad = int(np.argmax(rec["label"] >= n_names))
        raise FormatError("label outside label table", pos + bad * RUN_DTYPE.itemsize)
    flat = np.repeat(rec["label"], rec["run"].astype(np.int64))
    return SemanticGrid(spec, flat.reshape(spec.shape))


def save_grid(g: SemanticGrid, path) -> None:
    Path(path).write_bytes(grid_to_bytes(g))


def load_grid(path) -> SemanticGrid:
    return grid_from_bytes(Path(path).read_bytes())
