"""Per-agent semantic scene completion from a labeled point cloud.

Feature channels per voxel:

    0     log(1 + hit count)
    1     log(1 + free-space pass count)
    2..7  hit counts for Road, Car, Terrain, Building, Vegetation, Pole
    8     mean hit height in the grid frame (0 without hits)

The prediction head is a fixed rule set, not a learned model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import BadMagicError, FormatError, TruncatedError, VersionError
from .pointcloud import LabeledPointCloud
from .voxelgrid import (
    DEFAULT_SPEC,
    PRIORITY_RANK,
    ConfidenceGrid,
    GridSpec,
    SemanticGrid,
    SemanticLabel,
)

N_CHANNELS = 9
CH_HITS, CH_PASSES, CH_HEIGHT = 0, 1, 8
CLASS_CHANNELS = slice(2, 8)
# Channel c in 2..7 holds counts for label c - 1.
CLASS_OF_CHANNEL = np.arange(1, 7, dtype=np.uint8)

VFTG_MAGIC = b"VFTG"
VFTG_VERSION = 1

# absorbs float noise in fused (weighted) hit counts
_HIT_SLACK = 1e-6


@dataclass(eq=False)
class FeatureGrid:
    spec: GridSpec
    data: np.ndarray  # float32, (9, nz, ny, nx)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (N_CHANNELS, *self.spec.shape):
            raise ValueError(f"feature shape {self.data.shape} does not match {self.spec}")

    @classmethod
    def zeros(cls, spec: GridSpec = DEFAULT_SPEC) -> "FeatureGrid":
        return cls(spec, np.zeros((N_CHANNELS, *spec.shape), dtype=np.float32))

    def __eq__(self, other):
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.data, other.data)

    __hash__ = None

    def hits(self) -> np.ndarray:
        return self.data[CLASS_CHANNELS].sum(axis=0, dtype=np.float64)

    def passes(self) -> np.ndarray:
        return np.expm1(self.data[CH_PASSES].astype(np.float64))


@dataclass(frozen=True)
class CompletionConfig:
    ground_radius: int = 3
    vertical_fill: bool = True
    hit_threshold: float = 1.0

    def __post_init__(self):
        if self.ground_radius < 0:
            raise ValueError("ground_radius must be >= 0")
        if self.hit_threshold < 1:
            raise ValueError("hit_threshold must be >= 1")


def traverse_passes(
    origins: np.ndarray, ends: np.ndarray, spec: GridSpec
) -> np.ndarray:
    """Count, per voxel, the rays that cross it before reaching their end voxel.

    3D digital differential analyzer over all rays in lockstep. Each segment
    is first clipped to the grid box; the voxel holding the end point is
    never counted. Returns a flat int64 array of length ``spec.size``.
    """
    counts = np.zeros(spec.size, dtype=np.int64)
    if len(ends) == 0:
        return counts
    lo = np.asarray(spec.origin)
    vs = np.asarray(spec.voxel_size)
    dims = np.asarray(spec.dims)
    hi = lo + dims * vs

    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(ends, dtype=np.float64) - o
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - o) / d
        t1 = (hi - o) / d
    par = d == 0
    inside = (o >= lo) & (o < hi)
    t0 = np.where(par, np.where(inside, -np.inf, np.inf), t0)
    t1 = np.where(par, np.where(inside, np.inf, -np.inf), t1)
    s_in = np.maximum(np.minimum(t0, t1).max(axis=1), 0.0)
    s_out = np.minimum(np.maximum(t0, t1).min(axis=1), 1.0)
    ok = s_in < s_out
    o, d, s_in, s_out = o[ok], d[ok], s_in[ok], s_out[ok]
    end_idx = np.floor((o + d - lo) / vs).astype(np.int64)

    start = o + s_in[:, None] * d
    idx = np.clip(np.floor((start - lo) / vs).astype(np.int64), 0, dims - 1)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = lo + (idx + (step > 0)) * vs
        t_max = np.where(step != 0, (bound - o) / d, np.inf)
        t_delta = np.where(step != 0, vs / np.abs(d), np.inf)

    nx, ny = spec.nx, spec.ny
    while len(idx):
        at_end = np.all(idx == end_idx, axis=1)
        live = ~at_end
        flat = (idx[live, 2] * ny + idx[live, 1]) * nx + idx[live, 0]
        counts += np.bincount(flat, minlength=spec.size)
        axis = np.argmin(t_max, axis=1)
        rows = np.arange(len(idx))
        t_next = t_max[rows, axis]
        idx[rows, axis] += step[rows, axis]
        t_max[rows, axis] += t_delta[rows, axis]
        in_grid = np.all((idx >= 0) & (idx < dims), axis=1)
        keep = live & in_grid & (t_next < s_out)
        if not keep.all():
            idx, end_idx, step = idx[keep], end_idx[keep], step[keep]
            t_max, t_delta, s_out = t_max[keep], t_delta[keep], s_out[keep]
    return counts


def extract_features(
    cloud: LabeledPointCloud,
    sensor_origin=(0.0, 0.0, 0.0),
    spec: GridSpec = DEFAULT_SPEC,
) -> FeatureGrid:
    """Evidence features from a cloud already expressed in the grid frame.

    Rays start at ``cloud.origins`` when the cloud carries them, otherwise
    at ``sensor_origin``.
    """
    n = spec.size
    idx, inside = spec.voxel_indices(cloud.xyz)
    flat = spec.flat_index(*idx[inside].T)
    labels = cloud.labels[inside].astype(np.int64)
    valid = (labels >= 1) & (labels <= 6)
    flat, labels, z = flat[valid], labels[valid], cloud.xyz[inside, 2][valid]

    class_counts = np.bincount(flat * 6 + (labels - 1), minlength=n * 6).reshape(n, 6).T
    hits = class_counts.sum(axis=0)
    zsum = np.bincount(flat, weights=z, minlength=n)

    if cloud.origins is not None:
        origins = cloud.origins
    else:
        origins = np.broadcast_to(np.asarray(sensor_origin, dtype=np.float64), cloud.xyz.shape)
    passes = traverse_passes(origins, cloud.xyz, spec)

    data = np.empty((9, n), dtype=np.float32)
    data[CH_HITS] = np.log1p(hits)
    data[CH_PASSES] = np.log1p(passes)
    data[CLASS_CHANNELS] = class_counts
    with np.errstate(divide="ignore", invalid="ignore"):
        data[CH_HEIGHT] = np.where(hits > 0, zsum / np.maximum(hits, 1), 0.0)
    return FeatureGrid(spec, data.reshape(9, *spec.shape))


def _argmax_by_priority(counts: np.ndarray) -> np.ndarray:
    """Label with the most hits; ties go to the higher-priority class."""
    top = counts.max(axis=0)
    ranks = PRIORITY_RANK[CLASS_OF_CHANNEL].astype(np.int64)[:, None, None, None]
    score = np.where(counts == top, ranks, -1)
    return CLASS_OF_CHANNEL[np.argmax(score, axis=0)]


def predict(f: FeatureGrid, cfg: CompletionConfig = CompletionConfig()) -> tuple[SemanticGrid, ConfidenceGrid]:
    spec = f.spec
    counts = f.data[CLASS_CHANNELS].astype(np.float64)
    hits = counts.sum(axis=0)
    passes = f.passes()
    unobserved = (hits <= 0) & (passes <= 0)

    occupied = hits >= cfg.hit_threshold - _HIT_SLACK
    labels = np.where(occupied, _argmax_by_priority(counts), 0).astype(np.uint8)
    ratio = np.where(occupied, hits, passes) / (hits + passes + 1.0)
    conf = np.where(occupied, ratio, 0.0)

    if cfg.ground_radius > 0:
        _ground_fill(labels, conf, unobserved, cfg.ground_radius)
    if cfg.vertical_fill:
        _vertical_fill(labels, conf, unobserved)

    empty = labels == SemanticLabel.Empty
    conf = np.where(empty, np.where(unobserved, 0.0, ratio), conf)
    return SemanticGrid(spec, labels), ConfidenceGrid(spec, np.clip(conf, 0.0, 1.0))


def _ground_fill(labels, conf, unobserved, radius: int) -> None:
    """Spread Road/Terrain into unobserved voxels of the two lowest layers."""
    for z in range(min(2, labels.shape[0])):
        lab, cf = labels[z], conf[z]
        target = unobserved[z] & (lab == SemanticLabel.Empty)
        if not target.any():
            continue
        road = np.where(lab == SemanticLabel.Road, cf, 0.0)
        terrain = np.where(lab == SemanticLabel.Terrain, cf, 0.0)
        if not (road.any() or terrain.any()):
            continue
        for d in range(1, radius + 1):
            size = 2 * d + 1
            road_near = maximum_filter(road, size=size, mode="constant", cval=0.0)
            terr_near = maximum_filter(terrain, size=size, mode="constant", cval=0.0)
            take_road = target & (road_near > 0)
            take_terr = target & ~take_road & (terr_near > 0)
            lab[take_road] = SemanticLabel.Road
            cf[take_road] = 0.5 * road_near[take_road]
            lab[take_terr] = SemanticLabel.Terrain
            cf[take_terr] = 0.5 * terr_near[take_terr]
            target &= ~(take_road | take_terr)
            if not target.any():
                break


_VERTICAL = np.array(
    [lab in (SemanticLabel.Building, SemanticLabel.Vegetation, SemanticLabel.Car) for lab in range(7)]
)


def _vertical_fill(labels, conf, unobserved) -> None:
    """Close unobserved gaps in a column bracketed by one solid class."""
    nz = labels.shape[0]
    below_lab = np.zeros((nz, *labels.shape[1:]), dtype=np.uint8)
    below_cf = np.zeros(below_lab.shape)
    above_lab = np.zeros_like(below_lab)
    above_cf = np.zeros(below_lab.shape)
    for z in range(1, nz):
        occ = labels[z - 1] != 0
        below_lab[z] = np.where(occ, labels[z - 1], below_lab[z - 1])
        below_cf[z] = np.where(occ, conf[z - 1], below_cf[z - 1])
    for z in range(nz - 2, -1, -1):
        occ = labels[z + 1] != 0
        above_lab[z] = np.where(occ, labels[z + 1], above_lab[z + 1])
        above_cf[z] = np.where(occ, conf[z + 1], above_cf[z + 1])
    fill = (
        (labels == 0)
        & unobserved
        & (below_lab == above_lab)
        & _VERTICAL[below_lab]
    )
    labels[fill] = below_lab[fill]
    conf[fill] = 0.5 * np.minimum(below_cf, above_cf)[fill]


def complete(
    cloud: LabeledPointCloud,
    spec: GridSpec = DEFAULT_SPEC,
    cfg: CompletionConfig = CompletionConfig(),
) -> tuple[SemanticGrid, ConfidenceGrid]:
    """Features plus prediction for a single cloud in the grid frame."""
    return predict(extract_features(cloud, (0.0, 0.0, 0.0), spec), cfg)


def encode_features(f: FeatureGrid) -> bytes:
    header = VFTG_MAGIC + struct.pack("<H3HB", VFTG_VERSION, *f.spec.dims, N_CHANNELS)
    return header + f.data.astype("<f4").tobytes()


def decode_features(buf: bytes, spec: GridSpec | None = None) -> FeatureGrid:
    """Parse VFTG bytes. The file carries dims only, so ``spec`` supplies the
    lattice placement (default grid when omitted)."""
    if buf[:4] != VFTG_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}", 0)
    if len(buf) < 13:
        raise TruncatedError("truncated VFTG header", len(buf))
    version, nx, ny, nz, nch = struct.unpack_from("<H3HB", buf, 4)
    if version != VFTG_VERSION:
        raise VersionError(f"unsupported VFTG version {version}", 4)
    if nch != N_CHANNELS:
        raise FormatError(f"expected {N_CHANNELS} channels, found {nch}", 12)
    if spec is None:
        spec = DEFAULT_SPEC if (nx, ny, nz) == DEFAULT_SPEC.dims else GridSpec(dims=(nx, ny, nz))
    elif spec.dims != (nx, ny, nz):
        raise FormatError(f"dims {(nx, ny, nz)} do not match spec {spec.dims}", 6)
    expected = nch * nx * ny * nz * 4
    if len(buf) - 13 != expected:
        raise TruncatedError(f"payload is {len(buf) - 13} bytes, expected {expected}", 13)
    data = np.frombuffer(buf, dtype="<f4", offset=13).reshape(nch, nz, ny, nx)
    return FeatureGrid(spec, data.astype(np.float32))


def save_features(f: FeatureGrid, path) -> None:
    Path(path).write_bytes(encode_features(f))


def load_features(path, spec: GridSpec | None = None) -> FeatureGrid:
    return decode_features(Path(path).read_bytes(), spec)
