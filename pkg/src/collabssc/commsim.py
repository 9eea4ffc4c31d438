"""V2V channel: spatial graph, feature compression, message encoding,
snapshot history and impaired delivery.

Message wire layout: a 64-byte little-endian header

    magic b"V2VM" | version u16 | sender u32 | kind u8 | stamp f64 |
    pose 6 x f32 (x, y, z, yaw, pitch, roll) | body length u64 | zero pad

followed by the body. Bodies carry no magic of their own:

    Metadata      empty
    Early         u64 point count + count x (3 x f32, u8 label)
    Intermediate  compressed feature blob (see ``compress``)
    Late          nz*ny*nx u8 labels + nz*ny*nx f32 confidences

Compressed feature blob: a 64-byte codec header

    b"CF" | rate u8 | channels u8 | dims 3 x u16 | quantizer table (54 bytes)

then the rate-specific body.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import DeliveryError, FormatError, TruncatedError
from .geometry import Pose6D, perturb_pose, planar_distance
from .pointcloud import LabeledPointCloud, POINT_DTYPE, decode_points, encode_points
from .sscbaseline import (
    CH_HITS,
    CLASS_CHANNELS,
    N_CHANNELS,
    CompletionConfig,
    FeatureGrid,
    _argmax_by_priority,
    extract_features,
    predict,
)
from .voxelgrid import DEFAULT_SPEC, ConfidenceGrid, GridSpec, SemanticGrid

HEADER_SIZE = 64
HEADER_FMT = "<4sHIBd6fQ"
MAGIC = b"V2VM"
VERSION = 1
CODEC_HEADER_SIZE = 64
RATES = (1, 4, 16, 64)
TICK_S = 0.1

_STAMP_EPS = 1e-9


# ---------------------------------------------------------------- spatial graph


@dataclass(frozen=True)
class SpatialGraph:
    ego: int
    nodes: dict[int, Pose6D] = field(default_factory=dict)

    @property
    def neighbors(self) -> list[int]:
        return sorted(n for n in self.nodes if n != self.ego)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(self.ego, n) for n in self.neighbors]


def update_spatial_graph(
    g: SpatialGraph, poses: dict[int, Pose6D], range_m: float
) -> SpatialGraph:
    """Rebuild membership from the latest shared poses.

    Agents within ``range_m`` (planar) of the ego join; others leave.
    """
    if g.ego not in poses:
        raise ValueError(f"ego {g.ego} missing from shared poses")
    ego_pose = poses[g.ego]
    nodes = {
        aid: pose
        for aid, pose in poses.items()
        if aid == g.ego or planar_distance(pose, ego_pose) <= range_m
    }
    return SpatialGraph(g.ego, dict(sorted(nodes.items())))


# ------------------------------------------------------------------ compression


@dataclass(frozen=True)
class CompressionSpec:
    """Feature codec selected by nominal compression rate.

    1   all 9 channels as float32
    4   all 9 channels, 8-bit linear quantization per channel
    16  hit count (u8, saturating) + argmax class code (u8)
    64  packed occupancy bit plane + 3-bit class code per occupied voxel
    """

    rate: int = 1

    def __post_init__(self):
        if self.rate not in RATES:
            raise ValueError(f"compression rate must be one of {RATES}, got {self.rate}")


@dataclass(frozen=True)
class CompressedFeatures:
    spec: GridSpec
    rate: int
    blob: bytes

    @property
    def payload_bytes(self) -> int:
        return len(self.blob)


def raw_feature_bytes(spec: GridSpec = DEFAULT_SPEC) -> int:
    """Size of the uncompressed float32 feature payload."""
    return N_CHANNELS * spec.size * 4


def compression_bound(spec: GridSpec, rate: int) -> int:
    return math.ceil(raw_feature_bytes(spec) / rate) + CODEC_HEADER_SIZE


def _f16_at_least(x: float) -> np.float16:
    h = np.float16(x)
    if not np.isfinite(h):
        raise ValueError(f"quantization step {x} overflows float16")
    if float(h) < x:
        h = np.nextafter(h, np.float16(np.inf))
    return h


def _quant_table(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = flat.min(axis=1).astype(np.float32)
    hi = flat.max(axis=1).astype(np.float32)
    span = hi.astype(np.float64) - lo.astype(np.float64)
    step = np.array([_f16_at_least(s / 255.0) if s > 0 else 0 for s in span], dtype=np.float16)
    return lo, step


def compress(f: FeatureGrid, spec: CompressionSpec = CompressionSpec()) -> CompressedFeatures:
    g = f.spec
    n = g.size
    flat = f.data.reshape(N_CHANNELS, n)
    table = bytes(54)
    if spec.rate == 1:
        body = flat.astype("<f4").tobytes()
    elif spec.rate == 4:
        lo, step = _quant_table(flat)
        table = lo.astype("<f4").tobytes() + step.astype("<f2").tobytes()
        st = step.astype(np.float64)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(st > 0, np.rint((flat - lo.astype(np.float64)[:, None]) / st), 0)
        body = np.clip(q, 0, 255).astype(np.uint8).tobytes()
    elif spec.rate == 16:
        counts = f.data[CLASS_CHANNELS]
        hits = counts.sum(axis=0, dtype=np.float64)
        code = np.where(hits > 0, _argmax_by_priority(counts), 0).astype(np.uint8)
        h = np.clip(np.rint(hits), 0, 255).astype(np.uint8)
        body = h.tobytes() + code.tobytes()
    else:
        counts = f.data[CLASS_CHANNELS]
        hits = counts.sum(axis=0, dtype=np.float64).ravel()
        occ = hits >= 1.0
        code = _argmax_by_priority(counts).ravel()[occ]
        bits = np.unpackbits(code[:, None], axis=1)[:, 5:].ravel()
        body = np.packbits(occ).tobytes() + np.packbits(bits).tobytes()
    header = b"CF" + struct.pack("<BB3H", spec.rate, N_CHANNELS, *g.dims) + table
    assert len(header) == CODEC_HEADER_SIZE
    return CompressedFeatures(g, spec.rate, header + body)


def decompress(c: CompressedFeatures) -> FeatureGrid:
    blob = c.blob
    if len(blob) < CODEC_HEADER_SIZE:
        raise TruncatedError("truncated codec header", len(blob))
    if blob[:2] != b"CF":
        raise FormatError(f"bad codec magic {blob[:2]!r}", 0)
    rate, nch, nx, ny, nz = struct.unpack_from("<BB3H", blob, 2)
    spec = c.spec
    if (nx, ny, nz) != spec.dims or nch != N_CHANNELS:
        raise FormatError("codec dims/channels do not match grid spec", 4)
    n = spec.size
    body = memoryview(blob)[CODEC_HEADER_SIZE:]
    out = np.zeros((N_CHANNELS, n), dtype=np.float32)
    if rate == 1:
        out[:] = np.frombuffer(body, dtype="<f4", count=N_CHANNELS * n).reshape(N_CHANNELS, n)
    elif rate == 4:
        lo = np.frombuffer(blob, dtype="<f4", count=N_CHANNELS, offset=10).astype(np.float64)
        step = np.frombuffer(blob, dtype="<f2", count=N_CHANNELS, offset=10 + 4 * N_CHANNELS)
        q = np.frombuffer(body, dtype=np.uint8, count=N_CHANNELS * n).reshape(N_CHANNELS, n)
        out[:] = lo[:, None] + q * step.astype(np.float64)[:, None]
    elif rate == 16:
        h = np.frombuffer(body, dtype=np.uint8, count=n).astype(np.float32)
        code = np.frombuffer(body, dtype=np.uint8, count=n, offset=n)
        out[CH_HITS] = np.log1p(h)
        has = code > 0
        out[code[has].astype(np.int64) + 1, np.nonzero(has)[0]] = h[has]
    elif rate == 64:
        nbytes = (n + 7) // 8
        occ = np.unpackbits(np.frombuffer(body, dtype=np.uint8, count=nbytes), count=n).astype(bool)
        k = int(occ.sum())
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8, offset=nbytes), count=3 * k)
        code = (bits.reshape(k, 3) * np.array([4, 2, 1], dtype=np.uint8)).sum(axis=1)
        idx = np.nonzero(occ)[0]
        out[CH_HITS, idx] = np.log1p(1.0)
        out[code.astype(np.int64) + 1, idx] = 1.0
    else:
        raise FormatError(f"unknown compression rate {rate}", 2)
    return FeatureGrid(spec, out.reshape(N_CHANNELS, *spec.shape))


# --------------------------------------------------------------------- messages


class MessageKind(IntEnum):
    Metadata = 0
    Early = 1
    Intermediate = 2
    Late = 3


@dataclass(eq=False)
class V2VMessage:
    sender: int
    kind: MessageKind
    sender_pose: Pose6D
    stamp: float
    payload: object = None

    @property
    def payload_bytes(self) -> int:
        return payload_size(self)


@dataclass(eq=False)
class DeliveredMessage:
    """A message as it reaches the receiver, after channel impairment."""

    message: V2VMessage
    received_at: float
    source_pose: Pose6D  # the sender's true pose at ``message.stamp``

    @property
    def sender(self) -> int:
        return self.message.sender

    @property
    def sender_pose(self) -> Pose6D:
        return self.message.sender_pose

    @property
    def payload(self):
        return self.message.payload

    @property
    def payload_bytes(self) -> int:
        return payload_size(self.message)


def body_size(m: V2VMessage) -> int:
    if m.kind == MessageKind.Metadata:
        return 0
    if m.kind == MessageKind.Early:
        return 8 + POINT_DTYPE.itemsize * len(m.payload)
    if m.kind == MessageKind.Intermediate:
        return m.payload.payload_bytes
    grid, _ = m.payload
    return 5 * grid.spec.size


def payload_size(m: V2VMessage) -> int:
    """Exact wire size of ``m`` including the 64-byte header."""
    return HEADER_SIZE + body_size(m)


def encode_message(m: V2VMessage) -> bytes:
    if m.kind == MessageKind.Metadata:
        body = b""
    elif m.kind == MessageKind.Early:
        body = encode_points(m.payload)
    elif m.kind == MessageKind.Intermediate:
        body = m.payload.blob
    else:
        grid, conf = m.payload
        body = grid.labels.astype(np.uint8).tobytes() + conf.conf.astype("<f4").tobytes()
    header = struct.pack(
        HEADER_FMT, MAGIC, VERSION, m.sender, int(m.kind), m.stamp,
        *m.sender_pose.as_tuple(), len(body),
    )
    return header.ljust(HEADER_SIZE, b"\0") + body


def decode_message(buf: bytes, spec: GridSpec = DEFAULT_SPEC) -> V2VMessage:
    if len(buf) < HEADER_SIZE:
        raise TruncatedError("truncated message header", len(buf))
    magic, version, sender, kind, stamp, *pose, length = struct.unpack_from(HEADER_FMT, buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported message version {version}", 4)
    body = buf[HEADER_SIZE:]
    if len(body) != length:
        raise TruncatedError(f"body is {len(body)} bytes, header says {length}", HEADER_SIZE)
    kind = MessageKind(kind)
    if kind == MessageKind.Metadata:
        payload = None
    elif kind == MessageKind.Early:
        payload, _ = decode_points(body, 0, stamp)
    elif kind == MessageKind.Intermediate:
        rate = body[2]
        payload = CompressedFeatures(spec, rate, bytes(body))
    else:
        n = spec.size
        labels = np.frombuffer(body, dtype=np.uint8, count=n).reshape(spec.shape)
        conf = np.frombuffer(body, dtype="<f4", count=n, offset=n).reshape(spec.shape)
        payload = (SemanticGrid(spec, labels.copy()), ConfidenceGrid(spec, conf.astype(np.float64)))
    return V2VMessage(sender, kind, Pose6D(*(float(v) for v in pose)), stamp, payload)


# -------------------------------------------------------------- snapshot buffer


class Snapshot:
    """One agent's state at one tick. Cloud, features and prediction are
    computed on first access and then cached."""

    def __init__(
        self,
        stamp: float,
        pose: Pose6D,
        cloud_fn: Callable[[], LabeledPointCloud],
        spec: GridSpec = DEFAULT_SPEC,
        completion: CompletionConfig = CompletionConfig(),
    ):
        self.stamp = stamp
        self.pose = pose
        self._cloud_fn = cloud_fn
        self.spec = spec
        self.completion = completion

    @cached_property
    def cloud(self) -> LabeledPointCloud:
        return self._cloud_fn()

    @cached_property
    def features(self) -> FeatureGrid:
        return extract_features(self.cloud, (0.0, 0.0, 0.0), self.spec)

    @cached_property
    def prediction(self) -> tuple[SemanticGrid, ConfidenceGrid]:
        return predict(self.features, self.completion)


class SnapshotBuffer:
    """Per-agent time-ordered history, written by the simulation clock."""

    def __init__(self, tick: float = TICK_S, retention: float = 1.0):
        if retention < 0.4:
            raise ValueError("retention must cover at least 400 ms")
        self.tick = tick
        self.retention = retention
        self._history: dict[int, list[Snapshot]] = {}

    def record(self, agent_id: int, snap: Snapshot) -> None:
        hist = self._history.setdefault(agent_id, [])
        if hist and snap.stamp <= hist[-1].stamp:
            raise ValueError(
                f"stamps must increase: {snap.stamp} after {hist[-1].stamp} for agent {agent_id}"
            )
        hist.append(snap)
        cutoff = snap.stamp - self.retention - _STAMP_EPS
        while hist and hist[0].stamp < cutoff:
            hist.pop(0)

    def agents(self) -> list[int]:
        return sorted(self._history)

    def history(self, agent_id: int) -> list[Snapshot]:
        return list(self._history.get(agent_id, ()))

    def select(self, agent_id: int, t: float) -> Snapshot:
        """Newest snapshot with stamp <= t."""
        hist = self._history.get(agent_id, [])
        i = bisect_right([s.stamp for s in hist], t + _STAMP_EPS)
        if i == 0:
            raise DeliveryError(f"agent {agent_id} has no snapshot at or before t={t:.3f}")
        return hist[i - 1]


# --------------------------------------------------------------------- channel


@dataclass(frozen=True)
class ChannelConfig:
    range_m: float = 70.0
    delay_s: float = 0.0
    pos_std_m: float = 0.0
    heading_std_rad: float = 0.0
    compression: CompressionSpec = CompressionSpec()
    seed: int = 0

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("range_m must be > 0")
        if self.delay_s < 0 or self.pos_std_m < 0 or self.heading_std_rad < 0:
            raise ValueError("delay and noise stds must be >= 0")

    @property
    def transparent(self) -> bool:
        return (
            self.delay_s == 0
            and self.pos_std_m == 0
            and self.heading_std_rad == 0
            and self.compression.rate == 1
        )


def channel_rng(seed: int, sender: int, frame: int) -> np.random.Generator:
    """Private generator stream for one (seed, sender, frame) transmission."""
    return np.random.default_rng([int(seed), int(sender), int(frame)])


def transmit(
    buffer: SnapshotBuffer,
    sender: int,
    kind: MessageKind,
    cfg: ChannelConfig,
    now: float,
    rng: np.random.Generator | None = None,
) -> DeliveredMessage:
    """Serve ``sender``'s state as seen through the impaired channel.

    The snapshot is the newest with stamp <= now - delay; its pose is then
    perturbed. Raises DeliveryError when no snapshot is old enough.
    """
    snap = buffer.select(sender, now - cfg.delay_s)
    if rng is None:
        rng = channel_rng(cfg.seed, sender, round(now / buffer.tick))
    pose = perturb_pose(snap.pose, cfg.pos_std_m, cfg.heading_std_rad, rng)
    kind = MessageKind(kind)
    if kind == MessageKind.Metadata:
        payload = None
    elif kind == MessageKind.Early:
        payload = snap.cloud
    elif kind == MessageKind.Intermediate:
        payload = compress(snap.features, cfg.compression)
    else:
        payload = snap.prediction
    return DeliveredMessage(V2VMessage(sender, kind, pose, snap.stamp, payload), now, snap.pose)
