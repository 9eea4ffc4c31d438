"""No/early/intermediate/late fusion and single-frame orchestration."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .commsim import (
    ChannelConfig,
    MessageKind,
    Snapshot,
    SnapshotBuffer,
    SpatialGraph,
    TICK_S,
    channel_rng,
    decompress,
    transmit,
    update_spatial_graph,
)
from .errors import DeliveryError
from .geometry import Pose6D, transform_points, transform_xyz
from .lidarsim import LidarSpec, scan_agent
from .pointcloud import LabeledPointCloud, concatenate
from .sscbaseline import CH_HITS, CompletionConfig, FeatureGrid, extract_features, predict
from .voxelgrid import DEFAULT_SPEC, ConfidenceGrid, GridSpec, SemanticGrid
from .worldsim import Scene


class FusionMode(str, Enum):
    NoFusion = "none"
    Early = "early"
    Intermediate = "intermediate"
    Late = "late"


@dataclass(eq=False)
class FrameResult:
    prediction: SemanticGrid
    confidence: ConfidenceGrid
    bytes_received: int
    neighbors_used: int


def fuse_early(
    ego_cloud: LabeledPointCloud,
    deliveries: list[tuple[LabeledPointCloud, Pose6D]],
    ego_pose: Pose6D,
) -> LabeledPointCloud:
    """Ego cloud followed by each neighbor cloud moved into the ego frame.

    Callers pass deliveries in ascending sender id.
    """
    if not deliveries:
        return ego_cloud
    moved = [transform_points(cloud, pose, ego_pose) for cloud, pose in deliveries]
    return concatenate([ego_cloud, *moved], stamp=ego_cloud.stamp)


def fuse_intermediate(
    ego_f: FeatureGrid, neighbor_fs: list[FeatureGrid], beta: float = 1.0
) -> FeatureGrid:
    """Per-voxel softmax attention over agents, keyed on log hit count."""
    for f in neighbor_fs:
        if f.spec != ego_f.spec:
            raise ValueError("feature grids must share one grid spec")
    if not neighbor_fs:
        return ego_f
    stack = np.stack([ego_f.data, *(f.data for f in neighbor_fs)]).astype(np.float64)
    logits = beta * stack[:, CH_HITS]
    logits -= logits.max(axis=0)
    w = np.exp(logits)
    w /= w.sum(axis=0)
    fused = np.einsum("a...,ac...->c...", w, stack)
    return FeatureGrid(ego_f.spec, fused.astype(np.float32))


def attention_weights(grids: list[FeatureGrid], beta: float = 1.0) -> np.ndarray:
    """The agent weights ``fuse_intermediate`` applies, shape (agents, nz, ny, nx)."""
    logits = beta * np.stack([g.data[CH_HITS] for g in grids]).astype(np.float64)
    logits -= logits.max(axis=0)
    w = np.exp(logits)
    return w / w.sum(axis=0)


@lru_cache(maxsize=4)
def _centers(spec: GridSpec) -> np.ndarray:
    c = spec.centers().reshape(-1, 3)
    c.flags.writeable = False
    return c


def _backproject(spec: GridSpec, src_pose: Pose6D, dst_pose: Pose6D) -> tuple[np.ndarray, np.ndarray]:
    """Flat source voxel for each destination voxel center, and a validity mask."""
    src_xyz = transform_xyz(_centers(spec), dst_pose, src_pose)
    idx, inside = spec.voxel_indices(src_xyz)
    flat = np.where(inside, spec.flat_index(*idx.T), 0)
    return flat, inside


def warp_feature_grid(f: FeatureGrid, src_pose: Pose6D, dst_pose: Pose6D) -> FeatureGrid:
    """Nearest-neighbor inverse warp from ``src_pose``'s grid into ``dst_pose``'s."""
    if src_pose == dst_pose:
        return FeatureGrid(f.spec, f.data.copy())
    flat, inside = _backproject(f.spec, src_pose, dst_pose)
    src = f.data.reshape(f.data.shape[0], -1)
    out = np.where(inside, src[:, flat], 0.0).astype(np.float32)
    return FeatureGrid(f.spec, out.reshape(f.data.shape))


def warp_prediction(
    grid: SemanticGrid, conf: ConfidenceGrid, src_pose: Pose6D, dst_pose: Pose6D
) -> tuple[SemanticGrid, ConfidenceGrid]:
    """Same resampling rule as ``warp_feature_grid``; out-of-view voxels become
    Empty with zero confidence."""
    if src_pose == dst_pose:
        return grid, conf
    flat, inside = _backproject(grid.spec, src_pose, dst_pose)
    labels = np.where(inside, grid.labels.ravel()[flat], 0).astype(np.uint8)
    c = np.where(inside, conf.conf.ravel()[flat], 0.0)
    return (
        SemanticGrid(grid.spec, labels.reshape(grid.spec.shape)),
        ConfidenceGrid(grid.spec, c.reshape(grid.spec.shape)),
    )


def fuse_late(
    claims: list[tuple[SemanticGrid, ConfidenceGrid]], empty_claims: bool = True
) -> tuple[SemanticGrid, ConfidenceGrid]:
    """Per voxel, keep the claim with the greatest confidence.

    Ties go to the earliest claim (ego first). With ``empty_claims`` off, an
    occupied claim always beats an Empty one.
    """
    if not claims:
        raise ValueError("late fusion needs at least one claim")
    spec = claims[0][0].spec
    if any(g.spec != spec or c.spec != spec for g, c in claims):
        raise ValueError("claims must share one grid spec")
    if len(claims) == 1:
        return claims[0]
    labels = np.stack([g.labels for g, _ in claims])
    conf = np.stack([c.conf for _, c in claims])
    key = conf if empty_claims else conf + 2.0 * (labels != 0)
    win = np.argmax(key, axis=0)[None]
    return (
        SemanticGrid(spec, np.take_along_axis(labels, win, 0)[0]),
        ConfidenceGrid(spec, np.take_along_axis(conf, win, 0)[0]),
    )


def build_buffer(
    scene: Scene,
    now: float,
    history: float = 0.5,
    lidar: LidarSpec = LidarSpec(),
    spec: GridSpec = DEFAULT_SPEC,
    completion: CompletionConfig = CompletionConfig(),
    tick: float = TICK_S,
) -> SnapshotBuffer:
    """Snapshots for every agent at tick-aligned stamps in [now - history, now].

    Stamps are multiples of ``tick`` measured from ``scene.clock``. Sensor
    data is produced lazily on first use.
    """
    n_ticks = int(round((now - scene.clock) / tick))
    first = max(0, n_ticks - int(math.ceil(history / tick - 1e-9)))
    buf = SnapshotBuffer(tick, retention=max(1.0, history + tick))
    for k in range(first, n_ticks + 1):
        stamp = round(scene.clock + k * tick, 9)
        at = replace(scene, clock=stamp)
        for aid in scene.agent_ids:
            buf.record(
                aid,
                Snapshot(stamp, at.sensor_pose(aid), _scan_fn(at, aid, lidar), spec, completion),
            )
    return buf


def _scan_fn(scene: Scene, agent_id: int, lidar: LidarSpec):
    return lambda: scan_agent(scene, agent_id, lidar)


def run_frame(
    scene: Scene,
    ego_id: int,
    mode: FusionMode,
    cfg: ChannelConfig = ChannelConfig(),
    completion: CompletionConfig = CompletionConfig(),
    now: float | None = None,
    *,
    buffer: SnapshotBuffer | None = None,
    spec: GridSpec = DEFAULT_SPEC,
    lidar: LidarSpec = LidarSpec(),
    beta: float = 1.0,
    late_empty_claims: bool = True,
) -> FrameResult:
    """Produce the ego's semantic occupancy for one frame under ``mode``.

    Neighbors whose snapshots cannot be served are treated as silent.
    """
    mode = FusionMode(mode)
    if now is None:
        now = scene.clock
    if buffer is None:
        buffer = build_buffer(scene, now, max(0.5, cfg.delay_s), lidar, spec, completion)
    ego = buffer.select(ego_id, now)
    ego_pose = ego.pose

    if mode == FusionMode.NoFusion:
        grid, conf = ego.prediction
        return FrameResult(grid, conf, 0, 0)

    frame = round(now / buffer.tick)
    received = 0
    shared = {ego_id: ego_pose}
    for aid in buffer.agents():
        if aid == ego_id:
            continue
        try:
            meta = transmit(buffer, aid, MessageKind.Metadata, cfg, now, channel_rng(cfg.seed, aid, frame))
        except DeliveryError:
            continue
        received += meta.payload_bytes
        shared[aid] = meta.sender_pose
    graph = update_spatial_graph(SpatialGraph(ego_id), shared, cfg.range_m)

    kind = {
        FusionMode.Early: MessageKind.Early,
        FusionMode.Intermediate: MessageKind.Intermediate,
        FusionMode.Late: MessageKind.Late,
    }[mode]
    deliveries = []
    for aid in graph.neighbors:
        try:
            msg = transmit(buffer, aid, kind, cfg, now, channel_rng(cfg.seed, aid, frame))
        except DeliveryError:
            continue
        received += msg.payload_bytes
        deliveries.append(msg)

    if mode == FusionMode.Early:
        fused = fuse_early(ego.cloud, [(m.payload, m.sender_pose) for m in deliveries], ego_pose)
        grid, conf = predict(extract_features(fused, (0.0, 0.0, 0.0), spec), completion)
    elif mode == FusionMode.Intermediate:
        warped = [
            warp_feature_grid(decompress(m.payload), m.sender_pose, ego_pose) for m in deliveries
        ]
        grid, conf = predict(fuse_intermediate(ego.features, warped, beta), completion)
    else:
        claims = [ego.prediction] + [
            warp_prediction(*m.payload, m.sender_pose, ego_pose) for m in deliveries
        ]
        grid, conf = fuse_late(claims, late_empty_claims)
    return FrameResult(grid, conf, received, len(deliveries))
