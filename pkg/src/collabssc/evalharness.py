"""Experiment sweeps, CSV reporting and dataset export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .commsim import TICK_S, ChannelConfig, CompressionSpec, SnapshotBuffer
from .fusion import FusionMode, build_buffer, run_frame
from .gridio import save_grid
from .lidarsim import LidarSpec, scan_agent
from .metrics import MIOU_MODES, evaluate
from .pointcloud import save_cloud
from .sscbaseline import CompletionConfig
from .voxelgrid import CLASSES, DEFAULT_SPEC, SemanticGrid
from .worldsim import Scene, SceneConfig, build_scene, ground_truth_grid, save_scene

log = logging.getLogger(__name__)

CSV_HEADER = (
    "mode,seed,delay_ms,pos_std,heading_std,compression,iou,miou,ciou,"
    "iou_road,iou_car,iou_terrain,iou_building,iou_vegetation,iou_poles,bytes_tx"
)
MODE_ORDER = [m.value for m in FusionMode]


@dataclass
class ExperimentConfig:
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    n_agents: int = 3
    modes: list[str] = field(default_factory=lambda: list(MODE_ORDER))
    delay_grid_ms: list[float] = field(default_factory=lambda: [0, 100, 200, 300, 400])
    pos_std_grid: list[float] = field(default_factory=lambda: [0, 0.1, 0.2, 0.3, 0.4])
    heading_std_grid_deg: list[float] = field(default_factory=lambda: [0, 0.2, 0.4, 0.6, 0.8])
    compression_grid: list[int] = field(default_factory=lambda: [1, 4, 16, 64])
    output_dir: str = "results"
    ego_id: int = 0
    warmup_s: float = 0.5
    n_frames: int = 1
    beta: float = 1.0
    late_empty_claims: bool = True
    miou_zero_union: str = "exclude"
    workers: int = 1
    scene: dict = field(default_factory=dict)  # SceneConfig overrides

    def __post_init__(self):
        for name in ("seeds", "modes", "delay_grid_ms", "pos_std_grid",
                     "heading_std_grid_deg", "compression_grid"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        for m in self.modes:
            FusionMode(m)
        for r in self.compression_grid:
            CompressionSpec(int(r))
        if any(v < 0 for v in (*self.delay_grid_ms, *self.pos_std_grid, *self.heading_std_grid_deg)):
            raise ValueError("impairment grids must be >= 0")
        if self.miou_zero_union not in MIOU_MODES:
            raise ValueError(f"miou_zero_union must be one of {MIOU_MODES}")
        if self.workers < 1 or self.n_frames < 1:
            raise ValueError("workers and n_frames must be >= 1")
        self.scene_config(self.seeds[0])

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def scene_config(self, seed: int) -> SceneConfig:
        opts = dict(self.scene)
        if "speed_range" in opts:
            opts["speed_range"] = tuple(opts["speed_range"])
        return SceneConfig(seed=seed, n_agents=self.n_agents, **opts)


@dataclass(frozen=True)
class Impairment:
    delay_ms: float = 0.0
    pos_std: float = 0.0
    heading_std: float = 0.0  # degrees
    compression: int = 1

    def channel(self, seed: int) -> ChannelConfig:
        return ChannelConfig(
            delay_s=self.delay_ms / 1000.0,
            pos_std_m=self.pos_std,
            heading_std_rad=math.radians(self.heading_std),
            compression=CompressionSpec(self.compression),
            seed=seed,
        )


def impairment_points(cfg: ExperimentConfig) -> list[Impairment]:
    """One axis at a time, others at zero / 1x; duplicates collapse."""
    pts = [Impairment(delay_ms=float(d)) for d in cfg.delay_grid_ms]
    pts += [Impairment(pos_std=float(p)) for p in cfg.pos_std_grid]
    pts += [Impairment(heading_std=float(h)) for h in cfg.heading_std_grid_deg]
    pts += [Impairment(compression=int(c)) for c in cfg.compression_grid]
    return list(dict.fromkeys(pts))


@dataclass
class RunRecord:
    mode: str
    seed: int | str
    delay_ms: float
    pos_std: float
    heading_std: float
    compression: int
    iou: float
    miou: float
    ciou: float
    iou_road: float
    iou_car: float
    iou_terrain: float
    iou_building: float
    iou_vegetation: float
    iou_poles: float
    bytes_tx: float

    def row(self) -> list[str]:
        return [_fmt(v) for v in asdict(self).values()]


def _fmt(v) -> str:
    # repr keeps full float precision, so CSVs are exact and deterministic
    return repr(float(v)) if isinstance(v, float) else str(v)


def _record(mode, seed, point: Impairment, report, bytes_tx) -> RunRecord:
    pc = report.per_class_iou
    return RunRecord(
        mode, seed, point.delay_ms, point.pos_std, point.heading_std, point.compression,
        report.iou, report.miou, report.ciou,
        *(pc[c] for c in CLASSES),
        bytes_tx,
    )


def prepare_frame(
    scene: Scene, ego_id: int, warmup_s: float, completion: CompletionConfig = CompletionConfig()
) -> tuple[float, SnapshotBuffer, SemanticGrid]:
    """Evaluation time, warmed snapshot buffer and ego ground truth.

    ``now`` is the first tick at or after ``warmup_s`` past the scene clock.
    """
    now = round(scene.clock + math.ceil(warmup_s / TICK_S - 1e-9) * TICK_S, 9)
    buffer = build_buffer(scene, now, warmup_s, LidarSpec(), DEFAULT_SPEC, completion)
    ego_pose = buffer.select(ego_id, now).pose
    gt = ground_truth_grid(replace(scene, clock=now), ego_pose, DEFAULT_SPEC)
    return now, buffer, gt


def evaluate_seed(seed: int, cfg: ExperimentConfig) -> list[RunRecord]:
    """All (mode, impairment point) records for one seeded scene."""
    scene = build_scene(cfg.scene_config(seed))
    points = impairment_points(cfg)
    warm = max(cfg.warmup_s, max(p.delay_ms for p in points) / 1000.0)
    completion = CompletionConfig()
    now, buffer, gt = prepare_frame(scene, cfg.ego_id, warm, completion)

    cache = {}
    records = []
    for mode in sorted(cfg.modes, key=MODE_ORDER.index):
        fm = FusionMode(mode)
        for point in points:
            if fm == FusionMode.NoFusion:
                key = (mode,)
            elif fm == FusionMode.Intermediate:
                key = (mode, point)
            else:
                key = (mode, replace(point, compression=1))
            if key not in cache:
                res = run_frame(
                    scene, cfg.ego_id, fm, point.channel(seed), completion, now,
                    buffer=buffer, beta=cfg.beta, late_empty_claims=cfg.late_empty_claims,
                )
                cache[key] = (evaluate(res.prediction, gt, cfg.miou_zero_union), res.bytes_received)
            report, nbytes = cache[key]
            records.append(_record(mode, seed, point, report, nbytes))
    log.info("seed %s: %d records", seed, len(records))
    return records


def summarize(records: list[RunRecord], cfg: ExperimentConfig) -> list[RunRecord]:
    """Mean over seeds for every (mode, impairment point)."""
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.mode, r.delay_ms, r.pos_std, r.heading_std, r.compression), []).append(r)
    out = []
    metric_names = [f.name for f in fields(RunRecord)][6:]
    for (mode, d, p, h, c), rs in groups.items():
        means = {}
        for name in metric_names:
            vals = np.array([getattr(r, name) for r in rs], dtype=np.float64)
            means[name] = float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else math.nan
        out.append(RunRecord(mode, "mean", d, p, h, c, **means))
    return out


def records_to_csv(records: list[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER.split(","))
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def _ensure_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_bytes(b"")
    probe.unlink()


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> list[RunRecord]:
    """Run the sweep; writes ``records.csv`` and ``summary.csv`` to ``cfg.output_dir``."""
    out = Path(cfg.output_dir)
    if write:
        _ensure_writable(out)
    seeds = list(cfg.seeds)
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_seed = list(pool.map(evaluate_seed, seeds, [cfg] * len(seeds)))
    else:
        per_seed = [evaluate_seed(s, cfg) for s in seeds]
    points = impairment_points(cfg)
    order = {p: i for i, p in enumerate(points)}
    records = [r for rs in per_seed for r in rs]
    records.sort(key=lambda r: (
        r.seed, MODE_ORDER.index(r.mode),
        order[Impairment(r.delay_ms, r.pos_std, r.heading_std, r.compression)],
    ))
    if write:
        (out / "records.csv").write_text(records_to_csv(records))
        (out / "summary.csv").write_text(records_to_csv(summarize(records, cfg)))
    return records


def export_dataset(cfg: ExperimentConfig, out) -> list[Path]:
    """Write ``scene_<seed>/frame_<k>/`` trees of per-agent clouds and grids.

    Each frame holds ``agent_<id>.vpcd`` (scan in the agent's sensor frame),
    ``agent_<id>.vssc`` (that agent's ground truth) and
    ``ground_truth.vssc`` (the ego's ground truth).
    """
    out = Path(out)
    _ensure_writable(out)
    written = []
    lidar = LidarSpec()
    for seed in cfg.seeds:
        scene = build_scene(cfg.scene_config(seed))
        sdir = out / f"scene_{seed}"
        sdir.mkdir(parents=True, exist_ok=True)
        save_scene(scene, sdir / "scene.json")
        written.append(sdir / "scene.json")
        for k in range(cfg.n_frames):
            at = replace(scene, clock=round(scene.clock + k * TICK_S, 9))
            fdir = sdir / f"frame_{k}"
            fdir.mkdir(exist_ok=True)
            for aid in at.agent_ids:
                pose = at.sensor_pose(aid)
                save_cloud(scan_agent(at, aid, lidar), fdir / f"agent_{aid}.vpcd")
                gt = ground_truth_grid(at, pose)
                save_grid(gt, fdir / f"agent_{aid}.vssc")
                written += [fdir / f"agent_{aid}.vpcd", fdir / f"agent_{aid}.vssc"]
                if aid == cfg.ego_id:
                    save_grid(gt, fdir / "ground_truth.vssc")
                    written.append(fdir / "ground_truth.vssc")
        log.info("exported scene %s", seed)
    return written
