"""End-to-end acceptance criteria.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line with the measured
values and its runtime, then asserts the criterion at its stated tolerance.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from collabssc.cli import main
from collabssc.commsim import CompressionSpec, compress, compression_bound, decompress
from collabssc.evalharness import ExperimentConfig, export_dataset, run_experiment
from collabssc.fusion import FusionMode, run_frame
from collabssc.geometry import planar_distance, transform_points
from collabssc.gridio import load_grid
from collabssc.lidarsim import scan_agent
from collabssc.metrics import aggregate
from collabssc.pointcloud import concatenate
from collabssc.sscbaseline import complete, extract_features
from collabssc.voxelgrid import SemanticLabel as L
from collabssc.worldsim import build_scene

from test_metrics import TABLE_ROWS

pytestmark = pytest.mark.acceptance

SEEDS = list(range(20))
MODES = [m.value for m in FusionMode]
TESTS = Path(__file__).parent


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, seconds):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail} [{seconds:.1f} s]")
    return emit


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    """The 20-seed sweep shared by the directional criteria."""
    cfg = ExperimentConfig(
        seeds=SEEDS,
        modes=MODES,
        delay_grid_ms=[0, 400],
        pos_std_grid=[0, 0.4],
        heading_std_grid_deg=[0],
        compression_grid=[1, 16],
        output_dir=str(tmp_path_factory.mktemp("suite")),
    )
    t0 = time.perf_counter()
    records = run_experiment(cfg)
    return cfg, records, time.perf_counter() - t0


def mean_of(records, metric, mode, **point):
    base = dict(delay_ms=0.0, pos_std=0.0, heading_std=0.0, compression=1)
    base.update(point)
    vals = [
        getattr(r, metric) for r in records
        if r.mode == mode and all(getattr(r, k) == v for k, v in base.items())
    ]
    assert len(vals) == len(SEEDS)
    return float(np.nanmean(vals))


def test_1_table_aggregates(report):
    t0 = time.perf_counter()
    worst = 0.0
    for cells, (miou, ciou) in TABLE_ROWS.values():
        got_m, got_c = aggregate(dict(zip([L.Road, L.Car, L.Terrain, L.Building, L.Vegetation, L.Pole], cells)))
        worst = max(worst, abs(got_m - miou), abs(got_c - ciou))
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and dt < 1.0
    report(1, ok, f"max |aggregate - listed| = {worst:.4f} pp over 4 rows", dt)
    assert ok


def test_2_collaboration_gain(suite, report):
    cfg, records, dt = suite
    for seed in SEEDS:
        scene = build_scene(cfg.scene_config(seed))
        occluders = [
            o for o in scene.objects
            if o.kind == L.Building and o.shape.center[1] > 0
            and abs(o.shape.center[0]) - o.shape.dims[0] / 2 < 20.0
        ]
        assert occluders, f"seed {seed} lacks an occluding building"
        assert len(scene.agents) == 3
    d_iou = 100 * (mean_of(records, "iou", "early") - mean_of(records, "iou", "none"))
    d_miou = 100 * (mean_of(records, "miou", "early") - mean_of(records, "miou", "none"))
    ok = d_iou >= 2.0 and d_miou >= 1.0 and dt < 600
    report(2, ok, f"Early - None: IoU +{d_iou:.2f} pp, mIoU +{d_miou:.2f} pp", dt)
    assert ok


def test_3_delay_degradation(suite, report):
    cfg, records, dt = suite
    for seed in SEEDS:
        scene = build_scene(cfg.scene_config(seed))
        speeds = [math.hypot(*o.velocity) for o in scene.objects if o.kind == L.Car]
        assert max(speeds) >= 5.0, f"seed {seed} has no car moving at >= 5 m/s"
    parts, ok = [], dt < 600
    for mode in MODES:
        m0 = mean_of(records, "miou", mode)
        m4 = mean_of(records, "miou", mode, delay_ms=400.0)
        ok &= m4 <= m0
        parts.append(f"{mode} {100 * m0:.2f}->{100 * m4:.2f}")
    report(3, ok, "mIoU at 0 -> 400 ms: " + ", ".join(parts), dt)
    assert ok


def test_4_position_noise_degradation(suite, report):
    _, records, dt = suite
    parts, ok = [], dt < 600
    for mode in MODES:
        m0 = mean_of(records, "miou", mode)
        m4 = mean_of(records, "miou", mode, pos_std=0.4)
        ok &= m4 <= m0
        parts.append(f"{mode} {100 * m0:.2f}->{100 * m4:.2f}")
    report(4, ok, "mIoU at 0 -> 0.4 m: " + ", ".join(parts), dt)
    assert ok


ORACLE_TESTS = [
    "test_voxelgrid.py::test_voxelize_matches_per_point_oracle",
    "test_fusion.py::test_late_matches_brute_force",
    "test_commsim.py::test_graph_matches_distance_scan",
    "test_serialization.py::test_grid_roundtrip_random",
    "test_serialization.py::test_grid_encoding_matches_naive_oracle",
    "test_serialization.py::test_vpcd_roundtrip",
    "test_serialization.py::test_vftg_roundtrip",
    "test_metrics.py::test_evaluate_matches_counting_oracle",
]


def test_5_oracle_suite(report):
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
         *(str(TESTS / t) for t in ORACLE_TESTS)],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    dt = time.perf_counter() - t0
    ok = proc.returncode == 0 and dt < 60
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(5, ok, f"{len(ORACLE_TESTS)} oracle tests: {tail}", dt)
    assert ok, proc.stdout


def test_6_early_equals_union_cloud(report):
    t0 = time.perf_counter()
    mismatches = []
    for seed in range(10):
        scene = build_scene(ExperimentConfig().scene_config(seed))
        res = run_frame(scene, 0, FusionMode.Early)
        ego_pose = scene.sensor_pose(0)
        parts = [scan_agent(scene, 0)]
        for aid in scene.agent_ids[1:]:
            pose = scene.sensor_pose(aid)
            if planar_distance(pose, ego_pose) <= 70.0:
                parts.append(transform_points(scan_agent(scene, aid), pose, ego_pose))
        expected, _ = complete(concatenate(parts))
        if res.prediction != expected:
            mismatches.append(seed)
    dt = time.perf_counter() - t0
    ok = not mismatches and dt < 120
    report(6, ok, f"Early vs union-cloud NoFusion over 10 seeds, mismatched seeds {mismatches}", dt)
    assert ok


def test_7_compression_contract(suite, report):
    cfg, records, sweep_dt = suite
    t0 = time.perf_counter()
    exact, bounded = True, True
    for seed in range(3):
        scene = build_scene(cfg.scene_config(seed))
        f = extract_features(scan_agent(scene, 0), (0.0, 0.0, 0.0))
        exact &= np.array_equal(decompress(compress(f, CompressionSpec(1))).data, f.data)
        c16 = compress(f, CompressionSpec(16))
        bounded &= c16.payload_bytes <= compression_bound(f.spec, 16)
    m1 = mean_of(records, "miou", "intermediate")
    m16 = mean_of(records, "miou", "intermediate", compression=16)
    gap = 100 * abs(m16 - m1)
    dt = time.perf_counter() - t0 + sweep_dt
    ok = exact and bounded and gap <= 3.0 and dt < 600
    report(7, ok, f"rate-1 exact {exact}, rate-16 within bound {bounded}, "
                  f"Intermediate mIoU 1x {100 * m1:.2f} vs 16x {100 * m16:.2f} (gap {gap:.2f} pp)", dt)
    assert ok


def test_8_cli_determinism(tmp_path, report):
    t0 = time.perf_counter()
    outputs = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        assert main(["gen-scene", "--seed", "11", "--agents", "3", "--out", str(d / "scene.json")]) == 0
        for mode in MODES:
            assert main(["run", "--scene", str(d / "scene.json"), "--fusion", mode,
                         "--delay-ms", "200", "--pos-noise", "0.2", "--heading-noise", "0.4",
                         "--compression", "4", "--out", str(d / mode)]) == 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"seeds": [0, 1], "delay_grid_ms": [0, 100], "pos_std_grid": [0, 0.2], '
                       '"heading_std_grid_deg": [0, 0.4], "compression_grid": [1, 64]}')
        assert main(["sweep", "--config", str(cfg), "--out", str(d / "sweep")]) == 0
        assert main(["dataset", "--config", str(cfg), "--out", str(d / "ds")]) == 0
        outputs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    dt = time.perf_counter() - t0
    same = outputs[0] == outputs[1]
    ok = same and len(outputs[0]) > 10
    report(8, ok, f"{len(outputs[0])} output files byte-identical across reruns: {same}", dt)
    assert ok


def test_9_label_distribution(tmp_path, report):
    t0 = time.perf_counter()
    export_dataset(ExperimentConfig(seeds=SEEDS), tmp_path)
    counts = np.zeros(7, dtype=np.int64)
    for seed in SEEDS:
        gt = load_grid(tmp_path / f"scene_{seed}" / "frame_0" / "ground_truth.vssc")
        counts += np.bincount(gt.labels.ravel(), minlength=7)
    dt = time.perf_counter() - t0
    pole, car = counts[L.Pole], counts[L.Car]
    others = [counts[c] for c in (L.Road, L.Terrain, L.Building, L.Vegetation)]
    ok = pole < car < min(others) and dt < 300
    detail = ", ".join(f"{c.name} {counts[c]}" for c in L if c != L.Empty)
    report(9, ok, f"voxel counts: {detail}", dt)
    assert ok
