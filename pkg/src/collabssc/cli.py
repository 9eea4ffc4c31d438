"""Command-line entry point: ``collabssc <subcommand> ...``.

Exit codes: 0 success, 2 argument or config error, 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .commsim import ChannelConfig, CompressionSpec, RATES
from .errors import FormatError, SceneGenerationError
from .evalharness import (
    ExperimentConfig,
    Impairment,
    _record,
    export_dataset,
    prepare_frame,
    records_to_csv,
    run_experiment,
)
from .fusion import FusionMode, run_frame
from .gridio import load_grid, save_grid
from .metrics import MIOU_MODES, evaluate
from .sscbaseline import CompletionConfig
from .worldsim import SceneConfig, build_scene, load_scene, save_scene

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger("collabssc")


class UsageError(Exception):
    pass


def _non_negative(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a value >= 0, got {text}")
    return v


def _cmd_gen_scene(args) -> int:
    scene = build_scene(SceneConfig(seed=args.seed, n_agents=args.agents))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_scene(scene, args.out)
    return EXIT_OK


def _cmd_run(args) -> int:
    scene = load_scene(args.scene)
    if args.ego not in scene.agent_ids:
        raise UsageError(f"scene has no agent {args.ego}")
    point = Impairment(args.delay_ms, args.pos_noise, args.heading_noise, args.compression)
    channel = ChannelConfig(
        delay_s=args.delay_ms / 1000.0,
        pos_std_m=args.pos_noise,
        heading_std_rad=math.radians(args.heading_noise),
        compression=CompressionSpec(args.compression),
        seed=scene.seed,
    )
    completion = CompletionConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    now, buffer, gt = prepare_frame(scene, args.ego, max(0.5, channel.delay_s), completion)
    res = run_frame(
        scene, args.ego, FusionMode(args.fusion), channel, completion, now,
        buffer=buffer, late_empty_claims=args.late_empty_claims,
    )
    report = evaluate(res.prediction, gt, args.miou_zero_union)
    save_grid(res.prediction, out / "prediction.vssc")
    save_grid(gt, out / "ground_truth.vssc")
    rec = _record(args.fusion, scene.seed, point, report, res.bytes_received)
    (out / "metrics.csv").write_text(records_to_csv([rec]))
    return EXIT_OK


def _load_config(path: str) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    try:
        return ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from e


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    if args.out is not None:
        cfg.output_dir = args.out
    run_experiment(cfg)
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = evaluate(load_grid(args.pred), load_grid(args.gt), args.miou_zero_union)
    def num(v: float) -> float | None:
        return None if math.isnan(v) else v  # undefined IoU becomes JSON null

    doc = {
        "iou": num(report.iou),
        "miou": num(report.miou),
        "ciou": num(report.ciou),
        "per_class_iou": {c.name: num(v) for c, v in report.per_class_iou.items()},
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _cmd_dataset(args) -> int:
    export_dataset(_load_config(args.config), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="collabssc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a seeded scene as JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("run", help="simulate and score one frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--ego", type=int, default=0)
    p.add_argument("--fusion", choices=[m.value for m in FusionMode], default="none")
    p.add_argument("--delay-ms", type=_non_negative, default=0.0)
    p.add_argument("--pos-noise", type=_non_negative, default=0.0, help="position std, m")
    p.add_argument("--heading-noise", type=_non_negative, default=0.0, help="heading std, degrees")
    p.add_argument("--compression", type=int, choices=RATES, default=1)
    p.add_argument("--late-empty-claims", action=argparse.BooleanOptionalAction, default=True,
                   help="let Empty predictions compete in late fusion")
    p.add_argument("--miou-zero-union", choices=MIOU_MODES, default="exclude")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run an experiment sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override output_dir")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval", help="score a predicted grid against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--miou-zero-union", choices=MIOU_MODES, default="exclude")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("dataset", help="export per-agent clouds and grids")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dataset)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, SceneGenerationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
