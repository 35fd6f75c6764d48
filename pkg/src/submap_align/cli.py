"""Command-line entry point: ``submap-align {synth,run,eval,export}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import BundleFormatError, ConfigError, StageError, SubmapAlignError
from .evaluation import REPORT_COLUMNS, evaluate
from .exports import export_ply, export_trajectory, read_ply, read_trajectory, submap_color
from .pipeline import STRATEGIES, PipelineConfig, filter_submap, run_pipeline
from .prediction import BundleDirectory, load_bundle, save_stream
from .synth import (
    REGIMES,
    DistortionSpec,
    SceneParams,
    SyntheticStream,
    generate_scene,
    write_ground_truth,
)

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3

_REPORT_HELP = (
    "report.csv columns, in order:\n  strategy," + ",".join(REPORT_COLUMNS)
    + "\n(metres, except rre_rmse in degrees; failed is 0/1)"
)
_RAW = argparse.RawDescriptionHelpFormatter

# run flag -> PipelineConfig field
_RUN_FLAGS = {
    "strategy": "strategy",
    "L": "L",
    "O": "O",
    "lam": "lam",
    "voxel_ratio": "voxel_ratio",
    "q": "Q",
    "conf_pct": "conf_pct",
    "metric_scale": "metric_scale",
    "streaming": "streaming",
    "input": "input",
    "output": "output",
    "seed": "seed",
    "rte_gap": "rte_gap",
    "frame_rate": "frame_rate",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="submap-align",
        description="Align overlapping submap predictions into one consistent reconstruction.",
        epilog=_REPORT_HELP,
        formatter_class=_RAW,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log per-submap progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic stream to bundles plus ground truth")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--regime", choices=REGIMES, default="none")
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--cameras", type=int, default=3)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=48)
    s.add_argument("--extent", type=float, default=50.0)
    s.add_argument("--L", type=int, default=2)
    s.add_argument("--O", type=int, default=2)
    s.add_argument("--alpha", type=float, default=0.05, help="case3 distortion amplitude")
    s.add_argument("--jitter-rot", type=float, default=5.0, help="per-submap rotation, degrees")
    s.add_argument("--jitter-trans", type=float, default=1.0, help="per-submap shift, metres")
    s.add_argument("--ground-only", action="store_true", help="flat ground, no walls or boxes")
    s.add_argument("--frame-rate", type=float, default=2.0)

    r = sub.add_parser("run", help="align a stream and export results", epilog=_REPORT_HELP,
                       formatter_class=_RAW)
    r.add_argument("--config", help="JSON file with PipelineConfig fields; flags override it")
    r.add_argument("--strategy", choices=STRATEGIES)
    r.add_argument("--L", type=int)
    r.add_argument("--O", type=int)
    r.add_argument("--lambda", dest="lam", type=float, help="absolute TPS regularizer")
    r.add_argument("--voxel-ratio", type=float, help="voxel size as a fraction of submap radius")
    r.add_argument("--q", type=int, help="neighbours used for displacement smoothing")
    r.add_argument("--conf-pct", type=float, help="confidence percentile to drop, 0..100")
    r.add_argument("--metric-scale", action="store_true", default=None,
                   help="trust the predicted scale (skip scale estimation)")
    r.add_argument("--streaming", action="store_true", default=None,
                   help="also refit each completed submap online")
    r.add_argument("--in", dest="input", help="bundle directory (default: synthetic stream)")
    r.add_argument("--out", dest="output", help="output directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--rte-gap", type=int)
    r.add_argument("--frame-rate", type=float)

    e = sub.add_parser("eval", help="score exported trajectories and cloud against ground truth",
                       epilog=_REPORT_HELP, formatter_class=_RAW)
    e.add_argument("--pred", required=True,
                   help="directory with trajectory_cam*.txt and cloud.ply")
    e.add_argument("--gt", required=True, help="directory laid out the same way")
    e.add_argument("--rte-gap", type=int, default=1)
    e.add_argument("--label", default=None, help="value for the strategy column")

    x = sub.add_parser("export", help="write bundle points to a PLY coloured by submap")
    x.add_argument("--in", dest="input", required=True,
                   help="bundle directory, or a single submap_XXXX bundle")
    x.add_argument("--out", required=True, help="PLY path")
    x.add_argument("--conf-pct", type=float, default=0.0)
    return p


def _cmd_synth(args) -> int:
    scene = generate_scene(SceneParams(
        seed=args.seed, n_frames=args.frames, n_cameras=args.cameras, width=args.width,
        height=args.height, extent=args.extent, ground_only=args.ground_only,
    ))
    spec = DistortionSpec(args.regime, alpha=args.alpha, jitter_rot_deg=args.jitter_rot,
                          jitter_trans=args.jitter_trans, seed=args.seed)
    stream = SyntheticStream(scene, args.L, args.O, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_stream((stream[k] for k in range(len(stream))), out)
    write_ground_truth(stream, out / "ground_truth.json", args.frame_rate)
    gt_dir = out / "gt"
    gt_dir.mkdir(exist_ok=True)
    for c, traj in scene.gt_trajectories().items():
        export_trajectory(traj, gt_dir / f"trajectory_cam{c}.txt", args.frame_rate)
    cloud = scene.gt_cloud()
    export_ply(cloud, np.full((len(cloud), 3), 200, dtype=np.uint8), gt_dir / "cloud.ply")
    print(f"wrote {len(stream)} submaps to {out}")
    return EXIT_OK


def _run_config(args) -> PipelineConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    for flag, name in _RUN_FLAGS.items():
        val = getattr(args, flag)
        if val is not None:
            base[name] = val
    return PipelineConfig.from_dict(base)


def _cmd_run(args) -> int:
    cfg = _run_config(args)
    out = run_pipeline(cfg)
    if out.report is not None:
        print(out.report.pretty(cfg.strategy), end="")
    wall = out.result.wall_times
    if wall:
        print(f"per-submap wall time: mean {np.mean(wall):.3f} s, max {np.max(wall):.3f} s")
    if out.failed:
        reason = out.result.failure_reason or "ATE above failure threshold"
        print(f"alignment failed: {reason}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _read_export_dir(root: Path):
    files = sorted(root.glob("trajectory_cam*.txt"))
    if not files:
        raise ConfigError(f"{root}: no trajectory_cam*.txt files")
    trajs = {}
    for f in files:
        c = int(f.stem.removeprefix("trajectory_cam"))
        trajs[c] = read_trajectory(f)
    cloud, _ = read_ply(root / "cloud.ply")
    return trajs, cloud.astype(np.float64)


def _cmd_eval(args) -> int:
    pred, pred_cloud = _read_export_dir(Path(args.pred))
    gt, gt_cloud = _read_export_dir(Path(args.gt))
    if sorted(pred) != sorted(gt):
        raise ConfigError("prediction and ground truth cover different cameras")
    pred_sel, gt_sel = {}, {}
    for c in gt:
        ps, pp = pred[c]
        gs, gp = gt[c]
        lookup = {round(float(t), 6): i for i, t in enumerate(gs)}
        missing = [t for t in ps if round(float(t), 6) not in lookup]
        if missing:
            raise ConfigError(f"camera {c}: timestamps {missing[:3]} absent from ground truth")
        pred_sel[c] = pp
        gt_sel[c] = [gp[lookup[round(float(t), 6)]] for t in ps]
    report = evaluate(pred_sel, gt_sel, pred_cloud, gt_cloud, gap=args.rte_gap)
    print(report.to_csv(args.label), end="")
    return EXIT_FAILED if report.failed else EXIT_OK


def _cmd_export(args) -> int:
    src = Path(args.input)
    submaps = [load_bundle(src)] if (src / "manifest.json").is_file() else BundleDirectory(src)
    pts, cols = [], []
    for k in range(len(submaps)):
        sp = filter_submap(submaps[k], args.conf_pct)
        p = sp.valid_points()
        pts.append(p)
        cols.append(np.broadcast_to(submap_color(sp.k), p.shape))
    export_ply(np.concatenate(pts), np.concatenate(cols), args.out)
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "run": _cmd_run, "eval": _cmd_eval, "export": _cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, BundleFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SubmapAlignError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
