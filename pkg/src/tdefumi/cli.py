"""Command-line pipeline: simulate, prescreen, alarms, train, classify, score, plot.

Every stage writes its outputs plus a YAML echo of the fully resolved
parameters, so a run can be reproduced from its output directory alone.
Exit codes: 0 success, 1 validation/input error, 2 unexpected failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as tdio
from .alarms import (
    alarms_to_bags,
    extract_alarms,
    label_alarms,
    lane_mean_subtract,
    mean_shift,
    percentile_tau,
    prescreen,
    threshold_confidences,
)
from .dsrf import build_dsrf_dictionary, default_scene, default_zeta_grid, simulate_lane
from .evaluation import compare_report, ignore_clutter, make_folds, roc
from .io import FileFormatError
from .solvers import SolverConfig
from .training import TrainConfig, classify_alarm, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _load_lanes(lanes_dir):
    lanes = {}
    paths = sorted(Path(lanes_dir).glob("lane_*.csv"))
    if not paths:
        raise FileFormatError(f"no lane_*.csv files found in {lanes_dir}")
    for path in paths:
        lane = tdio.read_lane(path, lane_id=path.stem.removeprefix("lane_"))
        lanes[lane.lane_id] = lane
    return lanes


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scene:
        scene = tdio.read_scene(args.scene)
        if args.seed is not None:
            scene.seed = args.seed
    else:
        scene = default_scene(seed=args.seed if args.seed is not None else 0)
    truth = []
    for i, spec in enumerate(scene.lanes):
        lane, lane_truth = simulate_lane(scene, i)
        tdio.write_lane(out / f"lane_{spec.lane_id}.csv", lane)
        truth.extend(lane_truth)
    tdio.write_ground_truth(out / "ground_truth.csv", truth)
    tdio.write_scene(out / "scene.yaml", scene)
    tdio.write_config_echo(
        out / "simulate_config.yaml",
        {"scene": args.scene or "default", "seed": scene.seed, "out": str(args.out)},
    )
    print(f"wrote {len(scene.lanes)} lanes and {len(truth)} ground-truth objects to {out}")
    return 0


def cmd_prescreen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lanes = _load_lanes(args.lanes)
    solver = SolverConfig(k_max=args.k_max)
    for lane_id in sorted(lanes):
        lane = lanes[lane_id]
        zetas = default_zeta_grid(lane.grid, args.n_zetas)
        dictionary = build_dsrf_dictionary(lane.grid, zetas, normalize=True)
        cmap = prescreen(lane, dictionary, offset_samples=args.offset, cfg=solver)
        tdio.write_confidence_map(out / f"confidence_{lane_id}.csv", cmap)
    tdio.write_config_echo(
        out / "prescreen_config.yaml",
        {
            "lanes": str(args.lanes),
            "offset": args.offset,
            "n_zetas": args.n_zetas,
            "k_max": args.k_max,
            "out": str(args.out),
        },
    )
    print(f"wrote {len(lanes)} confidence maps to {out}")
    return 0


def cmd_alarms(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lanes = _load_lanes(args.lanes)
    truth = tdio.read_ground_truth(args.truth)
    all_alarms = []
    for lane_id in sorted(lanes):
        lane = lanes[lane_id]
        cmap = tdio.read_confidence_map(
            Path(args.confidences) / f"confidence_{lane_id}.csv", lane_id
        )
        tau = args.tau if args.tau is not None else percentile_tau(cmap, args.keep_top)
        positions = threshold_confidences(cmap, tau)
        if positions.size == 0:
            continue
        centroids = mean_shift(positions, bandwidth_m=args.bandwidth)
        subtracted = lane_mean_subtract(lane)
        alarms = extract_alarms(subtracted, centroids, radius_m=args.radius, cmap=cmap)
        all_alarms.extend(label_alarms(alarms, truth, halo_m=args.halo))
    tdio.write_alarms(out / "alarms.csv", out / "alarms_points.csv", all_alarms)
    tdio.write_config_echo(
        out / "alarms_config.yaml",
        {
            "lanes": str(args.lanes),
            "confidences": str(args.confidences),
            "truth": str(args.truth),
            "keep_top": args.keep_top,
            "tau": args.tau,
            "bandwidth": args.bandwidth,
            "radius": args.radius,
            "halo": args.halo,
            "out": str(args.out),
        },
    )
    n_target = sum(1 for a in all_alarms if a.label == "target")
    print(f"wrote {len(all_alarms)} alarms ({n_target} target) to {out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        n_target_atoms=args.target_atoms,
        n_background_atoms=args.background_atoms,
        mean_reg=args.mean_reg,
        classifier_ridge=args.classifier_ridge,
        smooth_reg=args.smooth_reg,
        sparse_penalty=args.sparse_penalty,
        posterior_scale=args.posterior_scale,
        balance_scale=args.balance_scale,
        batch_size=args.batch_size,
        n_epochs=args.epochs,
        learning_rate=args.learning_rate,
        grad_ridge=args.grad_ridge,
        tol=args.tol,
        seed=args.seed,
    )


def _config_echo_fields(cfg: TrainConfig) -> dict:
    return {
        "n_target_atoms": cfg.n_target_atoms,
        "n_background_atoms": cfg.n_background_atoms,
        "mean_reg": cfg.mean_reg,
        "classifier_ridge": cfg.classifier_ridge,
        "smooth_reg": cfg.smooth_reg,
        "sparse_penalty": cfg.sparse_penalty,
        "posterior_scale": cfg.posterior_scale,
        "balance_scale": cfg.balance_scale,
        "batch_size": cfg.batch_size,
        "n_epochs": cfg.n_epochs,
        "learning_rate": cfg.learning_rate,
        "lr_decay_steps": cfg.lr_decay_steps,
        "grad_ridge": cfg.grad_ridge,
        "tol": cfg.tol,
        "seed": cfg.seed,
    }


def _load_alarms(args, lanes):
    subtracted = {lid: lane_mean_subtract(lane) for lid, lane in lanes.items()}
    alarms_dir = Path(args.alarms)
    return tdio.read_alarms(alarms_dir / "alarms.csv", alarms_dir / "alarms_points.csv", subtracted)


def cmd_train(args) -> int:
    lanes = _load_lanes(args.lanes)
    alarms = _load_alarms(args, lanes)
    if args.test_lane is not None:
        if args.test_lane not in lanes:
            raise FileFormatError(f"unknown test lane {args.test_lane!r}")
        fold_lanes = make_folds(sorted(lanes))
        fold = next(f for f in fold_lanes if f.test_lane_id == args.test_lane)
        alarms = [a for a in alarms if a.lane_id in fold.train_lane_ids]
    bags = alarms_to_bags(alarms)
    grid = next(iter(lanes.values())).grid
    cfg = _train_config(args)
    model = train(bags, cfg, grid=grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tdio.write_model(out, model)
    echo = {
        "lanes": str(args.lanes),
        "alarms": str(args.alarms),
        "test_lane": args.test_lane,
        "out": str(args.out),
    }
    echo.update(_config_echo_fields(cfg))
    tdio.write_config_echo(out.with_suffix(".config.yaml"), echo)
    print(f"trained on {len(bags)} bags; model written to {out}")
    return 0


def cmd_classify(args) -> int:
    lanes = _load_lanes(args.lanes)
    alarms = _load_alarms(args, lanes)
    if args.test_lane is not None:
        alarms = [a for a in alarms if a.lane_id == args.test_lane]
    model = tdio.read_model(args.model)
    scores = [classify_alarm(a.points, model, pooling=args.pooling) for a in alarms]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tdio.write_scores(out, alarms, scores)
    tdio.write_config_echo(
        out.with_suffix(".config.yaml"),
        {
            "lanes": str(args.lanes),
            "alarms": str(args.alarms),
            "model": str(args.model),
            "test_lane": args.test_lane,
            "pooling": args.pooling,
            "out": str(args.out),
        },
    )
    print(f"wrote {len(scores)} alarm scores to {out}")
    return 0


def cmd_score(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.scores:
        rows.extend(tdio.read_scores(path))
    if not rows:
        raise FileFormatError("no score rows found")
    truth = tdio.read_ground_truth(args.truth)

    class _Scored:
        __slots__ = ("lane_id", "position_m", "label", "prescreener_conf", "score", "matched_type")

        def __init__(self, lane_id, pos, label, conf, score):
            self.lane_id = lane_id
            self.position_m = pos
            self.label = label
            self.prescreener_conf = conf
            self.score = score
            self.matched_type = None

    scored = [_Scored(*row) for row in rows]
    for item in scored:
        if item.label == "target":
            best = None
            for obj in truth:
                if obj.object_type == "CL" or obj.lane_id != item.lane_id:
                    continue
                dist = abs(obj.position_m - item.position_m)
                if dist <= args.halo and (best is None or dist < best[0]):
                    best = (dist, obj.object_type)
            item.matched_type = best[1] if best else None
    if args.ignore_clutter:
        scored = ignore_clutter(scored, truth, halo_m=args.halo)
    labels = [s.label for s in scored]
    report = compare_report(
        labels,
        [s.matched_type for s in scored],
        [s.prescreener_conf for s in scored],
        [s.score for s in scored],
        ground_truth=truth,
        alarms=scored,
        halo_m=args.halo,
    )
    tdio.write_roc(out / "roc_prescreener.csv", report.prescreener)
    tdio.write_roc(out / "roc_classifier.csv", report.classifier)
    for otype, entry in report.subsets.items():
        if not isinstance(entry, str):
            tdio.write_roc(out / f"roc_prescreener_{otype.lower()}.csv", entry[0])
            tdio.write_roc(out / f"roc_classifier_{otype.lower()}.csv", entry[1])
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(
        "\n".join(",".join(str(v) for v in row) for row in report.to_csv_rows()) + "\n"
    )
    tdio.write_config_echo(
        out / "score_config.yaml",
        {
            "scores": [str(p) for p in args.scores],
            "truth": str(args.truth),
            "ignore_clutter": bool(args.ignore_clutter),
            "halo": args.halo,
            "out": str(args.out),
        },
    )
    print(report.to_text(), end="")
    return 0


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_plot(curves) -> str:
    width, height, margin = 640, 480, 60
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin

    def x(v):
        return margin + v * inner_w

    def y(v):
        return height - margin - v * inner_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{inner_w}" height="{inner_h}" '
        'fill="none" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<line x1="{x(tick):.1f}" y1="{y(0):.1f}" x2="{x(tick):.1f}" y2="{y(0) + 5:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x(tick):.1f}" y="{y(0) + 20:.1f}" font-size="12" text-anchor="middle">{tick:g}</text>'
        )
        parts.append(
            f'<line x1="{x(0):.1f}" y1="{y(tick):.1f}" x2="{x(0) - 5:.1f}" y2="{y(tick):.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x(0) - 8:.1f}" y="{y(tick) + 4:.1f}" font-size="12" text-anchor="end">{tick:g}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 15:.1f}" font-size="14" text-anchor="middle">false alarm rate</text>'
    )
    parts.append(
        f'<text x="18" y="{height / 2:.1f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 18 {height / 2:.1f})">probability of detection</text>'
    )
    for i, (name, far, pd) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{x(f):.2f},{y(p):.2f}" for f, p in zip(far, pd))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = margin + 18 + 16 * i
        parts.append(
            f'<line x1="{margin + 8}" y1="{ly - 4:.1f}" x2="{margin + 28}" y2="{ly - 4:.1f}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(f'<text x="{margin + 34}" y="{ly:.1f}" font-size="12">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    curves = []
    for path in args.rocs:
        curve = tdio.read_roc(path)
        far = np.clip(curve.far, 0.0, 1.0)
        pd = np.clip(curve.pd, 0.0, 1.0)
        curves.append((Path(path).stem, far, pd))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_svg_plot(curves))
    print(f"wrote {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tdefumi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize lanes and ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", default=None, help="scene YAML; omit for the default six-lane scene")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prescreen", help="joint-pursuit confidence maps per lane")
    p.add_argument("--lanes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offset", type=int, default=5)
    p.add_argument("--n-zetas", type=int, default=30)
    p.add_argument("--k-max", type=int, default=1)
    p.set_defaults(func=cmd_prescreen)

    p = sub.add_parser("alarms", help="threshold, cluster, gather, and label alarms")
    p.add_argument("--lanes", required=True)
    p.add_argument("--confidences", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep-top", type=float, default=0.05, help="fraction of confidences kept")
    p.add_argument("--tau", type=float, default=None, help="absolute threshold; overrides --keep-top")
    p.add_argument("--bandwidth", type=float, default=0.25)
    p.add_argument("--radius", type=float, default=0.25)
    p.add_argument("--halo", type=float, default=0.25)
    p.set_defaults(func=cmd_alarms)

    p = sub.add_parser("train", help="fit the detector on labeled alarms")
    p.add_argument("--lanes", required=True)
    p.add_argument("--alarms", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-lane", default=None, help="lane held out of training")
    p.add_argument("--target-atoms", type=int, default=2)
    p.add_argument("--background-atoms", type=int, default=8)
    p.add_argument("--mean-reg", type=float, default=0.05)
    p.add_argument("--classifier-ridge", type=float, default=1e-3)
    p.add_argument("--smooth-reg", type=float, default=1e-2)
    p.add_argument("--sparse-penalty", type=float, default=0.1)
    p.add_argument("--posterior-scale", type=float, default=5.0)
    p.add_argument("--balance-scale", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--grad-ridge", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score alarms with a trained model")
    p.add_argument("--lanes", required=True)
    p.add_argument("--alarms", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-lane", default=None)
    p.add_argument("--pooling", choices=("max", "mean"), default="max")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("score", help="clutter-aware ROC curves and the comparison report")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--halo", type=float, default=0.25)
    p.add_argument("--ignore-clutter", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plot", help="overlay ROC CSVs in a static SVG")
    p.add_argument("rocs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FileFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
