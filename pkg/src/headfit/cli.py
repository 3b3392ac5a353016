"""Command-line pipeline: generate assets, synthesize data, train, evaluate.

Subcommands: gen-model, synth, train, infer, fit, eval, ablate, plot.
Every command takes --seed (all randomness flows from it) and --threads.
Exit codes: 0 on success, 1 on runtime failure (diagnostic on stderr),
2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .assets import (load_checkpoint, load_dataset, load_model,
                     parse_train_config, save_checkpoint, save_dataset,
                     save_model)
from .bencheval import ScanMesh, evaluate
from .encoder import FeatureStub, encode
from .headmodel import decode
from .modelgen import ModelGenConfig, build_desk_model
from .objio import read_mesh, write_obj
from .plots import (read_curve_csv, render_curves_svg, write_ablation_csv,
                    write_curve_csv, write_loss_csv)
from .synth import SynthConfig, make_dataset
from .training import (Adam, FitConfig, TrainConfig, ablate_ring_size,
                       fit_single, neutral_mesh, train)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="seed controlling all randomness")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-image evaluation")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headfit",
        description="desk-scale head-shape estimation from 2D landmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="generate a desk-scale model asset")
    p.add_argument("--out", required=True)
    p.add_argument("--rings", type=int, default=16)
    p.add_argument("--segments", type=int, default=22)
    p.add_argument("--shape-dims", type=int, default=10)
    p.add_argument("--expr-dims", type=int, default=5)
    p.add_argument("--static-landmarks", type=int, default=51)
    p.add_argument("--contour-landmarks", type=int, default=17)
    _add_common(p)

    p = sub.add_parser("synth", help="synthesize a labelled landmark dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--identities", type=int, default=8)
    p.add_argument("--per-identity", type=int, default=8)
    p.add_argument("--shape-std", type=float, default=1.0)
    p.add_argument("--noise-px", type=float, default=1.5)
    p.add_argument("--drop-prob", type=float, default=0.1)
    _add_common(p)

    p = sub.add_parser("train", help="train the encoder on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--config", help="key = value training config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--ring-size", type=int)
    p.add_argument("--slices", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    _add_common(p)

    p = sub.add_parser("infer", help="regress parameters and meshes for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--indices", help="comma-separated observation indices (default all)")
    p.add_argument("--neutral", action="store_true",
                   help="also write the pose/expression-free mesh")
    _add_common(p)

    p = sub.add_parser("fit", help="directly optimize parameters for one observation")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out-params", required=True)
    p.add_argument("--out-mesh")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.03)
    _add_common(p)

    p = sub.add_parser("eval", help="scan-to-mesh benchmark from a pairing manifest")
    p.add_argument("--manifest", required=True,
                   help="JSON pairing of prediction and scan files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--align", choices=("full", "landmarks", "none"), default="full")
    p.add_argument("--icp-iters", type=int, default=50)
    p.add_argument("--grid-max", type=float, default=7.0)
    p.add_argument("--grid-step", type=float, default=0.05)
    _add_common(p)

    p = sub.add_parser("ablate", help="ring-size sweep under identical budgets")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--val-dataset", required=True)
    p.add_argument("--ring-sizes", default="3,4,5,6")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("plot", help="render cumulative-curve CSVs to SVG")
    p.add_argument("curves", nargs="+", help="curve CSV files")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="comma-separated legend labels")
    p.add_argument("--title", default="cumulative scan-to-mesh error")
    _add_common(p)
    return parser


def _cmd_gen_model(args) -> int:
    config = ModelGenConfig(rings=args.rings, segments=args.segments,
                            n_shape=args.shape_dims, n_expr=args.expr_dims,
                            static_landmarks=args.static_landmarks,
                            contour_landmarks=args.contour_landmarks,
                            seed=args.seed)
    model = build_desk_model(config)
    save_model(args.out, model)
    print(f"wrote model asset {args.out}: N={model.n_vertices} "
          f"K={model.n_joints} shape={model.n_shape} expr={model.n_expr} "
          f"landmarks={model.landmarks.count}")
    return 0


def _cmd_synth(args) -> int:
    model = load_model(args.model)
    config = SynthConfig(identities=args.identities,
                         per_identity=args.per_identity,
                         shape_std=args.shape_std,
                         pixel_noise=args.noise_px,
                         drop_prob=args.drop_prob,
                         seed=args.seed)
    dataset = make_dataset(model, config)
    save_dataset(args.out, dataset)
    print(f"wrote dataset {args.out}: {len(dataset)} observations, "
          f"{config.identities} identities")
    return 0


def _cmd_train(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    config = (parse_train_config(Path(args.config).read_text(encoding="utf-8"))
              if args.config else TrainConfig())
    overrides = {}
    for field_name, value in (("epochs", args.epochs), ("steps", args.steps),
                              ("ring_size", args.ring_size),
                              ("slices", args.slices),
                              ("learning_rate", args.lr),
                              ("hidden", args.hidden),
                              ("dropout", args.dropout)):
        if value is not None:
            overrides[field_name] = value
    config = replace(config, seed=args.seed, **overrides)
    optimizer = Adam(config.learning_rate)
    weights, history = train(dataset, model, config, optimizer=optimizer)
    save_checkpoint(args.out_checkpoint, weights, optimizer, config,
                    step=len(history))
    if args.loss_csv:
        write_loss_csv(history, args.loss_csv)
    final = history[-1].total if history else float("nan")
    print(f"trained {len(history)} steps; final loss {final:.6g}; "
          f"checkpoint {args.out_checkpoint}")
    return 0


def _params_text(params) -> str:
    def fmt(name, arr):
        return f"{name} = " + " ".join(repr(float(x)) for x in arr)
    return "\n".join([fmt("cam", params.cam), fmt("global_rot", params.global_rot),
                      fmt("jaw_rot", params.jaw_rot), fmt("shape", params.shape),
                      fmt("expr", params.expr)]) + "\n"


def _cmd_infer(args) -> int:
    model = load_model(args.model)
    weights, _, _, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = (range(len(dataset)) if args.indices is None
               else [int(x) for x in args.indices.split(",")])
    for index in indices:
        obs = dataset.observations[index]
        params = encode(obs.landmarks, weights, FeatureStub())
        write_obj(decode(model, params), out_dir / f"obs{index:04d}.obj")
        (out_dir / f"obs{index:04d}.params.txt").write_text(
            _params_text(params), encoding="utf-8")
        if args.neutral:
            write_obj(neutral_mesh(model, params.shape),
                      out_dir / f"obs{index:04d}.neutral.obj")
    print(f"wrote {len(list(indices))} predictions to {out_dir}")
    return 0


def _cmd_fit(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    obs = dataset.observations[args.index]
    config = FitConfig(iters=args.iters, learning_rate=args.lr)
    params = fit_single(obs, model, config=config)
    Path(args.out_params).write_text(_params_text(params), encoding="utf-8")
    if args.out_mesh:
        write_obj(decode(model, params), args.out_mesh)
    print(f"fit observation {args.index}; parameters at {args.out_params}")
    return 0


def _read_points(path) -> np.ndarray:
    rows = [[float(x) for x in line.split()]
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()]
    return np.array(rows).reshape(-1, 3)


def _cmd_eval(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    base = Path(args.manifest).parent
    predictions = []
    scans = []
    ids = []
    for pair in manifest["pairs"]:
        ids.append(str(pair.get("id", f"img{len(ids):04d}")))
        scan_mesh = read_mesh(base / pair["scan"])
        scans.append(ScanMesh(scan_mesh.vertices, scan_mesh.faces,
                              _read_points(base / pair["scan_landmarks"]),
                              subject=str(pair.get("subject", "")),
                              challenge=pair.get("challenge", "neutral")))
        if not pair.get("prediction"):
            predictions.append(None)
            continue
        pred_mesh = read_mesh(base / pair["prediction"])
        predictions.append((pred_mesh,
                            _read_points(base / pair["prediction_landmarks"])))
    thresholds = np.arange(0.0, args.grid_max + args.grid_step / 2, args.grid_step)
    report = evaluate(predictions, scans, thresholds, image_ids=ids,
                      align=args.align, icp_max_iters=args.icp_iters,
                      threads=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    write_curve_csv(report, out_dir / "curve.csv")
    render_curves_svg([("all", report.curve_thresholds, report.curve_fractions)],
                      out_dir / "curve.svg")
    print(report.to_text(), end="")
    return 0


def _cmd_ablate(args) -> int:
    model = load_model(args.model)
    train_set = load_dataset(args.dataset)
    val_set = load_dataset(args.val_dataset)
    ring_sizes = [int(x) for x in args.ring_sizes.split(",")]
    config = TrainConfig(steps=args.steps, seed=args.seed)
    rows = ablate_ring_size(train_set, val_set, model, ring_sizes, config)
    write_ablation_csv(rows, args.out)
    print("ring_size  median_mm  mean_mm    std_mm")
    for row in rows:
        print(f"{row.ring_size:<10d}{row.median_mm:<11.4f}{row.mean_mm:<11.4f}"
              f"{row.std_mm:.4f}")
    return 0


def _cmd_plot(args) -> int:
    labels = (args.labels.split(",") if args.labels
              else [Path(p).stem for p in args.curves])
    if len(labels) != len(args.curves):
        raise ValueError("need one label per curve file")
    curves = []
    for label, path in zip(labels, args.curves):
        xs, ys = read_curve_csv(path)
        curves.append((label, xs, ys))
    render_curves_svg(curves, args.out, title=args.title)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-model": _cmd_gen_model,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "fit": _cmd_fit,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "plot": _cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as err:  # surface a diagnostic, not a traceback
        print(f"headfit {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
