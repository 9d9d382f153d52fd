"""Command-line front end: ``settledamage <subcommand> ...``.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import severity as S
from .damage import NOISE_KINDS, REFERENCE_CLEAN_LOSS, accuracy_drop, iou, quantify, robustness_curve
from .errors import DataIOError, SettleDamageError, UsageError
from .networks import (CLASSIFIER_RECIPE, PARSER_RECIPE, PSPNetConfig, ResNetConfig, TrainingRecipe,
                       build_pspnet, build_resnet, evaluate, load_checkpoint, predict_logits,
                       save_checkpoint, train)

log = logging.getLogger("settledamage")

DEFAULT_SEED = 42
REFERENCE_SHARES = {"gentle": 0.39, "medium": 0.32, "severe": 0.29}


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _echo(**fields) -> None:
    print("# " + " ".join(f"{k}={v}" for k, v in fields.items()))


def _split_cases(manifest: D.DatasetManifest, split: str):
    if split == "all" or not manifest.splits:
        return manifest.cases
    return manifest.split(split)


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = D.SyntheticSceneSpec(args.image_size, (args.min_buildings, args.max_buildings),
                                (args.min_size, args.max_size), args.destruction)
    spec.validate()
    if args.cases < 0:
        raise UsageError("--cases must be non-negative")
    _echo(command="synth", cases=args.cases, destruction=args.destruction, seed=args.seed)
    path = D.write_synthetic_dataset(_out_dir(args), args.cases, spec, seed=args.seed)
    print(path)
    return 0


def cmd_train(args) -> int:
    base = CLASSIFIER_RECIPE if args.arch == "classifier" else PARSER_RECIPE
    recipe = TrainingRecipe(args.batch_size or base.batch_size, args.epochs or base.epochs,
                            args.lr or base.lr, args.seed, args.augment, args.noise)
    recipe.validate()
    _echo(command="train", arch=args.arch, batch_size=recipe.batch_size, epochs=recipe.epochs,
          lr=recipe.lr, seed=recipe.seed, augment=recipe.augment, noise=recipe.noise)
    manifest = D.load_manifest(_require_file(args.manifest, "manifest"))
    dataset = D.manifest_dataset(_split_cases(manifest, args.split), args.arch)
    if args.arch == "classifier":
        model = build_resnet(ResNetConfig(width_scale=args.width_scale, seed=args.seed))
    else:
        model = build_pspnet(PSPNetConfig(input_size=dataset.images.shape[-1], seed=args.seed))
    out = _out_dir(args)
    model, history = train(model, dataset, recipe,
                           callback=lambda s: log.info("epoch %d loss %.5f acc %.4f", s.epoch, s.loss, s.accuracy))
    ckpt = out / f"{args.arch}.ckpt"
    save_checkpoint(model, ckpt)
    D.export_history(history, out / f"{args.arch}_history.csv")
    print(ckpt)
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(_require_file(args.model, "model"))
    manifest = D.load_manifest(_require_file(args.manifest, "manifest"))
    dataset = D.manifest_dataset(_split_cases(manifest, args.split), model.arch)
    acc, loss = evaluate(model, dataset)
    result = {"arch": model.arch, "split": args.split, "samples": len(dataset),
              "metric": "image accuracy" if model.arch == "classifier" else "pixel accuracy",
              "accuracy": acc, "loss": loss, "reference_loss": REFERENCE_CLEAN_LOSS[model.arch]}
    if model.arch == "parser":
        pred = predict_logits(model, dataset.images).argmax(axis=1)
        result["built_iou"] = iou(pred.reshape(-1, pred.shape[-1]), dataset.targets.reshape(-1, pred.shape[-1]))
    print(json.dumps(result, indent=2))
    return 0


def cmd_quantify(args) -> int:
    model = load_checkpoint(_require_file(args.model, "model"))
    pre = D.load_image(_require_file(args.pre, "pre image"))
    post = D.load_image(_require_file(args.post, "post image"))
    if pre.shape != post.shape:
        raise UsageError(f"pre image {pre.shape[2:]} and post image {post.shape[2:]} differ in size")
    cluster = S.load_model(_require_file(args.cluster_model, "cluster model")) if args.cluster_model else None
    regression = S.load_model(_require_file(args.regression_model, "regression model")) \
        if args.regression_model else None
    if cluster is not None and not isinstance(cluster, S.ClusterModel):
        raise UsageError("--cluster-model is not a cluster model")
    if regression is not None and not isinstance(regression, S.RegressionModel):
        raise UsageError("--regression-model is not a regression model")
    report = quantify(model, pre, post, deaths_k=args.deaths, cluster=cluster, regression=regression)
    out = _out_dir(args) / "report.json"
    D.export_report(report, out)
    sys.stdout.write(D.report_json(report))
    return 0


def cmd_cluster(args) -> int:
    events = D.load_events(_require_file(args.events, "events table"))
    model = S.kmeans(events, k=args.k, seed=args.seed)
    out = _out_dir(args) / "cluster_model.json"
    S.save_model(model, out)
    _echo(command="cluster", k=args.k, seed=args.seed, events=len(events))
    for j in np.argsort(model.magnitude(), kind="stable"):
        name = model.severity[j]
        raw = model.centroids[j] * model.std + model.mean
        ref = f" (reference {REFERENCE_SHARES[name]:.0%})" if name in REFERENCE_SHARES and model.k == 3 else ""
        print(f"{name}: share {model.shares()[name]:.3f}{ref} centroid econ_loss_bn={raw[0]:.6g} deaths={raw[1]:.6g}")
    print(out)
    return 0


def cmd_fit(args) -> int:
    samples = D.load_samples(_require_file(args.samples, "samples table"))
    model = S.fit_ols(samples)
    if len(samples) >= 8:
        S.residual_normality(model, samples)
    out = _out_dir(args) / "regression_model.json"
    S.save_model(model, out)
    print(f"damage_fraction = {model.econ_coef:.10g} * econ_loss_bn + {model.deaths_coef:.10g} * deaths_k"
          f" + {model.intercept:.10g}")
    print(f"R2 = {model.r2:.6f} (reference: classifier {S.REFERENCE_R2['classifier']}, parser {S.REFERENCE_R2['parser']})")
    for name, (lo, hi) in model.ci95.items():
        print(f"95% CI {name}: [{lo:.6g}, {hi:.6g}]")
    if model.diagnostics:
        d = model.diagnostics
        print(f"residual JB = {d['jb']:.4f} (5% critical {d['critical_5pct']}): "
              f"{'normal' if d['normal_at_5pct'] else 'not normal'}")
    print(out)
    return 0


def cmd_predict(args) -> int:
    model = S.load_model(_require_file(args.model, "regression model"))
    if not isinstance(model, S.RegressionModel):
        raise UsageError("--model is not a regression model")
    econ, (lo, hi) = S.predict_economic_loss(args.fraction, args.deaths, model)
    print(json.dumps({"damage_fraction": args.fraction, "deaths_k": args.deaths, "econ_loss_bn": econ,
                      "econ_ci_95": [lo, hi], "ci_method": "first-order bounds (approximate)"}, indent=2))
    return 0


def _parse_levels(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--levels must be comma-separated numbers: {exc}") from exc


def cmd_robustness(args) -> int:
    levels = _parse_levels(args.levels)
    if not levels or levels[0] != 0 or any(b < a for a, b in zip(levels, levels[1:])):
        raise UsageError("--levels must be sorted ascending and start at 0")
    classifier = load_checkpoint(_require_file(args.classifier, "classifier model"))
    parser = load_checkpoint(_require_file(args.parser, "parser model"))
    if classifier.arch != "classifier" or parser.arch != "parser":
        raise UsageError("--classifier / --parser checkpoints have the wrong architecture")
    manifest = D.load_manifest(_require_file(args.manifest, "manifest"))
    cases = _split_cases(manifest, args.split)
    out = _out_dir(args)
    _echo(command="robustness", kind=args.kind, levels=",".join(map(str, levels)), seed=args.seed)
    curves = {}
    for name, model in (("classifier", classifier), ("parser", parser)):
        curve = robustness_curve(model, D.manifest_dataset(cases, name), levels, args.kind, args.seed)
        D.export_curve(curve, out / f"robustness_{name}.csv")
        curves[name] = curve
        for p in curve:
            print(f"{name} level={p.level:g} accuracy={p.accuracy:.4f} loss={p.loss:.4f}")
    top = levels[-1]
    drops = {k: accuracy_drop(c, top) for k, c in curves.items()}
    if drops["classifier"] < drops["parser"]:
        verdict = "classifier degrades less"
    elif drops["classifier"] > drops["parser"]:
        verdict = "parser degrades less"
    else:
        verdict = "both degrade equally"
    print(f"summary: at level {top:g} accuracy drop classifier={drops['classifier']:.4f} "
          f"parser={drops['parser']:.4f} -> {verdict}")
    print(f"reference clean losses: classifier {REFERENCE_CLEAN_LOSS['classifier']}, parser {REFERENCE_CLEAN_LOSS['parser']}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="settledamage", formatter_class=fmt,
                                 description="Quantify settlement damage from pre/post-disaster imagery.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        p.add_argument("--out-dir", default="out", help="output directory (created if absent)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed")
        return p

    p = add("synth", cmd_synth, "generate a synthetic pre/post dataset and manifest")
    p.add_argument("--cases", type=int, default=10, help="number of image pairs")
    p.add_argument("--destruction", type=float, default=0.5, help="fraction of built area destroyed")
    p.add_argument("--image-size", type=int, default=64, help="square image side in pixels")
    p.add_argument("--min-buildings", type=int, default=4, help="fewest buildings per scene")
    p.add_argument("--max-buildings", type=int, default=9, help="most buildings per scene")
    p.add_argument("--min-size", type=int, default=6, help="smallest building side (px)")
    p.add_argument("--max-size", type=int, default=14, help="largest building side (px)")

    p = add("train", cmd_train, "train the classifier or the scene parser")
    p.add_argument("--arch", choices=("classifier", "parser"), required=True, help="network to train")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--split", default="train", help="manifest split to train on (or 'all')")
    p.add_argument("--batch-size", type=int, default=None,
                   help="batch size (default: 16 classifier, 4 parser)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default: 30 classifier, 100 parser)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: 1e-5 classifier, 1e-4 parser)")
    p.add_argument("--width-scale", type=float, default=0.125, help="classifier width multiplier")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=False,
                   help="random flips and quarter turns")
    p.add_argument("--noise", type=float, default=0.0, help="max gaussian noise std added during training")

    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint on a manifest split")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--split", default="val", help="manifest split (or 'all')")

    p = add("quantify", cmd_quantify, "segment a pre/post pair and report the damage")
    p.add_argument("--model", required=True, help="parser checkpoint")
    p.add_argument("--pre", required=True, help="pre-disaster PNG")
    p.add_argument("--post", required=True, help="post-disaster PNG")
    p.add_argument("--deaths", type=float, default=0.0, help="death toll in thousands")
    p.add_argument("--cluster-model", default=None, help="cluster model JSON for severity")
    p.add_argument("--regression-model", default=None, help="regression model JSON for economic loss")

    p = add("cluster", cmd_cluster, "k-means severity clustering of an event table")
    p.add_argument("--events", required=True, help="event CSV (id,name,date,location,econ_loss_bn,deaths,category)")
    p.add_argument("--k", type=int, default=3, help="number of clusters")

    p = add("fit", cmd_fit, "fit the damage regression")
    p.add_argument("--samples", required=True, help="CSV with econ_loss_bn,deaths_k,damage_fraction")

    p = add("predict", cmd_predict, "invert the regression for economic loss")
    p.add_argument("--fraction", type=float, required=True, help="damage fraction (change rate)")
    p.add_argument("--deaths", type=float, default=0.0, help="death toll in thousands")
    p.add_argument("--model", required=True, help="regression model JSON")

    p = add("robustness", cmd_robustness, "compare classifier and parser under noise")
    p.add_argument("--classifier", required=True, help="classifier checkpoint")
    p.add_argument("--parser", required=True, help="parser checkpoint")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--split", default="val", help="manifest split (or 'all')")
    p.add_argument("--levels", default="0,0.1,0.2,0.3", help="comma-separated ascending noise levels")
    p.add_argument("--kind", choices=NOISE_KINDS, default="gaussian", help="noise family")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SettleDamageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
