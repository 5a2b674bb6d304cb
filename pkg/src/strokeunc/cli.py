"""Command-line entry point: ``strokeunc {gen,measure,train,predict,eval,cv}``.

Exit status is 0 on success, 1 when an input or flag fails validation and
2 on I/O failure; errors print one line to stderr. Every command writes
a manifest echoing its argv and the full effective configuration.
"""
from __future__ import annotations

import argparse
import io
import csv
import os
import sys

from . import __version__, metrics
from ._io import atomic_write_json, atomic_write_text
from .aggregate import (
    ALL_VARIANTS, DEFAULT_MC_RUNS, AggregationModel, FeatureVariant, TrainConfig, build_features,
    build_model, predictions_to_csv, read_predictions, train_aggregator,
)
from .measures import MEASURE_NAMES, N_BINS
from .pipeline import ExperimentConfig, cohort_summaries, run_experiment, write_experiment
from .predstore import STROKE, format_float, parse_samples_file, serialize_samples_text
from .synth import GeneratorConfig, generate

DEFAULT_SEED = 0


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _manifest(command: str, argv, config: dict, **extra) -> dict:
    return {"tool": "strokeunc", "version": __version__, "command": command,
            "argv": list(argv), "config": config, **extra}


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _grid(text):
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be comma-separated numbers") from None
    if any(not (0.0 <= v <= 1.0) for v in vals):
        raise argparse.ArgumentTypeError("grid fractions must lie in [0, 1]")
    return vals


def _variants(text):
    if text.strip() == "all":
        return tuple(v.name for v in ALL_VARIANTS)
    try:
        return tuple(FeatureVariant.parse(t).name for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


_GEN_FLAGS = {
    "n_stroke": "n_stroke_patients",
    "n_tia": "n_tia_patients",
    "min_images": "min_images",
    "max_images": "max_images",
    "mean_images": "mean_images",
    "mean_stroke_images": "mean_stroke_images",
    "mc_runs": "mc_runs",
    "concentration": "concentration",
    "difficulty_mix": "difficulty_mix",
    "patient_difficulty_concentration": "patient_difficulty_concentration",
    "label_noise": "label_noise",
}


def cmd_gen(args, argv):
    overrides = {field: getattr(args, flag) for flag, field in _GEN_FLAGS.items()
                 if getattr(args, flag) is not None}
    cfg = GeneratorConfig(seed=args.seed, **overrides)
    dataset, gm = generate(cfg)
    atomic_write_text(args.out, serialize_samples_text(dataset))
    manifest_path = args.manifest or args.out + ".manifest.json"
    atomic_write_json(
        manifest_path,
        _manifest("gen", argv, cfg.to_dict(), counts=gm.counts, patient_seeds=gm.patient_seeds),
    )


def cmd_measure(args, argv):
    dataset = parse_samples_file(args.data)
    summaries = cohort_summaries(dataset)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", "image_id", "p_bar_stroke", *MEASURE_NAMES, "predicted_class"])
    hbuf = io.StringIO()
    hw = csv.writer(hbuf, lineterminator="\n")
    hw.writerow(["patient_id", "image_id"] + [f"hist_bin_{j}" for j in range(1, N_BINS + 1)])
    for p in dataset:
        for im, s in zip(p.images, summaries[p.patient_id]):
            w.writerow([p.patient_id, im.image_id, format_float(s.p_stroke),
                        *[format_float(s.measure(m)) for m in MEASURE_NAMES], s.predicted_class])
            hw.writerow([p.patient_id, im.image_id] + [format_float(v) for v in s.hist[1]])
    atomic_write_text(args.out, buf.getvalue())
    if args.hist_out:
        atomic_write_text(args.hist_out, hbuf.getvalue())
    atomic_write_json(args.out + ".manifest.json", _manifest("measure", argv, {"data": args.data, "threshold": 0.5}))


def _examples(path, variant):
    dataset = parse_samples_file(path)
    summaries = cohort_summaries(dataset)
    return [(build_features(p, summaries[p.patient_id], variant), p.label) for p in dataset]


def cmd_train(args, argv):
    variant = FeatureVariant.parse(args.variant)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    if not variant.is_network:
        model = AggregationModel(variant)
    else:
        train = _examples(args.train, variant)
        valid = _examples(args.valid, variant) if args.valid else []
        net = build_model(variant)
        params, log = train_aggregator(net, train, valid, cfg)
        model = AggregationModel(variant, net, params, cfg, log)
        atomic_write_json(args.model_out + ".log.json", log.to_dict())
    model.save(args.model_out)
    atomic_write_json(
        args.model_out + ".manifest.json",
        _manifest("train", argv, {"variant": variant.name, "train": args.train, "valid": args.valid,
                                   **{k: getattr(cfg, k) for k in ("epochs", "batch_size", "lr", "beta1", "beta2", "eps", "seed")}}),
    )


def cmd_predict(args, argv):
    model = AggregationModel.load(args.model)
    dataset = parse_samples_file(args.data)
    summaries = cohort_summaries(dataset)
    preds = [model.predict(p, summaries[p.patient_id], args.mc_runs, args.seed) for p in dataset]
    atomic_write_text(args.out, predictions_to_csv(preds))
    atomic_write_json(
        args.out + ".manifest.json",
        _manifest("predict", argv, {"model": args.model, "data": args.data, "mc_runs": args.mc_runs,
                                     "seed": args.seed, "variant": model.variant.name}),
    )


def cmd_eval(args, argv):
    rows = read_predictions(args.predictions)
    if not rows:
        raise ValueError("predictions file has no rows")
    measures = {}
    for m in MEASURE_NAMES:
        vals = [r.measures[m] for r in rows]
        measures[m] = None if any(v is None for v in vals) else vals
    report = metrics.evaluate_predictions(
        [r.p_stroke for r in rows],
        [r.true_label == STROKE for r in rows],
        [r.predicted_label == STROKE for r in rows],
        measures, z=args.z, grid=args.grid, strict=True,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write_json(os.path.join(args.out_dir, "metrics.json"), report.to_dict())
    for fname, text in metrics.report_files(report).items():
        atomic_write_text(os.path.join(args.out_dir, fname), text)
    atomic_write_json(
        os.path.join(args.out_dir, "manifest.json"),
        _manifest("eval", argv, {"predictions": args.predictions, "z": args.z, "grid": list(args.grid)}),
    )


def cmd_cv(args, argv):
    train = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    config = ExperimentConfig(train=train, mc_runs=args.mc_runs, seed=args.seed, n_jobs=args.jobs)
    dataset = parse_samples_file(args.data)
    result = run_experiment(dataset, args.variants, config)
    cfg = config.to_dict()
    cfg.pop("n_jobs")  # outputs do not depend on it
    manifest = _manifest("cv", argv, {"data": args.data, "variants": list(args.variants), **cfg})
    write_experiment(result, args.out_dir, manifest)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="strokeunc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic cohort CSV and manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--n-stroke", type=int)
    g.add_argument("--n-tia", type=int)
    g.add_argument("--min-images", type=int)
    g.add_argument("--max-images", type=int)
    g.add_argument("--mean-images", type=float)
    g.add_argument("--mean-stroke-images", type=float)
    g.add_argument("--mc-runs", type=int)
    g.add_argument("--concentration", type=float)
    g.add_argument("--difficulty-mix", type=float)
    g.add_argument("--patient-difficulty-concentration", type=float)
    g.add_argument("--label-noise", type=float)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("measure", help="per-image uncertainty measures")
    m.add_argument("--data", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--hist-out", help="optional wide CSV of stroke-class histogram bins")
    m.set_defaults(func=cmd_measure)

    t = sub.add_parser("train", help="train one aggregation model")
    t.add_argument("--variant", required=True, help="max, fcnn/P, cnn1d/Hist, ...")
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--batch-size", type=_positive_int, default=TrainConfig.batch_size)
    t.add_argument("--lr", type=float, default=TrainConfig.lr)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--train", required=True)
    t.add_argument("--valid")
    t.add_argument("--model-out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="patient-level predictions with MC dropout")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--mc-runs", type=_positive_int, default=DEFAULT_MC_RUNS)
    pr.add_argument("--seed", type=int, default=DEFAULT_SEED)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="accuracy, calibration, ROC and removal curves")
    e.add_argument("--predictions", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--z", type=float, default=metrics.Z95)
    e.add_argument("--grid", type=_grid, default=metrics.DEFAULT_GRID)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cv", help="five-fold cross-validation of aggregators")
    c.add_argument("--data", required=True)
    c.add_argument("--variants", type=_variants, default=tuple(v.name for v in ALL_VARIANTS),
                   help="comma-separated variant names or 'all'")
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    c.add_argument("--batch-size", type=_positive_int, default=TrainConfig.batch_size)
    c.add_argument("--lr", type=float, default=TrainConfig.lr)
    c.add_argument("--mc-runs", type=_positive_int, default=DEFAULT_MC_RUNS)
    c.add_argument("--jobs", type=_positive_int, default=1)
    c.set_defaults(func=cmd_cv)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = "strokeunc"
    try:
        args = parser.parse_args(argv)
        command = f"strokeunc {args.command}"
        if getattr(args, "z", 1.0) <= 0:
            raise UsageError("--z must be positive")
        args.func(args, argv)
    except OSError as exc:
        print(f"{command}: I/O error: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"{command}: error: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
