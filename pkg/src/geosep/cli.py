"""``geosep`` command line.

Machine-readable results go to stdout (or ``--out``); diagnostics go to
stderr.  Exit status is 0 on success, 1 on I/O failure and 2 on usage or
input-contract errors.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

import numpy as np

from geosep import __version__
from geosep import geometry
from geosep.calibration import (
    FORMAT_VERSION,
    CalibrationError,
    IsotonicCalibrator,
    SeparationWarning,
    fit_calibrator,
    fit_curve_table,
    load_calibrator,
    predict_confidence,
    save_calibrator,
)
from geosep.data import DataError, load_dataset, load_predictions, write_dataset
from geosep.geometry import GeometryError, build_index
from geosep.metrics import MetricsError, ece
from geosep.pipeline import (
    ExperimentConfig,
    benchmark_throughput,
    generate_blobs,
    knn_predict,
    run_experiment,
)

CONTRACT_ERRORS = (DataError, GeometryError, CalibrationError, MetricsError, ValueError)


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _synthetic_shape(text):
    try:
        n, d = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxD, got {text!r}") from None
    if n < 2 or d < 1:
        raise argparse.ArgumentTypeError("synthetic shape needs N >= 2 and D >= 1")
    return n, d


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _emit(text, path):
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def _predict_labels(index, dataset, args, flag="labels"):
    """Predicted labels (and native confidence, if any) for every row of ``dataset``."""
    path = getattr(args, flag, None)
    if path:
        records = load_predictions(path, vocabulary=set(index.labels))
        by_index = {r.point_index: r for r in records}
        missing = [i for i in range(len(dataset)) if i not in by_index]
        if missing:
            raise DataError(f"--{flag.replace('_', '-')}: no prediction for input row {missing[0] + 1}")
        chosen = [by_index[i] for i in range(len(dataset))]
        conf = [r.native_confidence for r in chosen]
        return [r.predicted_label for r in chosen], (None if None in conf else np.array(conf))
    preds = [knn_predict(index, x, args.knn) for x in dataset.features]
    return [p[0] for p in preds], np.array([p[1] for p in preds])


def _check_dims(index, dataset, flag):
    if dataset.dimension != index.dimension:
        raise DataError(
            f"{flag} has {dataset.dimension} feature columns but --train has {index.dimension}"
        )


def cmd_separation(args):
    index = build_index(load_dataset(args.train))
    inputs = load_dataset(args.inputs)
    _check_dims(index, inputs, "--inputs")
    labels, _ = _predict_labels(index, inputs, args)
    fast = geometry.score_batch(index, inputs.features, labels, "fast")
    exact = geometry.score_batch(index, inputs.features, labels, "exact") if args.exact else None
    fh, close = _open_out(args.out)
    try:
        geometry.write_scores_csv(fh, labels, fast, exact)
    finally:
        if close:
            fh.close()


def cmd_calibrate(args):
    index = build_index(load_dataset(args.train))
    val = load_dataset(args.val)
    _check_dims(index, val, "--val")
    labels, _ = _predict_labels(index, val, args, flag="predictions")
    correct = np.array([p == t for p, t in zip(labels, val.point_labels)], dtype=np.float64)
    scores = geometry.score_batch(index, val.features, labels, args.score)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SeparationWarning)
        cal = fit_calibrator(scores, correct, args.kind)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_calibrator(cal, args.out)
    if args.dump_fit_curve:
        rows = fit_curve_table(scores, correct, cal, n_bins=50)
        lines = ["score_low,score_high,mean_score,accuracy,count,fitted"]
        lines += [f"{a:.9g},{b:.9g},{m:.9g},{acc:.9g},{n},{f:.9g}" for a, b, m, acc, n, f in rows]
        _emit("\n".join(lines) + "\n", args.dump_fit_curve)
    print(f"wrote {args.kind} calibrator from {len(val)} validation points to {args.out}", file=sys.stderr)


def cmd_predict(args):
    index = build_index(load_dataset(args.train))
    inputs = load_dataset(args.inputs)
    _check_dims(index, inputs, "--inputs")
    cal = load_calibrator(args.calibrator)
    labels, _ = _predict_labels(index, inputs, args)
    scores = geometry.score_batch(index, inputs.features, labels, args.score)
    conf = np.atleast_1d(predict_confidence(cal, scores))
    lines = ["index,predicted_label,score,confidence"]
    lines += [f"{i},{lab},{s:.9g},{c:.9g}" for i, (lab, s, c) in enumerate(zip(labels, scores, conf))]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_evaluate(args):
    if args.trials is not None or args.data is not None:
        if args.data is None:
            raise UsageError("--trials needs --data")
        config = ExperimentConfig(
            trials=args.trials or 10,
            m_bins=args.m_bins,
            knn_k=args.knn,
            score_kind=args.score,
            calibrator_kind=args.kind,
            seed=args.seed,
            workers=args.threads or os.cpu_count() or 1,
        )
        report = run_experiment(load_dataset(args.data), config)
        _emit(report.to_csv(), args.out)
        print(report.to_table(), file=sys.stderr)
        return
    missing = [f for f in ("train", "test", "calibrator") if getattr(args, f) is None]
    if missing:
        raise UsageError("single-split evaluation needs " + ", ".join(f"--{m}" for m in missing))
    index = build_index(load_dataset(args.train))
    test = load_dataset(args.test)
    _check_dims(index, test, "--test")
    cal = load_calibrator(args.calibrator)
    labels, _ = _predict_labels(index, test, args, flag="predictions")
    correct = np.array([p == t for p, t in zip(labels, test.point_labels)], dtype=np.float64)
    scores = geometry.score_batch(index, test.features, labels, args.score)
    report = ece(np.atleast_1d(predict_confidence(cal, scores)), correct, args.m_bins)
    _emit(report.to_csv(), args.out)


def cmd_bench(args):
    if (args.train is None) == (args.synthetic is None):
        raise UsageError("give exactly one of --train or --synthetic")
    if args.synthetic is not None:
        n, d = args.synthetic
        classes = min(10, n)
        train = generate_blobs(classes, max(1, n // classes), d, args.spread, seed=args.seed)
        pool = generate_blobs(classes, max(1, -(-args.queries // classes)), d, args.spread, seed=args.seed + 1)
        pick = np.arange(args.queries) % len(pool)
    else:
        train = load_dataset(args.train)
        pool = train
        pick = np.random.default_rng(args.seed).integers(0, len(train), size=args.queries)
    index = build_index(train)
    queries = pool.features[pick]
    labels = [pool.point_labels[i] for i in pick]
    if args.calibrator:
        cal = load_calibrator(args.calibrator)
    else:
        # timing depends on knot count only, not on the fitted values
        grid = np.linspace(-1.0, 1.0, 50)
        cal = IsotonicCalibrator(grid, (grid + 1.0) / 2.0)
    threads = None if args.threads == 0 else args.threads
    report = benchmark_throughput(index, cal, queries, labels, repeats=args.repeats, threads=threads)
    _emit(report.to_csv(), args.out)
    print(
        f"{report.predictions_per_second:.2f} ± {report.ci95_halfwidth:.2f} predictions/s "
        f"(train {report.train_size} x {report.dimension}, {report.queries} queries, {report.trials} repeats)",
        file=sys.stderr,
    )


def cmd_synth(args):
    data = generate_blobs(args.classes, args.per_class, args.dim, args.spread, seed=args.seed)
    write_dataset(data, sys.stdout if args.out == "-" else args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geosep",
        description="Geometric separation scores and confidence calibration.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"geosep {__version__} (calibrator format {FORMAT_VERSION}, dataset csv v1)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def predictor_flags(p, flag):
        group = p.add_mutually_exclusive_group()
        group.add_argument(f"--{flag}", metavar="PATH", help="predictions CSV: index,predicted_label[,native_confidence]")
        group.add_argument("--knn", type=_positive_int, default=5, metavar="K", help="use built-in k-NN predictions (default 5)")

    def score_flag(p):
        p.add_argument("--score", choices=("fast", "exact"), default="fast", help="separation score (default fast)")

    p = sub.add_parser("separation", help="score inputs by geometric separation")
    p.add_argument("--train", required=True, metavar="PATH")
    p.add_argument("--inputs", required=True, metavar="PATH")
    predictor_flags(p, "labels")
    p.add_argument("--exact", action="store_true", help="also compute exact separation")
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_separation)

    p = sub.add_parser("calibrate", help="fit a score-to-confidence calibrator")
    p.add_argument("--train", required=True, metavar="PATH")
    p.add_argument("--val", required=True, metavar="PATH")
    predictor_flags(p, "predictions")
    p.add_argument("--kind", choices=("isotonic", "logistic"), default="isotonic")
    score_flag(p)
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--dump-fit-curve", metavar="PATH", help="write the 50-bin score/accuracy table as CSV")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="confidence for new inputs from a saved calibrator")
    p.add_argument("--train", required=True, metavar="PATH")
    p.add_argument("--inputs", required=True, metavar="PATH")
    p.add_argument("--calibrator", required=True, metavar="PATH")
    predictor_flags(p, "labels")
    score_flag(p)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="expected calibration error on a test set or over repeated splits")
    p.add_argument("--train", metavar="PATH")
    p.add_argument("--test", metavar="PATH")
    p.add_argument("--calibrator", metavar="PATH")
    predictor_flags(p, "predictions")
    p.add_argument("--m-bins", type=_positive_int, default=30, metavar="M")
    p.add_argument("--trials", type=_positive_int, metavar="N")
    p.add_argument("--data", metavar="PATH", help="full dataset for repeated-split mode")
    p.add_argument("--kind", choices=("isotonic", "logistic"), default="isotonic")
    score_flag(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, metavar="N", help="parallel trials (default: all cores)")
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="throughput of fast-separation confidence estimation")
    p.add_argument("--train", metavar="PATH")
    p.add_argument("--synthetic", type=_synthetic_shape, metavar="NxD")
    p.add_argument("--queries", type=_positive_int, default=100, metavar="M")
    p.add_argument("--repeats", type=_positive_int, default=5)
    p.add_argument("--calibrator", metavar="PATH")
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, metavar="N", help="BLAS threads (0 = library default)")
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset")
    p.add_argument("--classes", type=_positive_int, required=True)
    p.add_argument("--per-class", type=_positive_int, required=True)
    p.add_argument("--dim", type=_positive_int, required=True)
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        sys.stdout.flush()
    except BrokenPipeError:
        # reader went away (e.g. `| head`); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"geosep {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except CONTRACT_ERRORS as exc:
        print(f"geosep {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"geosep {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
