"""Experiment runner and throughput benchmark.

One trial splits the data, indexes the training part, predicts the
validation and test parts (built-in k-NN or externally supplied labels),
fits a score-to-confidence calibrator on validation and measures ECE on test.
The model's own confidence, when there is one, goes through the same
calibration path as a baseline.
"""

from __future__ import annotations

import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from geosep import geometry
from geosep.calibration import Calibrator, fit_calibrator, predict_confidence
from geosep.data import DataError, Dataset, PredictionRecord, split_dataset
from geosep.geometry import ClassPartitionIndex, build_index
from geosep.metrics import TrialSummary, accuracy, aggregate_trials, ece


@dataclass(frozen=True)
class ExperimentConfig:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    trials: int = 10
    m_bins: int = 30
    score_kind: str = "fast"
    calibrator_kind: str = "isotonic"
    knn_k: int = 5
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be three positive numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("ratios must sum to 1")
        for name in ("trials", "m_bins", "knn_k", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.score_kind not in ("fast", "exact"):
            raise ValueError(f"score_kind must be 'fast' or 'exact', not {self.score_kind!r}")
        if self.calibrator_kind not in ("isotonic", "logistic"):
            raise ValueError(f"calibrator_kind must be 'isotonic' or 'logistic', not {self.calibrator_kind!r}")


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    accuracy: float
    geometric_ece: float
    native_ece: float | None
    native_raw_ece: float | None


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    trials: tuple[TrialResult, ...]

    @property
    def geometric_ece(self) -> list[float]:
        return [t.geometric_ece for t in self.trials]

    @property
    def native_ece(self) -> list[float] | None:
        if any(t.native_ece is None for t in self.trials):
            return None
        return [t.native_ece for t in self.trials]

    @property
    def native_raw_ece(self) -> list[float] | None:
        if any(t.native_raw_ece is None for t in self.trials):
            return None
        return [t.native_raw_ece for t in self.trials]

    @property
    def accuracy(self) -> list[float]:
        return [t.accuracy for t in self.trials]

    def summary(self, metric: str) -> TrialSummary | None:
        """Aggregated ``metric``; None when it is unavailable or there is one trial."""
        values = getattr(self, metric)
        if values is None or len(values) < 2:
            return None
        return aggregate_trials(values)

    _COLUMNS = ("accuracy", "geometric_ece", "native_ece", "native_raw_ece")

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.17g}"

        out = io.StringIO()
        out.write("row,seed," + ",".join(self._COLUMNS) + "\n")
        for t in self.trials:
            out.write(f"{t.trial},{t.seed}," + ",".join(fmt(getattr(t, c)) for c in self._COLUMNS) + "\n")
        sums = {c: self.summary(c) for c in self._COLUMNS}
        out.write("mean,," + ",".join(fmt(s.mean if s else None) for s in sums.values()) + "\n")
        out.write("ci95,," + ",".join(fmt(s.ci95_halfwidth if s else None) for s in sums.values()) + "\n")
        return out.getvalue()

    def to_table(self) -> str:
        cfg = self.config
        lines = [
            f"trials={len(self.trials)} score={cfg.score_kind} calibrator={cfg.calibrator_kind} "
            f"M={cfg.m_bins} k={cfg.knn_k} seed={cfg.seed}",
            f"{'metric':<16}{'mean':>12}{'ci95 (z=1.96)':>16}",
        ]
        for c in self._COLUMNS:
            values = getattr(self, c)
            if values is None:
                continue
            s = self.summary(c)
            if s is None:
                lines.append(f"{c:<16}{values[0]:>12.6f}{'n/a':>16}")
            else:
                lines.append(f"{c:<16}{s.mean:>12.6f}{s.ci95_halfwidth:>16.6f}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ThroughputReport:
    predictions_per_second: float
    trials: int
    ci95_halfwidth: float
    train_size: int
    dimension: int
    queries: int = 0
    threads: int | None = 1
    per_trial: tuple[float, ...] = field(default=())

    def to_csv(self) -> str:
        threads = "all" if self.threads is None else self.threads
        return (
            "predictions_per_second,ci95_halfwidth,trials,train_size,dimension,queries,threads\n"
            f"{self.predictions_per_second:.6g},{self.ci95_halfwidth:.6g},{self.trials},"
            f"{self.train_size},{self.dimension},{self.queries},{threads}\n"
        )


def knn_predict(index: ClassPartitionIndex, x, k: int) -> tuple[str, float]:
    """Majority label of the ``k`` nearest training points and its vote share.

    Vote ties go to the label whose tied neighbors are nearer on average, then
    to the lexicographically smaller label.
    """
    if k > index.total_count:
        raise ValueError(f"k={k} exceeds training set size {index.total_count}")
    labels, dists = index.nearest(x, k)
    tally: dict[str, list[float]] = {}
    for lab, dist in zip(labels, dists):
        tally.setdefault(lab, []).append(float(dist))
    best = min(tally, key=lambda lab: (-len(tally[lab]), sum(tally[lab]) / len(tally[lab]), lab))
    return best, len(tally[best]) / k


def generate_blobs(classes: int, per_class: int, dimension: int, spread: float, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters labeled ``c0``, ``c1``, ...

    With ``classes <= dimension`` the means are scaled basis vectors, pairwise
    distance 1; otherwise they sit on the first axis, 1 apart.
    """
    if classes < 1 or per_class < 1 or dimension < 1:
        raise ValueError("classes, per_class and dimension must be positive")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    means = np.zeros((classes, dimension))
    if classes <= dimension:
        means[np.arange(classes), np.arange(classes)] = 1.0 / math.sqrt(2.0)
    else:
        means[:, 0] = np.arange(classes, dtype=np.float64)
    feats = np.repeat(means, per_class, axis=0)
    feats += spread * rng.standard_normal(feats.shape)
    labels = [f"c{i}" for i in range(classes) for _ in range(per_class)]
    return Dataset(feats, labels)


def _external_for_trial(external, trial: int, trials: int):
    if external is None:
        return None
    if len(external) and isinstance(external[0], PredictionRecord):
        return external
    if len(external) != trials:
        raise DataError(f"external predictions given for {len(external)} trials, expected {trials}")
    return external[trial]


def _lookup_predictions(records, indices, vocabulary):
    by_index = {}
    for r in records:
        if r.predicted_label not in vocabulary:
            raise DataError(f"unknown predicted label {r.predicted_label!r} for point {r.point_index}")
        by_index[r.point_index] = r
    missing = [i for i in indices if i not in by_index]
    if missing:
        raise DataError(f"external predictions missing for {len(missing)} points (first: {missing[0]})")
    chosen = [by_index[i] for i in indices]
    labels = [r.predicted_label for r in chosen]
    conf = [r.native_confidence for r in chosen]
    return labels, (None if any(c is None for c in conf) else np.array(conf, dtype=np.float64))


def _knn_all(index, feats, k):
    out = [knn_predict(index, x, k) for x in feats]
    return [o[0] for o in out], np.array([o[1] for o in out], dtype=np.float64)


def run_trial(data: Dataset, config: ExperimentConfig, trial: int, external=None) -> TrialResult:
    seed = config.seed + trial
    split = split_dataset(data, config.ratios, seed)
    index = build_index(split.train)
    records = _external_for_trial(external, trial, config.trials)
    if records is None:
        if config.knn_k > len(split.train):
            raise ValueError(f"knn_k={config.knn_k} exceeds training split size {len(split.train)}")
        val_pred, val_native = _knn_all(index, split.validation.features, config.knn_k)
        test_pred, test_native = _knn_all(index, split.test.features, config.knn_k)
    else:
        vocab = data.labels
        val_pred, val_native = _lookup_predictions(records, split.validation_indices, vocab)
        test_pred, test_native = _lookup_predictions(records, split.test_indices, vocab)
    for lab in set(val_pred) | set(test_pred):
        if lab not in index.labels:
            raise DataError(f"predicted label {lab!r} has no training points in trial {trial}")

    val_ok = np.array([p == t for p, t in zip(val_pred, split.validation.point_labels)], dtype=np.float64)
    test_ok = np.array([p == t for p, t in zip(test_pred, split.test.point_labels)], dtype=np.float64)

    val_scores = geometry.score_batch(index, split.validation.features, val_pred, config.score_kind)
    test_scores = geometry.score_batch(index, split.test.features, test_pred, config.score_kind)
    cal = fit_calibrator(val_scores, val_ok, config.calibrator_kind)
    geo = ece(predict_confidence(cal, test_scores), test_ok, config.m_bins).ece

    native = native_raw = None
    if val_native is not None and test_native is not None:
        native_cal = fit_calibrator(val_native, val_ok, config.calibrator_kind)
        native = ece(predict_confidence(native_cal, test_native), test_ok, config.m_bins).ece
        native_raw = ece(test_native, test_ok, config.m_bins).ece

    acc = accuracy(test_pred, list(split.test.point_labels))
    return TrialResult(trial, seed, acc, geo, native, native_raw)


def run_experiment(data: Dataset, config: ExperimentConfig = ExperimentConfig(), external_predictions=None) -> ExperimentReport:
    """Run ``config.trials`` independent trials with seeds ``seed, seed+1, ...``.

    ``external_predictions`` is either one list of ``PredictionRecord`` (indices
    into ``data``) reused by every trial, or one such list per trial.
    """
    if len(data.labels) < 2:
        raise DataError("experiment needs at least two classes")
    if config.workers > 1 and config.trials > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(
                lambda t: run_trial(data, config, t, external_predictions), range(config.trials)
            ))
    else:
        results = [run_trial(data, config, t, external_predictions) for t in range(config.trials)]
    return ExperimentReport(config, tuple(results))


def benchmark_throughput(
    index: ClassPartitionIndex,
    calibrator: Calibrator,
    queries,
    predicted_labels: Sequence[str],
    repeats: int = 5,
    threads: int | None = 1,
) -> ThroughputReport:
    """Time fast-separation scoring plus calibration over ``queries``.

    One untimed warm-up pass precedes ``repeats`` timed passes.  ``threads=1``
    pins BLAS to one thread; ``None`` leaves the thread pool alone.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[0] == 0:
        raise ValueError("no benchmark queries")
    if len(predicted_labels) != queries.shape[0]:
        raise ValueError("queries and predicted labels differ in length")
    if repeats < 1:
        raise ValueError("repeats must be positive")

    def one_pass():
        for x, lab in zip(queries, predicted_labels):
            s = geometry.fast_separation(index, x, lab)
            predict_confidence(calibrator, s.value)

    rates = []
    with threadpool_limits(limits=threads):
        one_pass()
        for _ in range(repeats):
            t0 = time.perf_counter()
            one_pass()
            rates.append(queries.shape[0] / (time.perf_counter() - t0))
    if len(rates) >= 2:
        summary = aggregate_trials(rates)
        mean, half = summary.mean, summary.ci95_halfwidth
    else:
        mean, half = rates[0], math.nan
    return ThroughputReport(
        predictions_per_second=mean,
        trials=repeats,
        ci95_halfwidth=half,
        train_size=index.total_count,
        dimension=index.dimension,
        queries=queries.shape[0],
        threads=threads,
        per_trial=tuple(rates),
    )
