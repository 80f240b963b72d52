"""Monotone maps from separation scores to confidence.

Validation-set scores are paired with whether the classifier was right,
grouped by unique score, and fitted with isotonic regression (default) or a
logistic curve.  Calibrators are immutable and serialize to a small text
format::

    geosep-isotonic v1
    <breakpoint>\t<value>
    ...

or ``geosep-logistic v1`` followed by one ``<slope>\t<offset>`` line.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

ISOTONIC_HEADER = "geosep-isotonic v1"
LOGISTIC_HEADER = "geosep-logistic v1"
FORMAT_VERSION = "v1"


class CalibrationError(ValueError):
    pass


class CalibratorFormatError(CalibrationError):
    pass


class SeparationWarning(UserWarning):
    """Outcomes are perfectly separated by score; the logistic slope was capped."""


@dataclass(frozen=True)
class CalibrationPair:
    score: float
    correct: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise CalibrationError(f"weight must be positive, got {self.weight}")
        if not 0.0 <= self.correct <= 1.0:
            raise CalibrationError(f"outcome must lie in [0, 1], got {self.correct}")
        if not math.isfinite(self.score):
            raise CalibrationError("score must be finite")


@dataclass(frozen=True)
class IsotonicCalibrator:
    breakpoints: np.ndarray
    fitted_values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=np.float64)
        fv = np.array(self.fitted_values, dtype=np.float64)
        if bp.ndim != 1 or bp.shape != fv.shape or bp.size == 0:
            raise CalibrationError("breakpoints and values must be equal-length non-empty vectors")
        if np.any(np.diff(bp) <= 0):
            raise CalibrationError("breakpoints must be strictly increasing")
        if np.any(np.diff(fv) < 0):
            raise CalibrationError("fitted values must be non-decreasing")
        if np.any((fv < 0) | (fv > 1)):
            raise CalibrationError("fitted values must lie in [0, 1]")
        bp.setflags(write=False)
        fv.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "fitted_values", fv)

    def __call__(self, scores):
        return predict_confidence(self, scores)


@dataclass(frozen=True)
class LogisticCalibrator:
    slope: float
    offset: float
    separated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.slope) and math.isfinite(self.offset)):
            raise CalibrationError("logistic parameters must be finite")
        if self.slope < 0:
            raise CalibrationError("logistic slope must be non-negative")

    def __call__(self, scores):
        return predict_confidence(self, scores)


Calibrator = Union[IsotonicCalibrator, LogisticCalibrator]


def collect_pairs(scores: Sequence, outcomes: Sequence) -> list[CalibrationPair]:
    """Group (score, outcome) samples by unique score.

    Each group becomes one pair whose outcome is the group's success ratio and
    whose weight is the group size.  Pairs come back sorted by score.
    """
    s = np.array([float(v) for v in scores], dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if s.shape != y.shape:
        raise CalibrationError(f"{s.size} scores but {y.size} outcomes")
    if s.size == 0:
        raise CalibrationError("no calibration samples")
    if not np.all(np.isfinite(s)):
        raise CalibrationError("scores must be finite")
    if np.any((y != 0) & (y != 1)):
        raise CalibrationError("outcomes must be 0 or 1")
    uniq, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    hits = np.bincount(inverse, weights=y, minlength=uniq.size)
    return [
        CalibrationPair(float(u), float(h / c), float(c))
        for u, h, c in zip(uniq, hits, counts)
    ]


def _as_arrays(pairs: Sequence[CalibrationPair]):
    if len(pairs) == 0:
        raise CalibrationError("no calibration pairs")
    s = np.array([p.score for p in pairs], dtype=np.float64)
    y = np.array([p.correct for p in pairs], dtype=np.float64)
    w = np.array([p.weight for p in pairs], dtype=np.float64)
    return s, y, w


def _merge_ties(s, y, w):
    if np.any(np.diff(s) < 0):
        raise CalibrationError("calibration pairs must be sorted by score")
    uniq, inverse = np.unique(s, return_inverse=True)
    if uniq.size == s.size:
        return s, y, w
    wsum = np.bincount(inverse, weights=w)
    ysum = np.bincount(inverse, weights=w * y)
    return uniq, ysum / wsum, wsum


def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit by pool-adjacent-violators."""
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    n = y.size
    if n == 0:
        return y.copy()
    means = np.empty(n)
    weights = np.empty(n)
    sizes = np.empty(n, dtype=np.intp)
    top = -1
    for i in range(n):
        top += 1
        means[top], weights[top], sizes[top] = y[i], w[i], 1
        while top > 0 and means[top - 1] >= means[top]:
            wt = weights[top - 1] + weights[top]
            means[top - 1] = (weights[top - 1] * means[top - 1] + weights[top] * means[top]) / wt
            weights[top - 1] = wt
            sizes[top - 1] += sizes[top]
            top -= 1
    return np.repeat(means[: top + 1], sizes[: top + 1])


def fit_isotonic(pairs: Sequence[CalibrationPair]) -> IsotonicCalibrator:
    s, y, w = _merge_ties(*_as_arrays(pairs))
    fitted = np.clip(pava(y, w), 0.0, 1.0)
    # pooled means of [0, 1] targets can drift past a neighbour by one ulp
    fitted = np.maximum.accumulate(fitted)
    return IsotonicCalibrator(s, fitted)


def _neg_loglik(a, b, s, y, w):
    z = a * s + b
    # log(1 + e^z) - y z, stable for large |z|
    return float(np.sum(w * (np.logaddexp(0.0, z) - y * z)))


def fit_logistic(pairs: Sequence[CalibrationPair], max_iter: int = 100, tol: float = 1e-8) -> LogisticCalibrator:
    """Maximize the weighted Bernoulli likelihood of ``sigmoid(slope * s + offset)``.

    Newton steps with backtracking on standardized scores.  When the outcomes
    are perfectly separated the likelihood has no maximum; the slope is then
    set to a cap tied to the score range, ``separated`` is set, and a
    ``SeparationWarning`` is emitted.
    """
    s, y, w = _merge_ties(*_as_arrays(pairs))
    if s.size < 2:
        raise CalibrationError("logistic fit needs at least two distinct scores")
    if not (np.any(y > 0) and np.any(y < 1)):
        raise CalibrationError("logistic fit needs both correct and incorrect outcomes")
    center = float(np.average(s, weights=w))
    scale = float(np.sqrt(np.average((s - center) ** 2, weights=w)))
    t = (s - center) / scale
    cap = slope_cap(s)

    wrong_max = s[y < 1].max()
    right_min = s[y > 0].min()
    if wrong_max < right_min:
        warnings.warn(
            "outcomes are perfectly separated by score; logistic slope capped",
            SeparationWarning,
            stacklevel=2,
        )
        boundary = 0.5 * (wrong_max + right_min)
        return LogisticCalibrator(cap, -cap * boundary, separated=True)

    total = w.sum()
    theta = np.array([0.0, math.log(np.sum(w * y) / np.sum(w * (1 - y)))])
    for _ in range(max_iter):
        p = expit(theta[0] * t + theta[1])
        r = w * (y - p)
        grad = np.array([r @ t, r.sum()]) / total
        if np.linalg.norm(grad) < tol:
            break
        h = w * p * (1 - p)
        hess = np.array([[h @ (t * t), h @ t], [h @ t, h.sum()]]) / total
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        f0 = _neg_loglik(theta[0], theta[1], t, y, w)
        lr = 1.0
        while lr > 1e-10:
            cand = theta + lr * step
            if _neg_loglik(cand[0], cand[1], t, y, w) <= f0:
                theta = cand
                break
            lr *= 0.5
        else:
            break

    slope = theta[0] / scale
    offset = theta[1] - slope * center
    separated = False
    if slope < 0:
        # decreasing success with score is outside the model: flat fit
        slope = 0.0
        offset = math.log(np.sum(w * y) / np.sum(w * (1 - y)))
    elif slope > cap:
        slope, offset, separated = cap, offset * cap / slope, True
    return LogisticCalibrator(float(slope), float(offset), separated=separated)


def slope_cap(scores) -> float:
    """Largest logistic slope used: a full 0.01-to-0.99 swing over 1% of the score range."""
    span = float(np.max(scores) - np.min(scores))
    return 2.0 * math.log(99.0) / (0.01 * span) if span > 0 else 1e6


def predict_confidence(calibrator: Calibrator, score):
    """Confidence in [0, 1] for a score or an array of scores.

    Isotonic maps interpolate linearly between breakpoints and hold the end
    values outside them.
    """
    arr = np.asarray(score, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise CalibrationError("score is NaN")
    if isinstance(calibrator, IsotonicCalibrator):
        out = np.interp(arr, calibrator.breakpoints, calibrator.fitted_values)
    elif isinstance(calibrator, LogisticCalibrator):
        out = expit(calibrator.slope * arr + calibrator.offset)
    else:
        raise CalibrationError(f"not a calibrator: {type(calibrator).__name__}")
    if out.ndim == 0:
        return float(out)
    return out


def fit_calibrator(scores, outcomes, kind: str = "isotonic") -> Calibrator:
    pairs = collect_pairs(scores, outcomes)
    if kind == "isotonic":
        return fit_isotonic(pairs)
    if kind == "logistic":
        return fit_logistic(pairs)
    raise CalibrationError(f"unknown calibrator kind {kind!r}")


def save_calibrator(calibrator: Calibrator, path) -> None:
    Path(path).write_text(dumps_calibrator(calibrator), encoding="utf-8")


def dumps_calibrator(calibrator: Calibrator) -> str:
    if isinstance(calibrator, IsotonicCalibrator):
        lines = [ISOTONIC_HEADER]
        lines += [
            f"{b:.17g}\t{v:.17g}"
            for b, v in zip(calibrator.breakpoints, calibrator.fitted_values)
        ]
    elif isinstance(calibrator, LogisticCalibrator):
        lines = [LOGISTIC_HEADER, f"{calibrator.slope:.17g}\t{calibrator.offset:.17g}"]
    else:
        raise CalibrationError(f"not a calibrator: {type(calibrator).__name__}")
    return "\n".join(lines) + "\n"


def load_calibrator(path) -> Calibrator:
    return loads_calibrator(Path(path).read_text(encoding="utf-8"))


def loads_calibrator(text: str) -> Calibrator:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise CalibratorFormatError("empty calibrator file")
    head = lines[0].split()
    if len(head) != 2 or head[0] not in ("geosep-isotonic", "geosep-logistic"):
        raise CalibratorFormatError(f"unrecognized calibrator header {lines[0]!r}")
    if head[1] != FORMAT_VERSION:
        raise CalibratorFormatError(
            f"calibrator format version {head[1]!r} not supported (expected {FORMAT_VERSION})"
        )
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise CalibratorFormatError(f"unparseable number on line {lineno}") from None
        if len(cells) != 2:
            raise CalibratorFormatError(f"expected two tab-separated values on line {lineno}")
    try:
        if head[0] == "geosep-isotonic":
            if not rows:
                raise CalibratorFormatError("isotonic calibrator has no knots")
            arr = np.array(rows)
            return IsotonicCalibrator(arr[:, 0], arr[:, 1])
        if len(rows) != 1:
            raise CalibratorFormatError("logistic calibrator needs exactly one parameter line")
        return LogisticCalibrator(rows[0][0], rows[0][1])
    except CalibratorFormatError:
        raise
    except CalibrationError as exc:
        raise CalibratorFormatError(f"invalid calibrator: {exc}") from None


def fit_curve_table(scores, outcomes, calibrator: Calibrator | None = None, n_bins: int = 50):
    """Equal-count score bins with their success ratio, for plotting a fit.

    Returns a list of ``(score_low, score_high, mean_score, accuracy, count,
    fitted)`` tuples; ``fitted`` is the calibrator's value at the bin's mean
    score, or NaN without a calibrator.
    """
    s = np.asarray([float(v) for v in scores], dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if s.shape != y.shape or s.size == 0:
        raise CalibrationError("scores and outcomes must be equal-length and non-empty")
    order = np.argsort(s, kind="stable")
    rows = []
    for chunk in np.array_split(order, min(n_bins, s.size)):
        ms = float(s[chunk].mean())
        fitted = float(predict_confidence(calibrator, ms)) if calibrator is not None else math.nan
        rows.append((float(s[chunk[0]]), float(s[chunk[-1]]), ms, float(y[chunk].mean()), int(chunk.size), fitted))
    return rows
