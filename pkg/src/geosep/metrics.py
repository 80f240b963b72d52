"""Expected calibration error, accuracy and multi-trial summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Z_95 = 1.96


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EceBin:
    lower: float
    upper: float
    count: int
    accuracy: float
    mean_confidence: float


@dataclass(frozen=True)
class EceReport:
    m_bins: int
    bins: tuple[EceBin, ...]
    ece: float
    n: int

    def to_csv(self) -> str:
        lines = ["bin_lower,bin_upper,count,accuracy,mean_confidence"]
        for b in self.bins:
            lines.append(f"{b.lower:.17g},{b.upper:.17g},{b.count},{b.accuracy:.17g},{b.mean_confidence:.17g}")
        lines.append(f"ECE,{self.ece:.17g},N,{self.n},M,{self.m_bins}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TrialSummary:
    trial_values: tuple[float, ...]
    mean: float
    ci95_halfwidth: float

    def __str__(self):
        return f"{self.mean:.6g} ± {self.ci95_halfwidth:.3g}"


def ece(confidences: Sequence[float], correctness: Sequence, m_bins: int = 30) -> EceReport:
    """ECE over ``m_bins`` equal-width bins of [0, 1].

    Bin ``b`` holds confidences in ``[b/M, (b+1)/M)``; the last bin also takes
    1.0.  Empty bins report zero accuracy and confidence and carry no weight.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correctness, dtype=np.float64)
    if conf.shape != hit.shape or conf.ndim != 1:
        raise MetricsError(f"{conf.size} confidences but {hit.size} outcomes")
    if conf.size == 0:
        raise MetricsError("no samples")
    if not isinstance(m_bins, (int, np.integer)) or m_bins < 1:
        raise MetricsError(f"m_bins must be a positive integer, got {m_bins!r}")
    if np.any(~np.isfinite(conf)) or np.any((conf < 0) | (conf > 1)):
        raise MetricsError("confidences must lie in [0, 1]")
    if np.any((hit != 0) & (hit != 1)):
        raise MetricsError("correctness must be 0 or 1")

    n = conf.size
    edges = np.arange(m_bins + 1) / m_bins
    idx = np.minimum(np.searchsorted(edges, conf, side="right") - 1, m_bins - 1)
    counts = np.bincount(idx, minlength=m_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=m_bins)
    hit_sum = np.bincount(idx, weights=hit, minlength=m_bins)
    bins = []
    total = 0.0
    for b in range(m_bins):
        c = int(counts[b])
        acc = hit_sum[b] / c if c else 0.0
        mc = conf_sum[b] / c if c else 0.0
        if c:
            total += (c / n) * abs(acc - mc)
        bins.append(EceBin(float(edges[b]), float(edges[b + 1]), c, float(acc), float(mc)))
    return EceReport(m_bins, tuple(bins), float(total), n)


def accuracy(predicted: Sequence[str], actual: Sequence[str]) -> float:
    if len(predicted) != len(actual):
        raise MetricsError(f"{len(predicted)} predictions but {len(actual)} labels")
    if len(predicted) == 0:
        raise MetricsError("no predictions")
    return sum(p == a for p, a in zip(predicted, actual)) / len(predicted)


def aggregate_trials(values: Sequence[float]) -> TrialSummary:
    """Mean with a normal-approximation 95% interval: ``1.96 * s / sqrt(n)``."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise MetricsError("a confidence interval needs at least 2 trials")
    mean = math.fsum(vals) / len(vals)
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
    return TrialSummary(tuple(vals), mean, Z_95 * sd / math.sqrt(len(vals)))
