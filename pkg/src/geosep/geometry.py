"""Class-partitioned nearest-neighbor index and geometric separation scores.

For a query ``x`` with predicted label ``c``, the training set splits into
``F`` (points labeled ``c``) and its complement ``Fbar``.  Two signed scores
measure how far ``x`` can move before its nearest class flips:

* exact separation: ``min over x'' in Fbar of max over x' in F`` of the signed
  distance from ``x`` to the perpendicular bisector of ``(x', x'')``;
* fast separation: ``(D(x, Fbar) - D(x, F)) / 2`` from two nearest-neighbor
  queries.

Both are positive exactly when ``x`` is strictly closer to ``F`` (safe), and
the fast score never exceeds the exact one in magnitude.  All distances are
Euclidean.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from geosep.data import Dataset

Side = Literal["same", "other"]
ScoreKind = Literal["exact", "fast"]

_EPS = np.finfo(np.float64).eps
# below this many matrix entries, distances are formed from explicit differences
_DIRECT_LIMIT = 1 << 16
# exact-separation pair tables larger than this (float64 entries) are not memoized
_PAIR_CACHE_LIMIT = 1 << 23
_PAIR_BLOCK = 1 << 20


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SeparationScore:
    value: float
    kind: ScoreKind

    @property
    def is_safe(self) -> bool:
        # a tie (value == 0) counts as dangerous
        return self.value > 0.0

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class _PairTable:
    # rows enumerate (x' in F, x'' in Fbar) pairs, x''-major
    unit: np.ndarray  # (n_other, n_same, d) unit vectors from x' towards x''
    offset: np.ndarray  # (n_other, n_same) <midpoint, unit>
    valid: np.ndarray  # (n_other, n_same) False where x' == x''


class ClassPartitionIndex:
    """Immutable per-label point store answering exact nearest-distance queries.

    The per-label arrays are contiguous so a nearest-neighbor scan is a single
    matrix-vector product; candidates near the minimum are re-measured from
    explicit differences so returned distances are exact up to rounding.
    """

    def __init__(self, features: np.ndarray, labels: Sequence[str]):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise GeometryError("training set is empty")
        if features.shape[0] != len(labels):
            raise GeometryError("features and labels differ in length")
        names = sorted(set(labels))
        if len(names) < 2:
            raise GeometryError("complement set F̄ would be empty: training set has a single label")
        code_of = {lab: i for i, lab in enumerate(names)}
        codes = np.fromiter((code_of[lab] for lab in labels), dtype=np.intp, count=len(labels))
        order = np.argsort(codes, kind="stable")
        self._features = np.ascontiguousarray(features[order])
        self._features.setflags(write=False)
        self._codes = codes[order]
        self._sqnorms = np.einsum("ij,ij->i", self._features, self._features)
        self._labels = tuple(names)
        self._code_of = code_of
        bounds = np.searchsorted(self._codes, np.arange(len(names) + 1))
        self._bounds = bounds
        self._buckets = {
            lab: self._features[bounds[i]:bounds[i + 1]] for i, lab in enumerate(names)
        }
        self._bucket_sqn = {
            lab: self._sqnorms[bounds[i]:bounds[i + 1]] for i, lab in enumerate(names)
        }
        self._pair_cache: dict[str, _PairTable] = {}
        self._lock = threading.Lock()

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    @property
    def dimension(self) -> int:
        return self._features.shape[1]

    @property
    def total_count(self) -> int:
        return self._features.shape[0]

    def bucket_sizes(self) -> dict[str, int]:
        return {lab: b.shape[0] for lab, b in self._buckets.items()}

    def members(self, label: str) -> np.ndarray:
        self._check_label(label)
        return self._buckets[label]

    def complement(self, label: str) -> np.ndarray:
        self._check_label(label)
        i = self._code_of[label]
        return np.concatenate(
            [self._features[: self._bounds[i]], self._features[self._bounds[i + 1]:]]
        )

    def _check_label(self, label: str) -> None:
        if label not in self._code_of:
            raise GeometryError(f"unknown label {label!r}")

    def _check_query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.dimension:
            raise GeometryError(
                f"dimension mismatch: query has shape {x.shape}, index dimension is {self.dimension}"
            )
        if not np.all(np.isfinite(x)):
            raise GeometryError("query contains NaN or infinite values")
        return x

    def _min_sq(self, points: np.ndarray, sqn: np.ndarray, x: np.ndarray, xx: float) -> float:
        n, d = points.shape
        if n * d <= _DIRECT_LIMIT:
            diff = points - x
            return float(np.min(np.einsum("ij,ij->i", diff, diff)))
        approx = sqn - 2.0 * (points @ x) + xx
        tol = 2.0 * (d + 4) * _EPS * (float(sqn.max()) + xx)
        cand = np.flatnonzero(approx <= approx.min() + tol)
        diff = points[cand] - x
        return float(np.min(np.einsum("ij,ij->i", diff, diff)))

    def min_sq_distance(self, x, label: str, side: Side = "same") -> float:
        self._check_label(label)
        x = self._check_query(x)
        xx = float(x @ x)
        if side == "same":
            return self._min_sq(self._buckets[label], self._bucket_sqn[label], x, xx)
        if side == "other":
            return min(
                self._min_sq(self._buckets[lab], self._bucket_sqn[lab], x, xx)
                for lab in self._labels
                if lab != label
            )
        raise GeometryError(f"side must be 'same' or 'other', not {side!r}")

    def nearest(self, x, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return labels and distances of the ``k`` nearest training points.

        Order is by distance, then by storage position (label-sorted, stable).
        """
        x = self._check_query(x)
        if not 1 <= k <= self.total_count:
            raise GeometryError(f"k={k} outside [1, {self.total_count}]")
        n, d = self._features.shape
        if n * d <= _DIRECT_LIMIT:
            diff = self._features - x
            d2 = np.einsum("ij,ij->i", diff, diff)
            idx = np.lexsort((np.arange(n), d2))[:k]
            dist = np.sqrt(d2[idx])
        else:
            xx = float(x @ x)
            approx = self._sqnorms - 2.0 * (self._features @ x) + xx
            tol = 2.0 * (d + 4) * _EPS * (float(self._sqnorms.max()) + xx)
            kth = np.partition(approx, k - 1)[k - 1]
            cand = np.flatnonzero(approx <= kth + tol)
            diff = self._features[cand] - x
            d2 = np.einsum("ij,ij->i", diff, diff)
            sel = np.lexsort((cand, d2))[:k]
            idx = cand[sel]
            dist = np.sqrt(d2[sel])
        return np.array(self._labels, dtype=object)[self._codes[idx]], dist

    def pair_table(self, label: str) -> _PairTable | None:
        """Memoized bisector geometry for ``label`` (None when too large to hold)."""
        self._check_label(label)
        same = self._buckets[label]
        n_other = self.total_count - same.shape[0]
        if same.shape[0] * n_other * self.dimension > _PAIR_CACHE_LIMIT:
            return None
        with self._lock:
            table = self._pair_cache.get(label)
            if table is None:
                table = _pair_block(same, self.complement(label))
                self._pair_cache[label] = table
        return table


def _pair_block(same: np.ndarray, other: np.ndarray) -> _PairTable:
    delta = other[:, None, :] - same[None, :, :]
    length = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta))
    valid = length > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(valid[..., None], delta / length[..., None], 0.0)
    mid = 0.5 * (other[:, None, :] + same[None, :, :])
    offset = np.einsum("ijk,ijk->ij", mid, unit)
    return _PairTable(unit, offset, valid)


def build_index(train: Dataset) -> ClassPartitionIndex:
    if len(train) == 0:
        raise GeometryError("training set is empty")
    return ClassPartitionIndex(train.features, train.point_labels)


def nn_distance(index: ClassPartitionIndex, x, label: str, side: Side = "same") -> float:
    """Euclidean distance from ``x`` to the ``label`` bucket or to its complement."""
    return float(np.sqrt(index.min_sq_distance(x, label, side)))


def bisector_margin(x, x_same, x_other) -> float:
    """Signed distance from ``x`` to the perpendicular bisector of ``x_same``/``x_other``.

    Positive when ``x`` lies strictly on the ``x_same`` side.  Equal to
    ``(d(x, x_other)**2 - d(x, x_same)**2) / (2 d(x_same, x_other))`` but
    evaluated as a projection onto the unit direction, which does not cancel
    when the two points are close.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(x_same, dtype=np.float64)
    b = np.asarray(x_other, dtype=np.float64)
    delta = b - a
    length = float(np.sqrt(delta @ delta))
    if length == 0.0:
        raise GeometryError("degenerate pair: x_same and x_other coincide")
    unit = delta / length
    return float((0.5 * (a + b) - x) @ unit)


def _min_max_margin(table: _PairTable, x: np.ndarray) -> float:
    margins = table.offset - table.unit @ x
    margins = np.where(table.valid, margins, -np.inf)
    inner = margins.max(axis=1)
    # an x'' that duplicates every F point sits on the equidistance boundary
    inner[np.isneginf(inner)] = 0.0
    return float(inner.min())


def exact_separation(index: ClassPartitionIndex, x, predicted_label: str) -> SeparationScore:
    """Min over other-class points of max over same-class points of the bisector margin.

    Cost is ``|F| * |Fbar|`` margin evaluations per query.  Pairs of coincident
    points are skipped; an other-class point left with no valid partner
    contributes 0.
    """
    x = index._check_query(x)
    table = index.pair_table(predicted_label)
    if table is not None:
        return SeparationScore(_min_max_margin(table, x), "exact")
    same = index.members(predicted_label)
    other = index.complement(predicted_label)
    step = max(1, _PAIR_BLOCK // max(1, same.shape[0] * index.dimension))
    best = np.inf
    for start in range(0, other.shape[0], step):
        block = _pair_block(same, other[start:start + step])
        best = min(best, _min_max_margin(block, x))
    return SeparationScore(float(best), "exact")


def fast_separation(index: ClassPartitionIndex, x, predicted_label: str) -> SeparationScore:
    d_same = nn_distance(index, x, predicted_label, "same")
    d_other = nn_distance(index, x, predicted_label, "other")
    return SeparationScore(0.5 * (d_other - d_same), "fast")


def gap_bound(index: ClassPartitionIndex, x, predicted_label: str) -> float:
    """Upper bound on ``|exact - fast|``: ``(D(x, F) + D(x, Fbar)) / 2``."""
    d_same = nn_distance(index, x, predicted_label, "same")
    d_other = nn_distance(index, x, predicted_label, "other")
    return 0.5 * (d_same + d_other)


def separation(index: ClassPartitionIndex, x, predicted_label: str, kind: ScoreKind = "fast") -> SeparationScore:
    if kind == "fast":
        return fast_separation(index, x, predicted_label)
    if kind == "exact":
        return exact_separation(index, x, predicted_label)
    raise GeometryError(f"unknown score kind {kind!r}")


def score_batch(index: ClassPartitionIndex, queries, predicted_labels: Sequence[str], kind: ScoreKind = "fast") -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    if len(queries) != len(predicted_labels):
        raise GeometryError("queries and predicted labels differ in length")
    return np.array(
        [separation(index, q, lab, kind).value for q, lab in zip(queries, predicted_labels)],
        dtype=np.float64,
    )


def write_scores_csv(fh, predicted_labels: Sequence[str], fast: Sequence[float], exact: Sequence[float] | None = None) -> None:
    """Write ``index,predicted_label,fast_sep,exact_sep`` rows (9 significant digits)."""
    fh.write("index,predicted_label,fast_sep,exact_sep\n")
    for i, lab in enumerate(predicted_labels):
        ex = "" if exact is None else f"{exact[i]:.9g}"
        fh.write(f"{i},{lab},{fast[i]:.9g},{ex}\n")
