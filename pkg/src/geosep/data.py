"""Labeled point sets, CSV ingestion and seeded train/validation/test splits.

Features are held as one contiguous ``float64`` matrix per dataset; the
``LabeledPoint`` view is produced on demand so that large training sets do not
turn into tens of thousands of small Python objects.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

STRICT_FEATURE_LIMIT = 1e6


class DataError(ValueError):
    """Malformed dataset, split request or prediction file."""


@dataclass(frozen=True, eq=False)
class LabeledPoint:
    features: np.ndarray
    label: str

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 1 or feats.size == 0:
            raise DataError("features must be a non-empty vector")
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain NaN or infinite values")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", str(self.label))

    def __eq__(self, other):
        if not isinstance(other, LabeledPoint):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.features, other.features)

    def __hash__(self):
        return hash((self.label, self.features.tobytes()))


class Dataset:
    """An ordered, immutable collection of labeled feature vectors."""

    def __init__(self, features, labels: Sequence[str]):
        feats = np.array(features, dtype=np.float64, copy=True)
        if feats.ndim == 1 and len(labels) == 0:
            feats = feats.reshape(0, 0)
        if feats.ndim != 2:
            raise DataError("features must be a 2-D array (points x dimension)")
        if feats.shape[0] != len(labels):
            raise DataError(
                f"{feats.shape[0]} feature rows but {len(labels)} labels"
            )
        if feats.shape[0] and feats.shape[1] == 0:
            raise DataError("features must be non-empty")
        if not np.all(np.isfinite(feats)):
            bad = int(np.argwhere(~np.isfinite(feats))[0, 0])
            raise DataError(f"non-finite feature at row {bad + 1}")
        feats.setflags(write=False)
        self._features = feats
        self._labels = tuple(str(lab) for lab in labels)

    @classmethod
    def from_points(cls, points: Sequence[LabeledPoint]) -> "Dataset":
        points = list(points)
        if not points:
            return cls(np.empty((0, 0)), [])
        dims = {p.features.shape[0] for p in points}
        if len(dims) != 1:
            raise DataError("all points in a dataset must share one dimension")
        return cls(np.stack([p.features for p in points]), [p.label for p in points])

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def point_labels(self) -> tuple[str, ...]:
        return self._labels

    @property
    def points(self) -> list[LabeledPoint]:
        return list(self)

    @property
    def dimension(self) -> int:
        return self._features.shape[1]

    @property
    def labels(self) -> frozenset[str]:
        return frozenset(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __iter__(self) -> Iterator[LabeledPoint]:
        for row, lab in zip(self._features, self._labels):
            yield LabeledPoint(row, lab)

    def __getitem__(self, i: int) -> LabeledPoint:
        return LabeledPoint(self._features[i], self._labels[i])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self._features[idx], [self._labels[i] for i in idx])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self._labels == other._labels
            and self._features.shape == other._features.shape
            and np.array_equal(self._features, other._features)
        )

    def __repr__(self):
        return f"Dataset(n={len(self)}, d={self.dimension if len(self) else 0}, labels={sorted(self.labels)})"


@dataclass(frozen=True)
class DataSplit:
    train: Dataset
    validation: Dataset
    test: Dataset
    seed: int
    train_indices: tuple[int, ...] = ()
    validation_indices: tuple[int, ...] = ()
    test_indices: tuple[int, ...] = ()


@dataclass(frozen=True)
class PredictionRecord:
    point_index: int
    predicted_label: str
    native_confidence: float | None = None

    def __post_init__(self):
        c = self.native_confidence
        if c is not None and not (0.0 <= c <= 1.0):
            raise DataError(
                f"native confidence {c} for point {self.point_index} outside [0, 1]"
            )


def load_dataset(path, format: str = "csv", strict: bool = False) -> Dataset:
    """Read a ``label,f0,...`` CSV file. Rows are numbered from 1 after the header."""
    if format != "csv":
        raise DataError(f"unsupported dataset format {format!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if not header or header[0].strip() != "label":
            raise DataError(f"{path}: first header column must be 'label'")
        width = len(header) - 1
        if width < 1:
            raise DataError(f"{path}: header declares no feature columns")
        labels: list[str] = []
        rows: list[list[float]] = []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) - 1 != width:
                raise DataError(
                    f"dimension mismatch at row {rownum}: "
                    f"expected {width} features, got {len(row) - 1}"
                )
            label = row[0].strip()
            if not label:
                raise DataError(f"empty label at row {rownum}")
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise DataError(f"non-numeric feature at row {rownum}") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"non-finite feature at row {rownum}")
            if strict and any(abs(v) > STRICT_FEATURE_LIMIT for v in values):
                raise DataError(
                    f"feature outside [-1e6, 1e6] at row {rownum} (unnormalized input?)"
                )
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: empty file (no data rows)")
    return Dataset(np.array(rows, dtype=np.float64), labels)


def write_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` as CSV to a path or an open text handle."""
    if hasattr(path, "write"):
        _write_rows(dataset, path)
        return
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        _write_rows(dataset, fh)


def _write_rows(dataset: Dataset, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["label"] + [f"f{j}" for j in range(dataset.dimension)])
    for row, label in zip(dataset.features, dataset.point_labels):
        # repr gives the shortest string that parses back to the same double
        writer.writerow([label] + [repr(float(v)) for v in row])


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    if len(ratios) != 3:
        raise DataError("ratios must be (train, validation, test)")
    if any(r <= 0 for r in ratios):
        raise DataError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios sum to {sum(ratios)!r}, expected 1")
    # tolerance keeps 100 * 0.6 from flooring to 59
    exact = [n * r for r in ratios]
    sizes = [int(math.floor(e + 1e-9)) for e in exact]
    # largest fractional part first; ties favour train, then validation
    by_remainder = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in by_remainder[: n - sum(sizes)]:
        sizes[i] += 1
    n_train, n_val, n_test = sizes
    if min(sizes) < 1:
        raise DataError(f"dataset of {n} points too small to give every part a point")
    return n_train, n_val, n_test


def split_dataset(source: Dataset, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> DataSplit:
    """Shuffle with a seeded PCG64 Fisher-Yates permutation and cut into three parts.

    Parts are sized by flooring ``n * ratio``; leftover points go to the parts
    with the largest fractional remainder (ties: train first), so no part is a
    full point off its target.
    """
    if seed < 0:
        raise DataError("seed must be an unsigned integer")
    n = len(source)
    if n < 3:
        raise DataError(f"dataset of {n} points too small to split")
    n_train, n_val, _ = split_sizes(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    tr = order[:n_train]
    va = order[n_train:n_train + n_val]
    te = order[n_train + n_val:]
    return DataSplit(
        train=source.subset(tr),
        validation=source.subset(va),
        test=source.subset(te),
        seed=seed,
        train_indices=tuple(int(i) for i in tr),
        validation_indices=tuple(int(i) for i in va),
        test_indices=tuple(int(i) for i in te),
    )


def load_predictions(path, vocabulary=None) -> list[PredictionRecord]:
    """Read ``index,predicted_label[,native_confidence]`` rows."""
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if header[:2] != ["index", "predicted_label"] or len(header) > 3:
            raise DataError(f"{path}: header must be index,predicted_label[,native_confidence]")
        has_conf = len(header) == 3
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"wrong column count at row {rownum}")
            try:
                idx = int(row[0])
                conf = float(row[2]) if has_conf and row[2].strip() else None
            except ValueError:
                raise DataError(f"unparseable value at row {rownum}") from None
            label = row[1].strip()
            if vocabulary is not None and label not in vocabulary:
                raise DataError(f"unknown label {label!r} at row {rownum}")
            try:
                records.append(PredictionRecord(idx, label, conf))
            except DataError as exc:
                raise DataError(f"row {rownum}: {exc}") from None
    return records


def write_predictions(records: Sequence[PredictionRecord], path) -> None:
    has_conf = any(r.native_confidence is not None for r in records)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "predicted_label"] + (["native_confidence"] if has_conf else []))
        for r in records:
            row = [r.point_index, r.predicted_label]
            if has_conf:
                row.append("" if r.native_confidence is None else repr(r.native_confidence))
            writer.writerow(row)
