"""Geometric separation scores and confidence calibration for classifiers."""

from geosep.calibration import (
    CalibrationPair,
    IsotonicCalibrator,
    LogisticCalibrator,
    collect_pairs,
    fit_isotonic,
    fit_logistic,
    load_calibrator,
    predict_confidence,
    save_calibrator,
)
from geosep.data import (
    DataSplit,
    Dataset,
    LabeledPoint,
    PredictionRecord,
    load_dataset,
    split_dataset,
    write_dataset,
)
from geosep.geometry import (
    ClassPartitionIndex,
    SeparationScore,
    bisector_margin,
    build_index,
    exact_separation,
    fast_separation,
    gap_bound,
    nn_distance,
)
from geosep.metrics import EceReport, TrialSummary, accuracy, aggregate_trials, ece
from geosep.pipeline import (
    ExperimentConfig,
    ExperimentReport,
    ThroughputReport,
    benchmark_throughput,
    generate_blobs,
    knn_predict,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationPair",
    "ClassPartitionIndex",
    "DataSplit",
    "Dataset",
    "EceReport",
    "ExperimentConfig",
    "ExperimentReport",
    "IsotonicCalibrator",
    "LabeledPoint",
    "LogisticCalibrator",
    "PredictionRecord",
    "SeparationScore",
    "ThroughputReport",
    "TrialSummary",
    "accuracy",
    "aggregate_trials",
    "benchmark_throughput",
    "bisector_margin",
    "build_index",
    "collect_pairs",
    "ece",
    "exact_separation",
    "fast_separation",
    "fit_isotonic",
    "fit_logistic",
    "gap_bound",
    "generate_blobs",
    "knn_predict",
    "load_calibrator",
    "load_dataset",
    "nn_distance",
    "predict_confidence",
    "run_experiment",
    "save_calibrator",
    "split_dataset",
    "write_dataset",
]
