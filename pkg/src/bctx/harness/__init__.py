"""Evaluation harness: corpora, caching, protocols and metrics."""

from .cache import dataset_from_cache, extract_all, load_cache, load_manifest
from .dataset import Dataset, view_inputs
from .metrics import MetricsReport, compute_metrics
from .protocols import (
    ablate_bytecode_only,
    accuracy,
    cross_validate,
    evaluate,
    evaluate_split,
    fit,
    permutation_importance,
    perturb,
    robustness,
    stratified_folds,
    stratified_split,
    train_on_split,
)

__all__ = [
    "Dataset", "MetricsReport", "ablate_bytecode_only", "accuracy", "compute_metrics", "cross_validate",
    "dataset_from_cache", "evaluate", "evaluate_split", "extract_all", "fit", "load_cache", "load_manifest",
    "permutation_importance", "perturb", "robustness", "stratified_folds", "stratified_split", "train_on_split",
    "view_inputs",
]
