"""Evaluation protocols: stratified splits, cross-validation, ablation,
permutation importance and robustness perturbations.

Every randomized step is a pure function of (inputs, seed). Samples are put in
id order before anything random happens, so file or extraction order never
changes a result.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .. import fusion
from ..embed import DenseCnnConfig
from ..errors import ClassTooSmall, UnknownOperator
from ..pipeline import ExtractConfig, bin_features
from .dataset import Dataset, training_vocabulary, view_inputs
from .metrics import MetricsReport, compute_metrics

OPERATORS = ("dead_bytes", "manifest_flip", "view_zero")


# -- splitting ---------------------------------------------------------------

def _canonical_groups(ids: Sequence[str], labels: Sequence[str]) -> list[list[int]]:
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    groups: dict[str, list[int]] = {}
    for i in order:
        groups.setdefault(labels[i], []).append(i)
    return [groups[c] for c in sorted(groups)]


def stratified_split(ids, labels, test_fraction: float = 0.2, seed: int = 42) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, test indices), label-proportional within one sample per class."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    groups = _canonical_groups(ids, labels)
    if len(groups) < 2:
        raise ClassTooSmall("at least two classes are required")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for members in groups:
        if len(members) < 2:
            raise ClassTooSmall(f"class {labels[members[0]]!r} has {len(members)} sample(s)")
        perm = [members[j] for j in rng.permutation(len(members))]
        n_test = min(max(1, int(np.floor(test_fraction * len(members) + 0.5))), len(members) - 1)
        test += perm[:n_test]
        train += perm[n_test:]
    return np.array(sorted(train)), np.array(sorted(test))


def stratified_folds(ids, labels, k: int = 10, seed: int = 42) -> list[np.ndarray]:
    """Test-index arrays for ``k`` disjoint stratified folds covering every sample."""
    if k < 2:
        raise ValueError("need at least two folds")
    groups = _canonical_groups(ids, labels)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for members in groups:
        if len(members) < k:
            raise ClassTooSmall(f"class {labels[members[0]]!r} has {len(members)} samples for {k} folds")
        for j, pos in enumerate(rng.permutation(len(members))):
            folds[(offset + j) % k].append(members[pos])
        offset += len(members)
    return [np.array(sorted(f)) for f in folds]


# -- training and scoring ----------------------------------------------------

@dataclass
class FitResult:
    model: fusion.FusionModel
    log: fusion.TrainLog


def fit(dataset: Dataset, config: fusion.TrainConfig, class_labels: Optional[Sequence[str]] = None,
        embedder_config: Optional[DenseCnnConfig] = None, catalog=None) -> FitResult:
    """Train on ``dataset`` with a vocabulary built from its own tokens only."""
    vocab = training_vocabulary(dataset)
    if dataset.bin_shape is not None and embedder_config is None:
        embedder_config = DenseCnnConfig(input_side=dataset.bin_shape[1])
    model, tlog = fusion.train(config, view_inputs(dataset, vocab), dataset.labels, ids=dataset.ids,
                               class_labels=class_labels, embedder_config=embedder_config)
    return FitResult(fusion.bind(model, vocab=vocab, catalog=catalog), tlog)


def predict_proba(model: fusion.FusionModel, dataset: Dataset) -> np.ndarray:
    inputs = view_inputs(dataset, model.vocab_tokens)
    return fusion.forward(model, {v: inputs[v] for v in model.views})


def label_indices(model: fusion.FusionModel, labels: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(model.class_labels)}
    return np.array([index[c] for c in labels], dtype=np.int64)


def evaluate(model: fusion.FusionModel, dataset: Dataset, variant: str = "fused") -> MetricsReport:
    proba = predict_proba(model, dataset)
    return compute_metrics(label_indices(model, dataset.labels), proba.argmax(axis=1), model.class_labels,
                           proba=proba, variant=variant)


def accuracy(model: fusion.FusionModel, dataset: Dataset) -> float:
    proba = predict_proba(model, dataset)
    return float((proba.argmax(axis=1) == label_indices(model, dataset.labels)).mean())


@dataclass
class SplitResult:
    report: MetricsReport
    model: fusion.FusionModel
    train: Dataset
    test: Dataset


def train_on_split(dataset: Dataset, config: fusion.TrainConfig, seed: Optional[int] = None,
                   test_fraction: float = 0.2, variant: str = "fused", **fit_kw) -> SplitResult:
    seed = config.seed if seed is None else seed
    ds = dataset.canonical()
    tr, te = stratified_split(ds.ids, ds.labels, test_fraction, seed)
    train_ds, test_ds = ds.subset(tr), ds.subset(te)
    res = fit(train_ds, config, class_labels=ds.class_labels, **fit_kw)
    return SplitResult(evaluate(res.model, test_ds, variant), res.model, train_ds, test_ds)


def evaluate_split(dataset: Dataset, config: fusion.TrainConfig, seed: Optional[int] = None,
                   test_fraction: float = 0.2, variant: str = "fused", **fit_kw) -> MetricsReport:
    """Stratified 80/20 split, train on the 80%, report on the 20%."""
    return train_on_split(dataset, config, seed, test_fraction, variant, **fit_kw).report


def ablate_bytecode_only(config: fusion.TrainConfig, dataset: Dataset, seed: Optional[int] = None,
                         **fit_kw) -> MetricsReport:
    """Same protocol as ``evaluate_split`` with the context and library views removed."""
    return evaluate_split(dataset, replace(config, views=("bin",)), seed, variant="bytecode-only", **fit_kw)


@dataclass
class CrossValidation:
    reports: list
    mean_macro_f1: float
    std_macro_f1: float

    def to_dict(self) -> dict:
        return {
            "folds": [r.to_dict() for r in self.reports],
            "mean_macro_f1": self.mean_macro_f1,
            "std_macro_f1": self.std_macro_f1,
        }


def cross_validate(dataset: Dataset, config: fusion.TrainConfig, folds: int = 10, seed: Optional[int] = None,
                   variant: str = "fused", **fit_kw) -> CrossValidation:
    seed = config.seed if seed is None else seed
    ds = dataset.canonical()
    reports = []
    everything = np.arange(len(ds))
    for test_idx in stratified_folds(ds.ids, ds.labels, folds, seed):
        train_idx = np.setdiff1d(everything, test_idx)
        res = fit(ds.subset(train_idx), config, class_labels=ds.class_labels, **fit_kw)
        reports.append(evaluate(res.model, ds.subset(test_idx), variant))
    f1s = np.array([r.macro_f1 for r in reports])
    return CrossValidation(reports, float(f1s.mean()), float(f1s.std()))


# -- permutation importance ----------------------------------------------------

def permutation_importance(model: fusion.FusionModel, dataset: Dataset, view: str, repeats: int = 10,
                           seed: int = 42, metric: str = "accuracy") -> float:
    """Mean score drop when ``view`` is shuffled across samples (other views fixed)."""
    if view not in model.views:
        raise ValueError(f"model has no {view!r} view")
    if metric not in ("accuracy", "macro_f1"):
        raise ValueError("metric must be accuracy or macro_f1")
    ds = dataset.canonical()
    inputs = view_inputs(ds, model.vocab_tokens)
    inputs = {v: inputs[v] for v in model.views}
    y = label_indices(model, ds.labels)

    def score(x) -> float:
        pred = fusion.forward(model, x).argmax(axis=1)
        if metric == "accuracy":
            return float((pred == y).mean())
        return compute_metrics(y, pred, model.class_labels).macro_f1

    base = score(inputs)
    rng = np.random.default_rng(seed)
    drops = []
    for _ in range(repeats):
        perm = rng.permutation(len(ds))
        shuffled = dict(inputs, **{view: inputs[view][perm]})
        drops.append(base - score(shuffled))
    return float(np.mean(drops))


# -- perturbations -------------------------------------------------------------

def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    h = int.from_bytes(hashlib.sha256(sample_id.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng([seed, h])


def perturb(dataset: Dataset, operator: str, magnitude: float, seed: int = 42, vocab_tokens=None,
            view: Optional[str] = None, extract_config: ExtractConfig = ExtractConfig()) -> Dataset:
    """Return a perturbed copy of ``dataset``.

    ``dead_bytes`` appends ``round(magnitude * len(stream))`` random bytes to each
    dex stream and re-images it; only f_bin changes. ``manifest_flip`` toggles
    ``int(magnitude)`` distinct vocabulary tokens per sample (adding absent ones,
    removing present ones); only the context tokens change. ``view_zero``
    blanks ``view``.
    """
    if operator not in OPERATORS:
        raise UnknownOperator(f"unknown perturbation {operator!r}; expected one of {OPERATORS}")
    if operator == "dead_bytes":
        if dataset.streams is None:
            raise ValueError("dead_bytes needs the raw dex streams")
        if magnitude < 0:
            raise ValueError("magnitude must be non-negative")
        streams, rows = [], []
        for sid, s in zip(dataset.ids, dataset.streams):
            n = int(np.floor(magnitude * len(s) + 0.5))
            s2 = bytes(s) + _sample_rng(seed, sid).integers(0, 256, size=n, dtype=np.uint8).tobytes()
            streams.append(s2)
            rows.append(bin_features(s2, extract_config))
        return replace(dataset, f_bin=np.stack(rows).astype(np.float64), streams=streams)
    if operator == "manifest_flip":
        if vocab_tokens is None:
            raise ValueError("manifest_flip needs the vocabulary")
        vocab = list(getattr(vocab_tokens, "tokens", vocab_tokens))
        m = int(magnitude)
        if not 0 <= m <= len(vocab):
            raise ValueError(f"cannot flip {m} of {len(vocab)} tokens")
        tokens = []
        for sid, toks in zip(dataset.ids, dataset.tokens):
            picked = {vocab[j] for j in _sample_rng(seed, sid).choice(len(vocab), size=m, replace=False)}
            tokens.append(tuple(sorted(set(toks) ^ picked)))
        return replace(dataset, tokens=tokens)
    if view == "bin":
        return replace(dataset, f_bin=np.zeros_like(dataset.f_bin))
    if view == "cxt":
        return replace(dataset, tokens=[() for _ in dataset.tokens])
    if view == "lib":
        return replace(dataset, f_lib=np.zeros_like(dataset.f_lib))
    raise ValueError("view_zero needs view in bin/cxt/lib")


@dataclass
class RobustnessResult:
    operator: str
    magnitude: float
    clean_accuracy: float
    perturbed_accuracy: float
    extra: dict = field(default_factory=dict)

    @property
    def drop(self) -> float:
        return self.clean_accuracy - self.perturbed_accuracy

    def to_dict(self) -> dict:
        return {"operator": self.operator, "magnitude": self.magnitude, "clean_accuracy": self.clean_accuracy,
                "perturbed_accuracy": self.perturbed_accuracy, "drop": self.drop, **self.extra}


def robustness(model: fusion.FusionModel, dataset: Dataset, operator: str, magnitude: float, seed: int = 42,
               view: Optional[str] = None, extract_config: ExtractConfig = ExtractConfig()) -> RobustnessResult:
    perturbed = perturb(dataset, operator, magnitude, seed, vocab_tokens=model.vocab_tokens, view=view,
                        extract_config=extract_config)
    return RobustnessResult(operator, magnitude, accuracy(model, dataset), accuracy(model, perturbed))
