"""In-memory feature datasets and their conversion to classifier inputs."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..context import Vocabulary, build_vocabulary, vectorize_many
from ..errors import EmptyDataset

# Placeholder token so an all-empty training split still yields a usable vocabulary.
EMPTY_VOCAB_TOKEN = "<none>"


@dataclass
class Dataset:
    ids: list
    labels: list
    f_bin: np.ndarray  # (N, d_bin) float64
    tokens: list  # per-sample token tuples
    f_lib: np.ndarray  # (N, k) counts
    streams: Optional[list] = None  # raw dex byte streams, when known
    bin_shape: Optional[tuple] = None  # (3, s, s) when f_bin holds flattened images

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ValueError("sample ids must be unique")
        if not (len(self.labels) == len(self.tokens) == self.f_bin.shape[0] == self.f_lib.shape[0] == n):
            raise ValueError("dataset columns disagree on length")
        if self.streams is not None and len(self.streams) != n:
            raise ValueError("streams column has the wrong length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def class_labels(self) -> list[str]:
        return sorted(set(self.labels))

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            ids=[self.ids[i] for i in idx],
            labels=[self.labels[i] for i in idx],
            f_bin=self.f_bin[idx],
            tokens=[self.tokens[i] for i in idx],
            f_lib=self.f_lib[idx],
            streams=None if self.streams is None else [self.streams[i] for i in idx],
            bin_shape=self.bin_shape,
        )

    def canonical(self) -> "Dataset":
        """Same samples sorted by id."""
        return self.subset(sorted(range(len(self.ids)), key=lambda i: self.ids[i]))

    def with_labels(self, labels: Sequence[str]) -> "Dataset":
        return replace(self, labels=list(labels))

    @classmethod
    def from_records(cls, records) -> "Dataset":
        records = sorted(records, key=lambda r: r.app_id)
        if not records:
            raise EmptyDataset("no feature records")
        bins = {r.f_bin.shape for r in records}
        libs = {r.f_lib.shape for r in records}
        if len(bins) != 1 or len(libs) != 1:
            raise ValueError("feature records were extracted with different configurations")
        if len({r.backend for r in records}) != 1:
            raise ValueError("feature records mix embedding backends")
        side = int(round((records[0].f_bin.shape[0] / 3) ** 0.5))
        return cls(
            ids=[r.app_id for r in records],
            labels=[r.label for r in records],
            f_bin=np.stack([r.f_bin for r in records]).astype(np.float64),
            tokens=[tuple(r.tokens) for r in records],
            f_lib=np.stack([r.f_lib for r in records]),
            bin_shape=(3, side, side) if records[0].backend == "cnn" else None,
        )


def training_vocabulary(dataset: Dataset) -> Vocabulary:
    vocab = build_vocabulary(dataset.tokens)
    return vocab if vocab.size else Vocabulary((EMPTY_VOCAB_TOKEN,))


def view_inputs(dataset: Dataset, vocab_tokens) -> dict:
    vocab = vocab_tokens if isinstance(vocab_tokens, Vocabulary) else Vocabulary(tuple(vocab_tokens))
    f_bin = dataset.f_bin
    if dataset.bin_shape is not None:
        f_bin = f_bin.reshape((len(dataset),) + tuple(dataset.bin_shape))
    return {
        "bin": f_bin,
        "cxt": vectorize_many(dataset.tokens, vocab).astype(np.float64),
        "lib": np.asarray(dataset.f_lib, dtype=np.float64),
    }
