"""Context vocabulary and binary presence vectors."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .axml import ManifestFacts
from .errors import EmptyTraining


def app_tokens(facts: ManifestFacts, net_constants: Iterable = ()) -> set[str]:
    """Namespaced tokens for one app: perm:, comp:<kind>:, act:, net:."""
    return facts.tokens() | {c.token for c in net_constants}


def _as_token_set(app) -> set[str]:
    if isinstance(app, tuple) and len(app) == 2 and isinstance(app[0], ManifestFacts):
        return app_tokens(*app)
    return set(app)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict = field(compare=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocabulary(training_apps: Iterable, min_df: int = 1) -> Vocabulary:
    """Sorted union of tokens seen in at least ``min_df`` training apps.

    Each app is either a token iterable or a ``(ManifestFacts, net constants)``
    pair.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df: Counter = Counter()
    n = 0
    for app in training_apps:
        df.update(_as_token_set(app))
        n += 1
    if n == 0:
        raise EmptyTraining("no training apps")
    return Vocabulary(tuple(sorted(t for t, c in df.items() if c >= min_df)))


def vectorize(tokens: Iterable[str], vocab: Vocabulary) -> np.ndarray:
    if vocab.size == 0:
        raise ValueError("empty vocabulary")
    out = np.zeros(vocab.size, dtype=np.uint8)
    for t in set(tokens):
        i = vocab.index.get(t)
        if i is not None:
            out[i] = 1
    return out


def vectorize_many(apps: Iterable[Iterable[str]], vocab: Vocabulary) -> np.ndarray:
    rows = [vectorize(t, vocab) for t in apps]
    if not rows:
        return np.zeros((0, vocab.size), dtype=np.uint8)
    return np.stack(rows)
