"""Multi-view fusion classifier.

Each view is projected to a shared width with its own ReLU layer, the
projections are concatenated, passed through ReLU hidden layers and a softmax
head. Training minimizes mean categorical cross-entropy with Adam. Everything
is plain numpy; weights are stored (out, in) so a layer computes
``relu(x @ W.T + b)`` on row-major batches.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embed import densecnn
from .errors import (
    BadModelMagic,
    DimMismatch,
    EmptyDataset,
    FingerprintMismatch,
    LabelUnseen,
    ModelFormatError,
    VersionUnsupported,
)

log = logging.getLogger(__name__)

VIEWS = ("bin", "cxt", "lib")
MODEL_MAGIC = b"BCTXM1"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    hidden_layers: int = 3
    hidden_width: int = 256
    d_common: int = 128
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 30
    seed: int = 42
    raw_counts: bool = False
    views: tuple = VIEWS
    train_embedder: bool = False

    def __post_init__(self):
        for name in ("hidden_layers", "hidden_width", "d_common", "batch_size", "epochs"):
            if getattr(self, name) < (0 if name == "hidden_layers" else 1):
                raise ValueError(f"{name} must be positive")
        if not set(self.views) <= set(VIEWS) or not self.views:
            raise ValueError(f"views must be a non-empty subset of {VIEWS}")

    @classmethod
    def full_profile(cls, **kw) -> "TrainConfig":
        return cls(hidden_layers=3, hidden_width=3000, **kw)

    @classmethod
    def desk_profile(cls, **kw) -> "TrainConfig":
        return cls(hidden_layers=3, hidden_width=256, **kw)


@dataclass
class FusionModel:
    params: dict  # name -> float64 array
    views: tuple
    view_dims: dict
    class_labels: tuple
    d_common: int
    hidden_widths: tuple
    raw_counts: bool = False
    vocab_tokens: tuple = ()
    vocab_fingerprint: str = ""
    catalog_fingerprint: str = ""
    embedder_config: Optional[densecnn.DenseCnnConfig] = None
    info: dict = field(default_factory=dict)  # free-form JSON metadata (training config, split)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def param_names(self) -> list[str]:
        names = []
        for v in self.views:
            names += [f"proj.{v}.W", f"proj.{v}.b"]
        for i in range(len(self.hidden_widths)):
            names += [f"hidden.{i}.W", f"hidden.{i}.b"]
        names += ["out.W", "out.b"]
        if self.embedder_config is not None:
            names += ["cnn." + k for k in self.embedder_config.param_shapes()]
        return names

    def cnn_params(self) -> dict:
        return {k[4:]: v for k, v in self.params.items() if k.startswith("cnn.")}

    def predict_proba(self, inputs: dict) -> np.ndarray:
        return forward(self, inputs)

    def predict(self, inputs: dict) -> np.ndarray:
        return np.argmax(forward(self, inputs), axis=1)


def _glorot(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_model(view_dims: dict, class_labels: Sequence[str], config: TrainConfig,
               embedder_config: Optional[densecnn.DenseCnnConfig] = None) -> FusionModel:
    if len(class_labels) < 2:
        raise LabelUnseen("at least two classes are required")
    rng = np.random.default_rng(config.seed)
    views = tuple(v for v in VIEWS if v in config.views)
    dims = {v: int(view_dims[v]) for v in views}
    if embedder_config is not None:
        dims["bin"] = embedder_config.embedding_dim
    params = {}
    for v in views:
        params[f"proj.{v}.W"] = _glorot(rng, config.d_common, dims[v])
        params[f"proj.{v}.b"] = np.zeros(config.d_common)
    prev = config.d_common * len(views)
    widths = (config.hidden_width,) * config.hidden_layers
    for i, w in enumerate(widths):
        params[f"hidden.{i}.W"] = _glorot(rng, w, prev)
        params[f"hidden.{i}.b"] = np.zeros(w)
        prev = w
    params["out.W"] = _glorot(rng, len(class_labels), prev)
    params["out.b"] = np.zeros(len(class_labels))
    if embedder_config is not None:
        for k, arr in densecnn.init_params(embedder_config, config.seed + 1).items():
            params["cnn." + k] = arr
    return FusionModel(params, views, dims, tuple(class_labels), config.d_common, widths,
                       raw_counts=config.raw_counts, embedder_config=embedder_config)


def preprocess_lib(counts: np.ndarray, raw_counts: bool) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return counts if raw_counts else np.log1p(counts)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model: FusionModel, inputs: dict) -> dict:
    out = {}
    n = None
    for v in model.views:
        if v not in inputs:
            raise DimMismatch(f"missing view {v!r}")
        x = np.asarray(inputs[v], dtype=np.float64)
        if v == "bin" and model.embedder_config is not None:
            if x.ndim == 3:
                x = x[None]
        elif x.ndim == 1:
            x = x[None]
        if v != "bin" or model.embedder_config is None:
            if x.shape[1] != model.view_dims[v]:
                raise DimMismatch(f"view {v!r}: expected {model.view_dims[v]} features, got {x.shape[1]}")
        if v == "lib":
            x = preprocess_lib(x, model.raw_counts)
        if n is not None and x.shape[0] != n:
            raise DimMismatch("views disagree on the number of samples")
        n = x.shape[0]
        out[v] = x
    return out


def _forward(model: FusionModel, inputs: dict):
    p = model.params
    x = _as_batch(model, inputs)
    cache = {"x": x}
    if model.embedder_config is not None:
        emb, cnn_cache = densecnn.forward(x["bin"], model.cnn_params(), model.embedder_config, keep_cache=True)
        cache["cnn"] = cnn_cache
        x = dict(x, bin=emb)
        cache["emb"] = emb
    projected = []
    for v in model.views:
        pre = x[v] @ p[f"proj.{v}.W"].T + p[f"proj.{v}.b"]
        cache[f"proj.{v}"] = pre
        projected.append(np.maximum(pre, 0.0))
    h = np.concatenate(projected, axis=1)
    cache["h0"] = h
    for i in range(len(model.hidden_widths)):
        pre = h @ p[f"hidden.{i}.W"].T + p[f"hidden.{i}.b"]
        cache[f"hidden.{i}"] = pre
        h = np.maximum(pre, 0.0)
        cache[f"h{i + 1}"] = h
    logits = h @ p["out.W"].T + p["out.b"]
    return logits, cache


def forward(model: FusionModel, inputs: dict) -> np.ndarray:
    """Class probabilities, one row per sample."""
    logits, _ = _forward(model, inputs)
    return softmax(logits)


def loss_and_grads(model: FusionModel, inputs: dict, labels: np.ndarray) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= model.n_classes):
        raise DimMismatch(f"labels must lie in [0, {model.n_classes})")
    logits, cache = _forward(model, inputs)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise DimMismatch(f"{labels.shape[0]} labels for {n} samples")
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_p[np.arange(n), labels].mean())

    p = model.params
    g = {}
    d = np.exp(log_p)
    d[np.arange(n), labels] -= 1.0
    d /= n
    n_hidden = len(model.hidden_widths)
    h = cache[f"h{n_hidden}"]
    g["out.W"] = d.T @ h
    g["out.b"] = d.sum(axis=0)
    dh = d @ p["out.W"]
    for i in reversed(range(n_hidden)):
        dpre = dh * (cache[f"hidden.{i}"] > 0)
        g[f"hidden.{i}.W"] = dpre.T @ cache[f"h{i}"]
        g[f"hidden.{i}.b"] = dpre.sum(axis=0)
        dh = dpre @ p[f"hidden.{i}.W"]
    x = cache["x"]
    off = 0
    for v in model.views:
        dproj = dh[:, off:off + model.d_common] * (cache[f"proj.{v}"] > 0)
        off += model.d_common
        xin = cache["emb"] if (v == "bin" and "emb" in cache) else x[v]
        g[f"proj.{v}.W"] = dproj.T @ xin
        g[f"proj.{v}.b"] = dproj.sum(axis=0)
        if v == "bin" and "cnn" in cache:
            d_emb = dproj @ p["proj.bin.W"]
            for k, arr in densecnn.backward(d_emb, model.cnn_params(), model.embedder_config, cache["cnn"]).items():
                g["cnn." + k] = arr
    return loss, g


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, frozen=()):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.frozen = set(frozen)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(grads):
            if k in self.frozen:
                continue
            gk = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gk
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gk * gk
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.epsilon)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, loss, accuracy

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)


def _take(inputs: dict, idx: np.ndarray) -> dict:
    return {k: v[idx] for k, v in inputs.items()}


def train(config: TrainConfig, inputs: dict, labels: Sequence[str], ids: Optional[Sequence[str]] = None,
          class_labels: Optional[Sequence[str]] = None,
          embedder_config: Optional[densecnn.DenseCnnConfig] = None) -> tuple[FusionModel, TrainLog]:
    """Fit a model on precomputed view matrices.

    ``inputs`` maps view name to an (N, d) array (or (N, 3, H, W) images for
    the bin view when ``embedder_config`` is given). Samples are put in
    canonical order by ``ids`` before any seeded operation, so the result
    does not depend on dataset order.
    """
    labels = list(labels)
    n = len(labels)
    if n == 0:
        raise EmptyDataset("no training samples")
    if class_labels is None:
        class_labels = sorted(set(labels))
    class_labels = tuple(class_labels)
    unseen = set(labels) - set(class_labels)
    if unseen:
        raise LabelUnseen(f"labels outside the class list: {sorted(unseen)}")
    if len(set(labels)) < 2:
        raise LabelUnseen("training data holds a single class")

    order = np.argsort(np.asarray(ids, dtype=object), kind="stable") if ids is not None else np.arange(n)
    views = tuple(v for v in VIEWS if v in config.views)
    x = {v: np.asarray(inputs[v])[order] for v in views}
    index = {c: i for i, c in enumerate(class_labels)}
    y = np.array([index[labels[i]] for i in order], dtype=np.int64)

    dims = {v: (x[v].shape[1] if x[v].ndim == 2 else 0) for v in views}
    model = init_model(dims, class_labels, config, embedder_config if "bin" in views else None)
    frozen = [] if config.train_embedder else [k for k in model.params if k.startswith("cnn.")]
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.epsilon, frozen=frozen)
    rng = np.random.default_rng(config.seed)
    tlog = TrainLog()
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, _take(x, idx), y[idx])
            opt.step(model.params, grads)
            total += loss * len(idx)
        acc = float((model.predict(x) == y).mean())
        tlog.epochs.append({"epoch": epoch, "loss": total / n, "accuracy": acc})
        log.debug("epoch %d loss %.5f acc %.4f", epoch, total / n, acc)
    return model, tlog


# -- serialization -----------------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Buf:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"short read: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def model_to_bytes(model: FusionModel) -> bytes:
    meta = {
        "views": list(model.views),
        "view_dims": {v: model.view_dims[v] for v in model.views},
        "d_common": model.d_common,
        "hidden_widths": list(model.hidden_widths),
        "raw_counts": model.raw_counts,
        "embedder": model.embedder_config.to_dict() if model.embedder_config else None,
        "info": model.info,
    }
    out = bytearray(MODEL_MAGIC)
    out += struct.pack("<H", MODEL_VERSION)
    out += struct.pack("<I", len(model.class_labels))
    for lab in model.class_labels:
        out += _pack_str(lab)
    out += _pack_str(model.vocab_fingerprint) + _pack_str(model.catalog_fingerprint)
    out += _pack_str(json.dumps(meta, sort_keys=True))
    out += struct.pack("<I", len(model.vocab_tokens))
    for t in model.vocab_tokens:
        out += _pack_str(t)
    names = model.param_names()
    out += struct.pack("<I", len(names))
    for name in names:
        arr = model.params[name]
        out += _pack_str(name) + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    for name in names:
        out += np.ascontiguousarray(model.params[name], dtype="<f8").tobytes()
    return bytes(out)


def model_from_bytes(data: bytes, vocab_fingerprint: Optional[str] = None,
                     catalog_fingerprint: Optional[str] = None, allow_mismatch: bool = False) -> FusionModel:
    if len(data) < len(MODEL_MAGIC) or data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise BadModelMagic("not a model file")
    b = _Buf(data)
    b.take(len(MODEL_MAGIC))
    version = struct.unpack("<H", b.take(2))[0]
    if version != MODEL_VERSION:
        raise VersionUnsupported(f"model version {version}")
    labels = tuple(b.string() for _ in range(b.u32()))
    vfp, cfp = b.string(), b.string()
    meta = json.loads(b.string())
    tokens = tuple(b.string() for _ in range(b.u32()))
    table = []
    for _ in range(b.u32()):
        name = b.string()
        ndim = b.u32()
        table.append((name, struct.unpack(f"<{ndim}I", b.take(4 * ndim))))
    params = {}
    for name, shape in table:
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(b.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if b.pos != len(data):
        raise ModelFormatError(f"{len(data) - b.pos} trailing bytes")

    if not allow_mismatch:
        if vocab_fingerprint is not None and vocab_fingerprint != vfp:
            raise FingerprintMismatch("model was trained against a different vocabulary")
        if catalog_fingerprint is not None and catalog_fingerprint != cfp:
            raise FingerprintMismatch("model was trained against a different SDK catalog")
    emb = meta.get("embedder")
    return FusionModel(
        params=params,
        views=tuple(meta["views"]),
        view_dims=dict(meta["view_dims"]),
        class_labels=labels,
        d_common=meta["d_common"],
        hidden_widths=tuple(meta["hidden_widths"]),
        raw_counts=meta["raw_counts"],
        vocab_tokens=tokens,
        vocab_fingerprint=vfp,
        catalog_fingerprint=cfp,
        embedder_config=densecnn.DenseCnnConfig(**emb) if emb else None,
        info=meta.get("info", {}),
    )


def save_model(model: FusionModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path, vocab_fingerprint: Optional[str] = None, catalog_fingerprint: Optional[str] = None,
               allow_mismatch: bool = False) -> FusionModel:
    return model_from_bytes(Path(path).read_bytes(), vocab_fingerprint, catalog_fingerprint, allow_mismatch)


def bind(model: FusionModel, vocab=None, catalog=None) -> FusionModel:
    """Attach feature-space identities (vocabulary tokens, fingerprints) to a model."""
    kw = {}
    if vocab is not None:
        kw.update(vocab_tokens=tuple(vocab.tokens), vocab_fingerprint=vocab.fingerprint())
    if catalog is not None:
        kw.update(catalog_fingerprint=catalog.fingerprint())
    return replace(model, **kw)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["views"] = list(config.views)
    return d
