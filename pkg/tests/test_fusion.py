import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck
from bctx import fusion
from bctx.catalog import parse_catalog
from bctx.context import Vocabulary
from bctx.errors import (
    BadModelMagic,
    DimMismatch,
    EmptyDataset,
    FingerprintMismatch,
    LabelUnseen,
    ModelFormatError,
    VersionUnsupported,
)

TINY = fusion.TrainConfig(hidden_layers=2, hidden_width=6, d_common=4, batch_size=8, epochs=3)
DIMS = {"bin": 6, "cxt": 5, "lib": 3}


def zero_model(n_classes):
    m = fusion.init_model(DIMS, [f"c{i}" for i in range(n_classes)], TINY)
    for v in m.params.values():
        v[...] = 0.0
    return m


def sample_inputs(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return {"bin": rng.standard_normal((n, 6)), "cxt": rng.integers(0, 2, (n, 5)).astype(float),
            "lib": rng.integers(0, 100, (n, 3)).astype(float)}


def test_zero_model_is_uniform():
    p = zero_model(4).predict_proba(sample_inputs())
    assert np.array_equal(p, np.full((4, 4), 0.25))


def test_two_class_zero_logits():
    assert np.array_equal(zero_model(2).predict_proba(sample_inputs(1)), [[0.5, 0.5]])


def test_uniform_loss_is_ln_c():
    loss, _ = fusion.loss_and_grads(zero_model(4), sample_inputs(), np.array([0, 1, 2, 3]))
    assert loss == pytest.approx(math.log(4), abs=1e-12)


def test_confident_prediction_loss_vanishes():
    m = zero_model(3)
    m.params["out.b"][:] = [60.0, 0.0, 0.0]
    loss, _ = fusion.loss_and_grads(m, sample_inputs(2), np.array([0, 0]))
    assert loss < 1e-25


def straight_line_proba(model, row):
    """Scalar-loop forward pass used as an independent oracle."""
    def dense(W, b, x, relu=True):
        out = []
        for j in range(len(b)):
            s = b[j]
            for i in range(len(x)):
                s += W[j][i] * x[i]
            out.append(max(s, 0.0) if relu else s)
        return out

    h = []
    for v in model.views:
        x = list(row[v])
        if v == "lib" and not model.raw_counts:
            x = [math.log(1.0 + c) for c in x]
        h += dense(model.params[f"proj.{v}.W"], model.params[f"proj.{v}.b"], x)
    for i in range(len(model.hidden_widths)):
        h = dense(model.params[f"hidden.{i}.W"], model.params[f"hidden.{i}.b"], h)
    z = dense(model.params["out.W"], model.params["out.b"], h, relu=False)
    top = max(z)
    e = [math.exp(t - top) for t in z]
    return [t / sum(e) for t in e]


@pytest.mark.parametrize("raw", [False, True])
def test_matches_straight_line_oracle(raw):
    m = fusion.init_model(DIMS, ["a", "b", "c"], fusion.TrainConfig(hidden_layers=2, hidden_width=6, d_common=4,
                                                                    raw_counts=raw, seed=7))
    rng = np.random.default_rng(1)
    for k in m.params:
        if k.endswith(".b"):
            m.params[k] = rng.uniform(-0.5, 0.5, m.params[k].shape)
    x = sample_inputs(6, seed=2)
    got = m.predict_proba(x)
    for i in range(6):
        want = straight_line_proba(m, {v: x[v][i] for v in x})
        assert np.max(np.abs(got[i] - want)) < 1e-12


def test_mlp_gradients_match_finite_differences():
    model, x, y = gradcheck.mlp_fixture()
    _, grads = fusion.loss_and_grads(model, x, y)
    assert set(grads) == set(model.params)
    assert gradcheck.max_relative_error(lambda: fusion.loss_and_grads(model, x, y)[0], model.params, grads) < 1e-4


def test_joint_cnn_gradients_chain_through_f_bin():
    model, x, y = gradcheck.mlp_fixture(margin=2e-4, with_cnn=True)
    _, grads = fusion.loss_and_grads(model, x, y)
    cnn = [k for k in grads if k.startswith("cnn.")]
    assert cnn and set(grads) == set(model.params)
    assert gradcheck.max_relative_error(lambda: fusion.loss_and_grads(model, x, y)[0], model.params, grads, cnn) < 1e-3


@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=8), st.floats(-1e3, 1e3))
def test_softmax_normalized_and_shift_invariant(logits, shift):
    z = np.array([logits])
    p = fusion.softmax(z)
    assert np.isfinite(p).all() and abs(p.sum() - 1.0) <= 1e-9
    assert np.max(np.abs(fusion.softmax(z + shift) - p)) <= 1e-12


def test_extreme_logits():
    m = zero_model(3)
    m.params["out.b"][:] = [1e4, -1e4, 0.0]
    p = m.predict_proba(sample_inputs(1))
    assert np.isfinite(p).all() and abs(p.sum() - 1) <= 1e-9 and p[0, 0] == 1.0


def test_dim_mismatch():
    m = zero_model(3)
    x = sample_inputs()
    with pytest.raises(DimMismatch):
        m.predict_proba(dict(x, cxt=x["cxt"][:, :4]))
    with pytest.raises(DimMismatch):
        m.predict_proba({"bin": x["bin"], "cxt": x["cxt"]})
    with pytest.raises(DimMismatch):
        m.predict_proba(dict(x, lib=x["lib"][:2]))
    with pytest.raises(DimMismatch):
        fusion.loss_and_grads(m, x, np.array([0, 1, 2, 3]))


def separable(n_per=25, seed=0):
    rng = np.random.default_rng(seed)
    labels, rows = [], {"bin": [], "cxt": [], "lib": []}
    for c in range(3):
        for _ in range(n_per):
            labels.append(f"k{c}")
            rows["bin"].append(rng.standard_normal(6) + 4 * np.eye(6)[c])
            rows["cxt"].append((rng.random(5) < 0.5).astype(float))
            rows["lib"].append(rng.integers(0, 5, 3).astype(float))
    ids = [f"id{i:03d}" for i in range(len(labels))]
    return {k: np.array(v) for k, v in rows.items()}, labels, ids


def test_training_fits_and_logs():
    x, y, ids = separable()
    model, log = fusion.train(fusion.TrainConfig(hidden_layers=1, hidden_width=16, d_common=8, batch_size=16,
                                                 epochs=30, lr=1e-2), x, y, ids)
    assert len(log.epochs) == 30 and log.epochs[-1]["accuracy"] >= 0.99
    assert log.epochs[-1]["loss"] < log.epochs[0]["loss"]
    assert '"epoch": 1' in log.to_jsonl()


def test_training_deterministic_and_order_free():
    x, y, ids = separable()
    a, _ = fusion.train(TINY, x, y, ids)
    b, _ = fusion.train(TINY, x, y, ids)
    perm = np.random.default_rng(5).permutation(len(y))
    c, _ = fusion.train(TINY, {k: v[perm] for k, v in x.items()}, [y[i] for i in perm], [ids[i] for i in perm])
    assert fusion.model_to_bytes(a) == fusion.model_to_bytes(b) == fusion.model_to_bytes(c)
    d, _ = fusion.train(fusion.TrainConfig(**{**fusion.config_dict(TINY), "seed": 1}), x, y, ids)
    assert fusion.model_to_bytes(d) != fusion.model_to_bytes(a)


def test_training_errors():
    x, y, ids = separable()
    with pytest.raises(EmptyDataset):
        fusion.train(TINY, {k: v[:0] for k, v in x.items()}, [], [])
    with pytest.raises(LabelUnseen):
        fusion.train(TINY, x, ["k0"] * len(y), ids)
    with pytest.raises(LabelUnseen):
        fusion.train(TINY, x, y, ids, class_labels=["k0", "k1"])


def test_config_validation():
    with pytest.raises(ValueError):
        fusion.TrainConfig(views=("bin", "other"))
    with pytest.raises(ValueError):
        fusion.TrainConfig(epochs=0)
    assert fusion.TrainConfig.full_profile().hidden_width == 3000
    assert fusion.TrainConfig.desk_profile().hidden_width == 256


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 0.0])}
    opt = fusion.Adam(params, lr=0.1)
    opt.step(params, {"w": np.array([3.0, -0.5, 0.0])})
    # bias-corrected first step is lr * sign(g) up to epsilon
    assert np.allclose(params["w"], [0.9, -1.9, 0.0], atol=1e-7)
    frozen = fusion.Adam(params, frozen=["w"])
    before = params["w"].copy()
    frozen.step(params, {"w": np.ones(3)})
    assert np.array_equal(params["w"], before)


def test_raw_counts_flag():
    x = sample_inputs()
    assert np.array_equal(fusion.preprocess_lib(x["lib"], True), x["lib"])
    assert np.array_equal(fusion.preprocess_lib(x["lib"], False), np.log1p(x["lib"]))


# -- serialization --------------------------------------------------------------

def trained_model():
    x, y, ids = separable(10)
    m, _ = fusion.train(TINY, x, y, ids)
    return fusion.bind(m, Vocabulary(("a", "b")), parse_catalog("x\tads\tLx/\n"))


def test_save_load_bit_equal(tmp_path):
    m = trained_model()
    m.info = {"split_seed": 42}
    p = tmp_path / "m.bin"
    fusion.save_model(m, p)
    back = fusion.load_model(p)
    assert fusion.model_to_bytes(back) == p.read_bytes()
    assert back.info == {"split_seed": 42} and back.vocab_tokens == ("a", "b")
    for k in m.params:
        assert m.params[k].tobytes() == back.params[k].tobytes()
    x = separable(2)[0]
    assert np.array_equal(m.predict_proba(x), back.predict_proba(x))


def test_header_layout():
    data = fusion.model_to_bytes(trained_model())
    assert data[:6] == b"BCTXM1" and struct.unpack_from("<H", data, 6)[0] == 1


def test_corrupt_containers():
    data = fusion.model_to_bytes(trained_model())
    with pytest.raises(BadModelMagic):
        fusion.model_from_bytes(b"XXXXXX" + data[6:])
    with pytest.raises(BadModelMagic):
        fusion.model_from_bytes(data[:3])
    with pytest.raises(ModelFormatError):
        fusion.model_from_bytes(data[:-5])
    with pytest.raises(ModelFormatError):
        fusion.model_from_bytes(data + b"\0")
    with pytest.raises(VersionUnsupported):
        fusion.model_from_bytes(data[:6] + struct.pack("<H", 9) + data[8:])


def test_fingerprint_checks():
    m = trained_model()
    data = fusion.model_to_bytes(m)
    changed = parse_catalog("x\tads\tLx/y/\n").fingerprint()
    with pytest.raises(FingerprintMismatch):
        fusion.model_from_bytes(data, catalog_fingerprint=changed)
    with pytest.raises(FingerprintMismatch):
        fusion.model_from_bytes(data, vocab_fingerprint=Vocabulary(("a", "c")).fingerprint())
    assert fusion.model_from_bytes(data, catalog_fingerprint=changed, allow_mismatch=True).class_labels == m.class_labels
    fusion.model_from_bytes(data, vocab_fingerprint=m.vocab_fingerprint, catalog_fingerprint=m.catalog_fingerprint)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_permutation_invariance_property(seed):
    x, y, ids = separable(6, seed)
    cfg = fusion.TrainConfig(hidden_layers=1, hidden_width=4, d_common=3, batch_size=5, epochs=2)
    perm = np.random.default_rng(seed).permutation(len(y))
    a, _ = fusion.train(cfg, x, y, ids)
    b, _ = fusion.train(cfg, {k: v[perm] for k, v in x.items()}, [y[i] for i in perm], [ids[i] for i in perm])
    assert fusion.model_to_bytes(a) == fusion.model_to_bytes(b)
