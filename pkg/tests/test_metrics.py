import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import confusion_matrix as sk_confusion
from sklearn.metrics import precision_recall_fscore_support, roc_auc_score

from bctx.harness.metrics import binary_auc, compute_metrics, confusion_matrix, macro_auc_ovr


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_against_sklearn(c, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(c, 60))
    y = rng.integers(0, c, n)
    pred = rng.integers(0, c, n)
    r = compute_metrics(y, pred, [f"c{i}" for i in range(c)])
    p, rc, f, s = precision_recall_fscore_support(y, pred, labels=list(range(c)), zero_division=0)
    assert np.allclose(r.precision, p, atol=1e-12) and np.allclose(r.recall, rc, atol=1e-12)
    assert np.allclose(r.f1, f, atol=1e-12) and r.support == s.tolist()
    assert r.confusion == sk_confusion(y, pred, labels=list(range(c))).tolist()
    assert r.macro_f1 == pytest.approx(float(np.mean(f)), abs=1e-12)
    assert r.accuracy == pytest.approx(float((y == pred).mean()), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1), st.booleans())
def test_auc_against_sklearn(c, seed, coarse):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2 * c, 60))
    y = np.r_[np.arange(c), rng.integers(0, c, n - c)]
    raw = rng.random((n, c))
    if coarse:
        raw = np.round(raw, 1) + 0.01  # plenty of ties
    proba = raw / raw.sum(axis=1, keepdims=True)
    ours = macro_auc_ovr(y, proba)
    if c == 2:
        want = np.mean([roc_auc_score(y == k, proba[:, k]) for k in range(2)])
    else:
        want = roc_auc_score(y, proba, multi_class="ovr", average="macro", labels=list(range(c)))
    assert ours == pytest.approx(want, abs=1e-12)


def test_auc_edge_cases():
    assert binary_auc(np.array([1, 1, 0, 0]), np.array([0.9, 0.8, 0.2, 0.1])) == 1.0
    assert binary_auc(np.array([1, 0]), np.array([0.5, 0.5])) == 0.5
    assert binary_auc(np.array([1, 1]), np.array([0.1, 0.2])) is None


def test_zero_division_and_absent_class():
    r = compute_metrics([0, 0, 1], [0, 0, 0], ["a", "b", "c"])
    assert r.precision[1] == r.recall[1] == r.f1[1] == 0.0
    assert r.f1[2] == 0.0 and r.support[2] == 0
    assert r.macro_f1 == pytest.approx((0.8 + 0 + 0) / 3)


def test_confusion_orientation():
    cm = confusion_matrix([0, 1, 1], [1, 1, 0], 2)
    assert cm.tolist() == [[0, 1], [1, 1]]


def test_report_serialization():
    r = compute_metrics([0, 1], [0, 1], ["a", "b"], proba=np.array([[0.9, 0.1], [0.2, 0.8]]), variant="x")
    d = r.to_dict()
    assert d["variant"] == "x" and d["auc"] == 1.0
    assert "macro" in r.table() and '"macro_f1": 1.0' in r.to_json()
