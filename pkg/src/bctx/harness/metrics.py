"""Classification metrics: per-class P/R/F1, confusion matrix, one-vs-rest AUC."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class MetricsReport:
    labels: list
    precision: list
    recall: list
    f1: list
    support: list
    confusion: list  # rows = true class, columns = predicted class
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    auc: Optional[float] = None
    variant: str = "fused"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self) -> str:
        w = max(8, *(len(s) for s in self.labels))
        lines = [f"variant: {self.variant}", f"{'class':<{w}}  precision  recall  f1      support"]
        for i, lab in enumerate(self.labels):
            lines.append(f"{lab:<{w}}  {self.precision[i]:9.4f}  {self.recall[i]:6.4f}  {self.f1[i]:6.4f}  {self.support[i]:7d}")
        lines.append(f"{'macro':<{w}}  {self.macro_precision:9.4f}  {self.macro_recall:6.4f}  {self.macro_f1:6.4f}")
        lines.append(f"accuracy {self.accuracy:.4f}" + (f"  auc {self.auc:.4f}" if self.auc is not None else ""))
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def _safe_div(a, b):
    return np.divide(a, b, out=np.zeros_like(a, dtype=np.float64), where=b != 0)


def binary_auc(is_pos: np.ndarray, scores: np.ndarray) -> Optional[float]:
    """Trapezoidal ROC area; ties in score move TPR and FPR together."""
    is_pos = np.asarray(is_pos, dtype=bool)
    n_pos = int(is_pos.sum())
    n_neg = is_pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    s = np.asarray(scores)[order]
    p = is_pos[order]
    # cut only where the score changes
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(p)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def macro_auc_ovr(y_true, proba: np.ndarray) -> Optional[float]:
    """Mean one-vs-rest AUC over classes that have both positives and negatives."""
    y_true = np.asarray(y_true)
    vals = [binary_auc(y_true == c, proba[:, c]) for c in range(proba.shape[1])]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def compute_metrics(y_true, y_pred, labels: Sequence[str], proba: Optional[np.ndarray] = None,
                    variant: str = "fused") -> MetricsReport:
    n = len(labels)
    cm = confusion_matrix(y_true, y_pred, n)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    support = cm.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support.astype(np.float64))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    total = int(cm.sum())
    return MetricsReport(
        labels=list(labels),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=support.tolist(),
        confusion=cm.tolist(),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        accuracy=float(tp.sum() / total) if total else 0.0,
        auc=macro_auc_ovr(y_true, proba) if proba is not None else None,
        variant=variant,
    )
