"""Classification metrics and two-sample comparison statistics."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as student_t

METRIC_NAMES = ("auroc", "balanced_accuracy", "f1", "mcc")


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (midranks for ties)."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC is undefined when only one class is present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion(pred, labels):
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & labels))
    tn = int(np.sum(~pred & ~labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return tp, tn, fp, fn


def balanced_accuracy(pred, labels) -> float:
    tp, tn, fp, fn = confusion(pred, labels)
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    return 0.5 * (sens + spec)


def f1_score(pred, labels) -> float:
    tp, _, fp, fn = confusion(pred, labels)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def mcc(pred, labels) -> float:
    tp, tn, fp, fn = confusion(pred, labels)
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    return (tp * tn - fp * fn) / denom if denom else 0.0


def metrics(scores, probabilities, labels, threshold: float = 0.5) -> dict:
    """AUROC on ``scores``; thresholded metrics on ``probabilities > threshold``."""
    pred = np.asarray(probabilities, float) > threshold
    return {
        "auroc": auroc(scores, labels),
        "balanced_accuracy": balanced_accuracy(pred, labels),
        "f1": f1_score(pred, labels),
        "mcc": mcc(pred, labels),
    }


def welch_t(a, b):
    """Welch's unequal-variance t statistic and two-sided p-value."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va + vb == 0:
        raise ValueError("both samples have zero variance; t is undefined")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = 2.0 * student_t.sf(abs(t), df)
    return float(t), float(min(p, 1.0))


def hedges_g(a, b) -> float:
    """Cohen's d with pooled SD, times the 1 - 3/(4(n1+n2) - 9) correction."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise ValueError("each sample needs at least two observations")
    pooled = math.sqrt(((n1 - 1) * a.var(ddof=1) + (n2 - 1) * b.var(ddof=1)) / (n1 + n2 - 2))
    if pooled == 0:
        if a.mean() == b.mean():
            return 0.0
        raise ValueError("pooled standard deviation is zero")
    d = (a.mean() - b.mean()) / pooled
    return float((1 - 3 / (4 * (n1 + n2) - 9)) * d)
