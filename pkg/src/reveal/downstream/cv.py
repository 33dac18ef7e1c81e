"""Stratified k-fold grid search for (C, gamma)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import auroc
from .svm import SvmModel, fit_dual, rbf_kernel_matrix, train_svm

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_SCALES = (0.1, 1.0, 10.0)


def default_gamma_grid(n_features: int) -> tuple[float, ...]:
    return tuple(s / n_features for s in DEFAULT_GAMMA_SCALES)


def stratified_folds(labels, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per sample; each class is shuffled then dealt round-robin."""
    labels = np.asarray(labels).astype(int)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    counts = np.bincount(labels, minlength=2)
    if counts.min() < folds:
        raise ValueError(
            f"cannot stratify {folds} folds: smallest class has {counts.min()} samples"
        )
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=int)
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assign


@dataclass
class CVResult:
    C: float
    gamma: float
    table: list = field(default_factory=list)
    oof_scores: np.ndarray = None
    model: SvmModel = None


def cross_validate(
    features,
    labels,
    C_grid=DEFAULT_C_GRID,
    gamma_grid=None,
    folds: int = 5,
    seed: int = 0,
    class_weights="balanced",
    tol: float = 1e-3,
) -> CVResult:
    """Pick (C, gamma) by mean out-of-fold AUROC and refit on all data.

    Ties go to the smaller C, then the smaller gamma. The refit model is
    Platt-calibrated on the out-of-fold decision values of the winner.
    """
    X = np.asarray(features, float)
    y = np.asarray(labels).astype(int)
    gamma_grid = tuple(gamma_grid or default_gamma_grid(X.shape[1]))
    if not C_grid or not gamma_grid:
        raise ValueError("empty hyperparameter grid")
    assign = stratified_folds(y, folds, seed)
    table, oof = [], {}
    for gamma in sorted(gamma_grid):
        K = rbf_kernel_matrix(X, X, gamma)
        for C in sorted(C_grid):
            scores = np.empty(len(y))
            fold_auc = []
            for k in range(folds):
                tr, te = assign != k, assign == k
                res, _ = fit_dual(K[np.ix_(tr, tr)], y[tr], C, class_weights, tol)
                ysign = np.where(y[tr] == 1, 1.0, -1.0)
                scores[te] = K[np.ix_(te, tr)] @ (res.alpha * ysign) - res.rho
                fold_auc.append(auroc(scores[te], y[te]))
            oof[(C, gamma)] = scores
            table.append(
                {
                    "C": C,
                    "gamma": gamma,
                    "mean_auroc": float(np.mean(fold_auc)),
                    "std_auroc": float(np.std(fold_auc)),
                    "fold_auroc": [float(a) for a in fold_auc],
                }
            )
    best = None
    for row in sorted(table, key=lambda r: (r["C"], r["gamma"])):
        if best is None or row["mean_auroc"] > best["mean_auroc"]:
            best = row
    C, gamma = best["C"], best["gamma"]
    model = train_svm(X, y, C, gamma, class_weights, tol, platt_scores=(oof[(C, gamma)], y))
    return CVResult(C, gamma, table, oof[(C, gamma)], model)
