"""Class-weighted RBF support vector machine trained by SMO, with Platt scaling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConvergenceError


def rbf_kernel(x, y, gamma: float) -> float:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = np.asarray(x, float) - np.asarray(y, float)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_kernel_matrix(X, Y, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    sq = np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def class_weight_vector(y01: np.ndarray, class_weights) -> dict:
    """Per-class multipliers of C; ``"balanced"`` uses n / (2 n_class)."""
    n = len(y01)
    if class_weights is None:
        return {0: 1.0, 1: 1.0}
    if isinstance(class_weights, str):
        if class_weights != "balanced":
            raise ValueError(f"unknown class_weights {class_weights!r}")
        return {c: n / (2.0 * np.sum(y01 == c)) for c in (0, 1)}
    return {c: float(class_weights.get(c, 1.0)) for c in (0, 1)}


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    residual: float
    iterations: int


def smo(K: np.ndarray, y: np.ndarray, C: np.ndarray, tol: float = 1e-3, max_iter: Optional[int] = None) -> SmoResult:
    """Solve the soft-margin dual with per-sample box bounds ``0 <= a_i <= C_i``.

    ``y`` holds labels in {-1, +1}. Working pairs are chosen with the
    maximal-violation / second-order rule; iteration stops once the
    maximal KKT violation ``m(a) - M(a)`` drops below ``tol``.
    """
    n = len(y)
    y = y.astype(float)
    Q = (y[:, None] * y[None, :]) * K
    diagQ = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    max_iter = max_iter or max(10_000_000, 100 * n)
    it = 0
    gap = np.inf
    while it < max_iter:
        yG = -y * G
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        up_vals = np.where(up, yG, -np.inf)
        i = int(np.argmax(up_vals))
        m = up_vals[i]
        low_vals = np.where(low, yG, np.inf)
        M = low_vals.min()
        gap = m - M
        if gap < tol:
            break
        b = m - low_vals
        cand = low & (b > 0)
        a = diagQ[i] + diagQ - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 1e-12, a, 1e-12)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        Qi, Qj = Q[i], Q[j]
        Ci, Cj = C[i], C[j]
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diagQ[i] + diagQ[j] + 2.0 * Qi[j], 1e-12)
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            quad = max(diagQ[i] + diagQ[j] - 2.0 * Qi[j], 1e-12)
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += Qi * (ai - old_i) + Qj * (aj - old_j)
        it += 1
    else:
        raise ConvergenceError(f"SMO did not converge in {max_iter} iterations (KKT residual {gap:.3g})", gap)

    yG = -y * G
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        rho = -float(np.mean(yG[free]))
    else:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        hi = np.max(yG[up]) if np.any(up) else 0.0
        lo = np.min(yG[low]) if np.any(low) else 0.0
        rho = -0.5 * float(hi + lo)
    return SmoResult(alpha, rho, float(max(gap, 0.0)), it)


def platt_fit(f, y01, max_iter: int = 100):
    """Fit P(y=1|f) = 1 / (1 + exp(A f + B)) by regularized Newton steps.

    Targets are smoothed with the (N+ + 1)/(N+ + 2) and 1/(N- + 2) priors.
    """
    f = np.asarray(f, float)
    y01 = np.asarray(y01).astype(bool)
    n_pos, n_neg = int(y01.sum()), int((~y01).sum())
    t = np.where(y01, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))

    def objective(A, B):
        z = A * f + B
        # -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
        return float(np.sum(t * np.logaddexp(0, z) + (1 - t) * np.logaddexp(0, -z)))

    fval = objective(A, B)
    sigma = 1e-12
    for _ in range(max_iter):
        z = A * f + B
        p = 1.0 / (1.0 + np.exp(np.clip(z, -700, 700)))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.dot(f * f, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(f, d2)
        d1 = t - p
        g1 = np.dot(f, d1)
        g2 = d1.sum()
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2
        else:
            break
    return float(A), float(B)


def platt_predict(f, A: float, B: float) -> np.ndarray:
    z = A * np.asarray(f, float) + B
    return np.exp(-np.logaddexp(0.0, z))


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    class_weights: dict
    kkt_residual: float
    platt_A: Optional[float] = None
    platt_B: Optional[float] = None
    alpha: Optional[np.ndarray] = None
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        K = rbf_kernel_matrix(X, self.support_vectors, self.gamma)
        return K @ self.dual_coef + self.bias

    def predict_proba(self, X) -> np.ndarray:
        if self.platt_A is None:
            raise ValueError("model has no Platt calibration")
        return platt_predict(self.decision_function(X), self.platt_A, self.platt_B)

    def predict(self, X) -> np.ndarray:
        if self.platt_A is not None:
            return (self.predict_proba(X) > 0.5).astype(int)
        return (self.decision_function(X) > 0).astype(int)


def _as01(labels) -> np.ndarray:
    y = np.asarray(labels).astype(int)
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("SVM training needs both classes")
    return y


def fit_dual(K, y01, C, class_weights="balanced", tol=1e-3, max_iter=None):
    """SMO on a precomputed kernel; returns (SmoResult, weights)."""
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    weights = class_weight_vector(y01, class_weights)
    Cvec = np.where(y01 == 1, C * weights[1], C * weights[0])
    return smo(K, np.where(y01 == 1, 1.0, -1.0), Cvec, tol, max_iter), weights


def train_svm(
    features,
    labels,
    C: float = 1.0,
    gamma: float = 1.0,
    class_weights="balanced",
    tol: float = 1e-3,
    platt_scores=None,
    max_iter: Optional[int] = None,
    K: Optional[np.ndarray] = None,
) -> SvmModel:
    """Fit the SVM; ``platt_scores=(f, y)`` supplies out-of-fold decision values
    for calibration (without them the model is uncalibrated)."""
    X = np.asarray(features, float)
    y01 = _as01(labels)
    if K is None:
        K = rbf_kernel_matrix(X, X, gamma)
    res, weights = fit_dual(K, y01, C, class_weights, tol, max_iter)
    sv = res.alpha > 0
    ysign = np.where(y01 == 1, 1.0, -1.0)
    model = SvmModel(
        support_vectors=X[sv],
        dual_coef=(res.alpha * ysign)[sv],
        bias=-res.rho,
        gamma=gamma,
        C=C,
        class_weights=weights,
        kkt_residual=res.residual,
        alpha=res.alpha,
        n_iter=res.iterations,
    )
    if platt_scores is not None:
        model.platt_A, model.platt_B = platt_fit(*platt_scores)
    return model
