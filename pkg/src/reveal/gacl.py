"""Group-aware contrastive labels from intra-modality similarity.

Subjects whose morphometry or report features are similar enough are treated
as positive image-text pairs, in addition to each subject's own pair.
"""

from __future__ import annotations

import numpy as np

OR, AND = "or", "and"


def z_normalize(F_raw, names=None) -> np.ndarray:
    """Column-standardize with the sample (n-1) standard deviation."""
    F_raw = np.asarray(F_raw, dtype=float)
    if F_raw.ndim != 2 or F_raw.shape[0] < 2:
        raise ValueError("z_normalize needs an N x K matrix with N >= 2")
    mean = F_raw.mean(axis=0)
    std = F_raw.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        label = names[bad[0]] if names is not None else f"column {bad[0]}"
        raise ValueError(f"zero-variance feature: {label}")
    return (F_raw - mean) / std


def row_normalize(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {zero[0]} has zero norm")
    return X / norms[:, None]


def similarity(X, row_normalize_rows: bool = True) -> np.ndarray:
    """Gram matrix of ``X``; cosine similarity when rows are normalized."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("similarity input must be finite")
    if row_normalize_rows:
        X = row_normalize(X)
    S = X @ X.T
    return 0.5 * (S + S.T)


def threshold_mask(S, tau: float) -> np.ndarray:
    """Strictly-greater-than mask with the diagonal forced true."""
    if not np.isfinite(tau):
        raise ValueError("threshold must be finite")
    mask = np.asarray(S) > tau
    np.fill_diagonal(mask, True)
    return mask


def group_labels(mask_F, mask_T, combiner: str = OR) -> np.ndarray:
    """Combine two masks into a {+1, -1} label matrix with a +1 diagonal."""
    mask_F, mask_T = np.asarray(mask_F, bool), np.asarray(mask_T, bool)
    if mask_F.shape != mask_T.shape:
        raise ValueError(f"mask shapes differ: {mask_F.shape} vs {mask_T.shape}")
    combiner = combiner.lower()
    if combiner == OR:
        group = mask_F | mask_T
    elif combiner == AND:
        group = mask_F & mask_T
    else:
        raise ValueError(f"combiner must be 'or' or 'and', got {combiner!r}")
    L = np.where(group, 1.0, -1.0)
    np.fill_diagonal(L, 1.0)
    return L


def label_matrix(F, T, tau_F, tau_T, combiner=OR, normalize_F=True, raw_dot_product=False):
    """Full chain: z-normalize morphometry, similarities, masks, labels.

    ``raw_dot_product`` keeps the literal Gram matrix of the z-scored rows
    instead of cosine similarity.
    """
    Fz = z_normalize(F) if normalize_F else np.asarray(F, float)
    S_F = similarity(Fz, row_normalize_rows=not raw_dot_product)
    S_T = similarity(T, row_normalize_rows=True)
    return group_labels(threshold_mask(S_F, tau_F), threshold_mask(S_T, tau_T), combiner)


def offdiag(S) -> np.ndarray:
    S = np.asarray(S)
    return S[np.triu_indices(S.shape[0], k=1)]


def quantile_range(values, q: float = 0.75) -> tuple[float, float]:
    """(quantile ``q``, max) with linear interpolation between order statistics."""
    values = np.asarray(values, dtype=float)
    return float(np.quantile(values, q, method="linear")), float(values.max())


def quantile_thresholds(S_dev, q: float = 0.75) -> tuple[float, float]:
    """Threshold search range taken from the off-diagonal similarities."""
    S_dev = np.asarray(S_dev)
    if S_dev.ndim != 2 or S_dev.shape[0] < 3:
        raise ValueError("need at least 3 subjects for threshold quantiles")
    return quantile_range(offdiag(S_dev), q)


def quartiles(S_dev) -> list[float]:
    """First, second and third quartile of the off-diagonal similarities."""
    values = offdiag(S_dev)
    return [float(np.quantile(values, q, method="linear")) for q in (0.25, 0.5, 0.75)]


def positive_fraction(L) -> float:
    return float(np.mean(np.asarray(L) > 0))
