"""Per-subject feature vectors for the downstream classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..align.model import AlignmentModel, encode
from ..narrative import embed_batch, render_cohort
from ..schema import MISSING, MORPHOMETRY_NAMES, RISK_FIELDS

VARIANTS = ("joint", "image_only", "text_only", "image_plus_table", "tabular")


def tabular_columns(include_morphometry: bool = False) -> list[str]:
    cols = []
    for spec in RISK_FIELDS:
        if spec.numeric:
            cols.append(spec.key)
        else:
            cols += [f"{spec.key}={c}" for c in spec.categories]
    if include_morphometry:
        cols += list(MORPHOMETRY_NAMES)
    return cols


def tabular_matrix(subjects, include_morphometry: bool = False) -> np.ndarray:
    """Numeric fields as-is, categorical fields one-hot. Subjects must be imputed."""
    rows = []
    for s in subjects:
        row = []
        for spec in RISK_FIELDS:
            v = s.profile[spec.key]
            if v is MISSING:
                raise ValueError(f"subject {s.id}: {spec.key} is MISSING; impute first")
            if spec.numeric:
                row.append(float(v))
            else:
                row += [1.0 if v == c else 0.0 for c in spec.categories]
        if include_morphometry:
            row += list(s.morphometry)
        rows.append(row)
    return np.asarray(rows, dtype=float)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, float)
        std = X.std(axis=0, ddof=1) if len(X) > 1 else np.ones(X.shape[1])
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) / self.std


def build_features(model, subjects, variant: str = "joint", table_scaler=None, reports=None) -> np.ndarray:
    """Feature matrix for ``subjects``.

    ``image_plus_table`` and ``tabular`` need ``table_scaler`` fitted on the
    SVM training subjects (see :func:`fit_table_scaler`). ``reports`` overrides
    the narratives rendered from ``subjects``, e.g. to keep "not reported"
    wording for values that were imputed for the table block.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "tabular":
        if table_scaler is None:
            raise ValueError("tabular variant needs a table_scaler")
        return table_scaler.transform(tabular_matrix(subjects, include_morphometry=True))
    if not isinstance(model, AlignmentModel):
        raise ValueError(f"variant {variant!r} needs a trained AlignmentModel")
    text_dim = model.text_head.d_in
    hash_seed = int(model.config.get("hash_seed", 0))
    X_img = np.vstack([s.image_proxy for s in subjects])
    if reports is None:
        reports = render_cohort(subjects)
    elif len(reports) != len(subjects):
        raise ValueError("reports and subjects differ in length")
    T = embed_batch(reports, text_dim, hash_seed)
    pair = encode(model, X_img, T)
    if variant == "joint":
        return np.hstack([pair.I, pair.T_emb])
    if variant == "image_only":
        return pair.I
    if variant == "text_only":
        return pair.T_emb
    if table_scaler is None:
        raise ValueError("image_plus_table needs a table_scaler")
    return np.hstack([pair.I, table_scaler.transform(tabular_matrix(subjects))])


def fit_table_scaler(train_subjects, variant: str = "image_plus_table") -> Standardizer:
    return Standardizer.fit(tabular_matrix(train_subjects, include_morphometry=variant == "tabular"))
