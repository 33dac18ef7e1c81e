"""Median / most-frequent imputation of risk-factor profiles."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ImputationError
from .schema import FIELD_BY_KEY, MISSING, RISK_FIELDS, RiskFactorProfile


def fill_value(values: Sequence, numeric: bool, name: str = "column"):
    """Statistic used to fill MISSING entries of one column.

    Median of the observed values for continuous columns, the mode for
    categorical ones (ties go to the value seen first).
    """
    observed = [v for v in values if v is not MISSING]
    if not observed:
        raise ImputationError(f"{name}: every value is MISSING; no fill statistic is defined")
    if numeric:
        return float(np.median(np.asarray(observed, dtype=float)))
    counts = Counter(observed)
    top = max(counts.values())
    return next(v for v in observed if counts[v] == top)


def impute_column(values: Sequence, numeric: bool, name: str = "column") -> list:
    fill = fill_value(values, numeric, name)
    return [fill if v is MISSING else v for v in values]


@dataclass
class Imputer:
    fills: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    @classmethod
    def fit(cls, subjects) -> "Imputer":
        fills = {}
        for spec in RISK_FIELDS:
            column = [s.profile[spec.key] for s in subjects]
            fills[spec.key] = fill_value(column, spec.numeric, spec.key)
        return cls(fills)

    def transform(self, subjects) -> list:
        out = []
        filled = Counter()
        for s in subjects:
            values = dict(s.profile.values)
            for key, v in values.items():
                if v is MISSING:
                    values[key] = self.fills[key]
                    filled[key] += 1
            out.append(replace(s, profile=RiskFactorProfile(values)))
        for key in sorted(filled, key=list(FIELD_BY_KEY).index):
            self.log.append(
                {
                    "field": key,
                    "strategy": "median" if FIELD_BY_KEY[key].numeric else "most_frequent",
                    "value": self.fills[key],
                    "n_filled": filled[key],
                }
            )
        return out


def impute(subjects, reference=None):
    """Impute ``subjects`` with statistics from ``reference`` (default: itself).

    Returns the imputed subjects and the provenance log.
    """
    imputer = Imputer.fit(subjects if reference is None else reference)
    return imputer.transform(subjects), imputer.log
