"""Synthetic preclinical cohorts and their alignment/evaluation splits.

A shared scalar latent risk drives the case label, the retinal morphometry and
a subset of the risk factors, so the two modalities carry correlated signal
about the outcome. The strength of that coupling is ``signal_strength``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .errors import ConfigError, InfeasibleMatchingError
from .schema import (
    FIELD_BY_KEY,
    MISSING,
    MORPHOMETRY_NAMES,
    N_MORPHOMETRY,
    RISK_FIELDS,
    RiskFactorProfile,
)

CONTROL, CASE = "control", "case"

#: Risk-factor loadings on the latent risk; positive means higher values (or
#: later categories) for subjects at higher risk.
DEFAULT_RISK_LOADINGS = {
    "HbA1C": 0.5,
    "systolic blood pressure": 0.4,
    "diastolic blood pressure": 0.3,
    "BMI": 0.3,
    "HDL": -0.3,
    "numeric memory": -0.6,
    "fluid intelligence": -0.6,
    "trail-making test A duration": 0.6,
    "trail-making test A error counts": 0.4,
    "trail-making test B duration": 0.6,
    "trail-making test B error counts": 0.4,
    "depression": 0.5,
    "sleep deprivation": 0.4,
    "smoking history": 0.4,
    "economic status": -0.3,
    "number of days/week of walked 10+ minutes": -0.3,
    "number of days/week of moderate activity": -0.3,
    "number of days/week of vigorous activity": -0.3,
    "number of leisure activity": -0.4,
    "frequency of family visit": 0.4,
    "oily fish intake": -0.3,
    "salt added to food": 0.3,
    "processed meat intake": 0.2,
}

#: Categorical fields that shift morphometry (age does too, linearly).
MORPH_COVARIATES = ("sex", "ethnic background", "smoking history")

# (mean, sd) on the natural scale for numeric fields, before clipping.
_NUMERIC_DIST = {
    "age": (58.0, 8.0),
    "BMI": (27.0, 4.5),
    "HbA1C": (36.0, 6.0),
    "HDL": (1.45, 0.38),
    "systolic blood pressure": (138.0, 18.0),
    "diastolic blood pressure": (82.0, 10.0),
    "numeric memory": (6.7, 1.3),
    "fluid intelligence": (6.0, 2.1),
    "trail-making test A duration": (380.0, 110.0),
    "trail-making test A error counts": (1.0, 1.2),
    "trail-making test B duration": (750.0, 260.0),
    "trail-making test B error counts": (2.0, 2.2),
    "age of cannabis initiation": (19.0, 4.0),
    "duration of walked 10+ minutes": (60.0, 45.0),
    "number of days/week of walked 10+ minutes": (5.0, 1.8),
    "duration of moderate activity": (60.0, 50.0),
    "number of days/week of moderate activity": (3.5, 2.2),
    "duration of vigorous exercise": (40.0, 35.0),
    "number of days/week of vigorous activity": (1.8, 1.8),
    "number of leisure activity": (1.6, 1.1),
    "cooked vegetable intake": (2.8, 1.7),
    "raw vegetable intake": (2.2, 1.8),
    "fresh fruit intake": (2.3, 1.5),
    "dried fruit intake": (0.8, 1.2),
    "bread intake": (12.0, 7.0),
    "tea intake": (3.5, 2.5),
    "coffee intake": (2.0, 2.0),
    "water intake": (2.5, 2.0),
}

# Morphometry on the natural scale: (kind, centre, scale) where
# "logistic" maps to (0, 1) and "log" maps to positive reals.
_MORPH_SHAPE = {
    "cup-to-disc ratio": ("logistic", 0.4, 0.4),
    "fractal dimension": ("log", 1.45, 0.015),
    "fractal density": ("log", 0.08, 0.1),
    "distance tortuosity": ("log", 1.08, 0.02),
    "squared curvature tortuosity": ("log", 2.0, 0.3),
    "tortuosity density": ("log", 0.7, 0.05),
}


@dataclass
class CohortConfig:
    n_subjects: int = 2400
    prevalence: float = 0.05
    signal_strength: float = 0.9
    label_noise: float = 0.5
    morph_noise: float = 1.0
    risk_noise: float = 1.0
    image_noise: float = 1.5
    image_nuisance: float = 1.0
    morph_loading: float = 0.6
    risk_loading_scale: float = 2.0
    covariate_loading: float = 1.0
    image_dim: int = 32
    missing_rate: float = 0.02
    seed: int = 0
    risk_loadings: dict = field(default_factory=lambda: dict(DEFAULT_RISK_LOADINGS))

    def validate(self) -> None:
        if not isinstance(self.n_subjects, int) or self.n_subjects < 10:
            raise ConfigError(f"n_subjects must be an integer >= 10, got {self.n_subjects!r}")
        if not 0.0 < self.prevalence < 0.5:
            raise ConfigError(f"prevalence must lie in (0, 0.5), got {self.prevalence}")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError(f"signal_strength must lie in [0, 1], got {self.signal_strength}")
        for name in ("label_noise", "morph_noise", "risk_noise", "image_noise", "image_nuisance", "missing_rate",
                     "covariate_loading"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.missing_rate >= 1:
            raise ConfigError("missing_rate must be < 1")
        if self.image_dim < 2:
            raise ConfigError("image_dim must be >= 2")
        unknown = set(self.risk_loadings) - set(FIELD_BY_KEY)
        if unknown:
            raise ConfigError(f"risk_loadings name unknown fields: {sorted(unknown)}")
        if self.seed is None:
            raise ConfigError("seed is required")

    @classmethod
    def from_dict(cls, data: dict) -> "CohortConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown cohort config keys: {sorted(extra)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "CohortConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data.get("cohort", data))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Subject:
    id: str
    profile: RiskFactorProfile
    morphometry: np.ndarray
    image_proxy: np.ndarray
    incident_label: str = CONTROL
    years_to_onset: Optional[float] = None

    def __post_init__(self):
        self.morphometry = np.asarray(self.morphometry, dtype=float)
        self.image_proxy = np.asarray(self.image_proxy, dtype=float)
        if self.morphometry.shape != (N_MORPHOMETRY,):
            raise ValueError(f"morphometry must have {N_MORPHOMETRY} entries")
        if self.incident_label not in (CONTROL, CASE):
            raise ValueError(f"incident_label must be {CONTROL!r} or {CASE!r}")
        if (self.years_to_onset is not None) != self.is_case:
            raise ValueError("years_to_onset must be present exactly for cases")

    @property
    def is_case(self) -> bool:
        return self.incident_label == CASE


def _ordinal(latent: np.ndarray, n_levels: int) -> np.ndarray:
    """Cut a standard-normal latent into ``n_levels`` roughly skewed levels."""
    # Geometric-ish base probabilities: lower levels more common.
    weights = 0.6 ** np.arange(n_levels)
    cuts = norm.ppf(np.cumsum(weights / weights.sum())[:-1])
    return np.searchsorted(cuts, latent)


def _morph_natural(m_std: np.ndarray) -> np.ndarray:
    out = np.empty_like(m_std)
    for k, name in enumerate(MORPHOMETRY_NAMES):
        kind, centre, scale = next(v for key, v in _MORPH_SHAPE.items() if name.endswith(key))
        if kind == "logistic":
            out[:, k] = expit(logit(centre) + scale * m_std[:, k])
        else:
            out[:, k] = centre * np.exp(scale * m_std[:, k])
    return out


def generate_cohort(config: CohortConfig) -> list[Subject]:
    """Draw a synthetic cohort; deterministic given ``config.seed``."""
    config.validate()
    n, rho = config.n_subjects, config.signal_strength
    rng = np.random.default_rng(config.seed)
    design = np.random.default_rng([config.seed, 1])

    z = rng.standard_normal(n)
    label_score = z + config.label_noise * rng.standard_normal(n)
    n_cases = int(round(config.prevalence * n))
    is_case = np.zeros(n, dtype=bool)
    is_case[np.argsort(-label_score, kind="stable")[:n_cases]] = True

    columns = {}
    for spec in RISK_FIELDS:
        load = config.risk_loadings.get(spec.key, 0.0) * config.risk_loading_scale * rho
        latent = load * z + config.risk_noise * rng.standard_normal(n)
        if spec.numeric:
            mean, sd = _NUMERIC_DIST[spec.key]
            vals = np.clip(mean + sd * latent, spec.lo, spec.hi)
            columns[spec.key] = np.round(vals, spec.decimals)
        elif spec.key in config.risk_loadings:
            columns[spec.key] = _ordinal(latent, len(spec.categories))
        elif spec.key == "sex":
            columns[spec.key] = (rng.random(n) < 0.46).astype(int)
        else:
            weights = 0.55 ** np.arange(len(spec.categories))
            columns[spec.key] = rng.choice(len(spec.categories), n, p=weights / weights.sum())
    # morphometry in standardized units: latent risk, reported covariates
    # (the text side sees these too) and noise, then mapped to natural ranges
    loadings = design.choice([-1.0, 1.0], N_MORPHOMETRY) * design.uniform(0.5, 1.5, N_MORPHOMETRY)
    loadings *= config.morph_loading
    m_std = rho * np.outer(z, loadings) + config.morph_noise * rng.standard_normal((n, N_MORPHOMETRY))
    cov = np.zeros((n, N_MORPHOMETRY))
    for key in MORPH_COVARIATES:
        effects = design.standard_normal((len(FIELD_BY_KEY[key].categories), N_MORPHOMETRY))
        cov += effects[columns[key]]
    age_z = (columns["age"] - _NUMERIC_DIST["age"][0]) / _NUMERIC_DIST["age"][1]
    cov += np.outer(age_z, design.standard_normal(N_MORPHOMETRY))
    m_std += config.covariate_loading * cov / math.sqrt(len(MORPH_COVARIATES) + 1)
    morph = _morph_natural(m_std)

    # image proxy: affine in standardized morphometry plus nuisance dimensions
    n_sig = config.image_dim // 2
    A = design.standard_normal((n_sig, N_MORPHOMETRY)) / math.sqrt(N_MORPHOMETRY)
    offset = design.standard_normal(n_sig)
    image = np.empty((n, config.image_dim))
    image[:, :n_sig] = m_std @ A.T + offset + config.image_noise * rng.standard_normal((n, n_sig))
    image[:, n_sig:] = config.image_nuisance * rng.standard_normal((n, config.image_dim - n_sig))

    # ordinal cannabis use, mostly zero; initiation age only for users
    never = columns["cannabis use"] == 0

    missing = rng.random((n, len(RISK_FIELDS))) < config.missing_rate
    onset = 1.5 + 10.08 * rng.beta(5.0, 2.0, n)

    subjects = []
    width = len(str(n - 1))
    for i in range(n):
        values = {}
        for j, spec in enumerate(RISK_FIELDS):
            raw = columns[spec.key][i]
            if missing[i, j] and spec.key not in ("age", "sex"):
                values[spec.key] = MISSING
            elif spec.numeric:
                values[spec.key] = float(raw)
            else:
                values[spec.key] = spec.categories[int(raw)]
        if never[i] or values["cannabis use"] is MISSING:
            values["age of cannabis initiation"] = MISSING
        subjects.append(
            Subject(
                id=f"S{i:0{width}d}",
                profile=RiskFactorProfile(values),
                morphometry=morph[i],
                image_proxy=image[i],
                incident_label=CASE if is_case[i] else CONTROL,
                years_to_onset=float(onset[i]) if is_case[i] else None,
            )
        )
    return subjects


@dataclass(frozen=True)
class CohortSplits:
    align_train: tuple[str, ...]
    align_val: tuple[str, ...]
    eval_pool: tuple[str, ...]
    svm_train: tuple[str, ...]
    svm_test: tuple[str, ...]

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "CohortSplits":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in data]
        if missing:
            raise ConfigError(f"splits file lacks {missing}")
        return cls(*(tuple(data[n]) for n in names))


def eval_control_count(n_cases: int, prevalence: float) -> int:
    """Number of controls giving ``prevalence`` alongside ``n_cases`` cases."""
    return int(round(n_cases * (1.0 - prevalence) / prevalence))


def _match_controls(cases, pool, need, rng):
    """Greedy round-robin nearest-neighbour matching on (sex, age)."""
    ages = np.array([_age(s) for s in pool])
    sexes = np.array([s.profile["sex"] for s in pool], dtype=object)
    used = np.zeros(len(pool), dtype=bool)
    order = [cases[i] for i in rng.permutation(len(cases))]
    chosen = []
    while len(chosen) < need:
        for case in order:
            if len(chosen) == need:
                break
            cost = np.abs(ages - _age(case)) + 1000.0 * (sexes != case.profile["sex"])
            cost[used] = np.inf
            k = int(np.argmin(cost))
            used[k] = True
            chosen.append(pool[k])
    return chosen


def _age(subject) -> float:
    age = subject.profile["age"]
    return 58.0 if age is MISSING else float(age)


def _stratified_holdout(ids, labels, fraction, rng):
    train, test = [], []
    for cls in (False, True):
        members = [i for i, lab in zip(ids, labels) if lab == cls]
        members = [members[k] for k in rng.permutation(len(members))]
        n_test = int(round(fraction * len(members)))
        test += members[:n_test]
        train += members[n_test:]
    return tuple(sorted(train)), tuple(sorted(test))


def split_cohort(
    subjects: Sequence[Subject],
    align_train: float = 0.45,
    align_val: float = 0.1,
    prevalence: float = 0.12,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> CohortSplits:
    """Assign controls to alignment sets and build the case-control eval pool.

    Controls are first split randomly into ``align_train``/``align_val``
    fractions; every case plus (sex, age)-matched controls drawn from the
    remaining controls form the evaluation pool at ``prevalence``, which is
    then split into SVM train/test sets stratified by label.
    """
    if align_train <= 0 or align_val < 0 or align_train + align_val >= 1:
        raise ConfigError("alignment fractions must be positive and sum to < 1")
    if not 0 < prevalence < 1:
        raise ConfigError("prevalence must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    cases = [s for s in subjects if s.is_case]
    controls = [s for s in subjects if not s.is_case]
    if not cases:
        raise InfeasibleMatchingError("cohort has no cases; evaluation pool would be empty")

    controls = [controls[k] for k in rng.permutation(len(controls))]
    n_train = int(math.floor(align_train * len(controls)))
    n_val = int(math.floor(align_val * len(controls)))
    train_ids = tuple(sorted(s.id for s in controls[:n_train]))
    val_ids = tuple(sorted(s.id for s in controls[n_train:n_train + n_val]))
    pool = controls[n_train + n_val:]

    need = eval_control_count(len(cases), prevalence)
    if need > len(pool):
        shortfall = need - len(pool)
        raise InfeasibleMatchingError(
            f"need {need} matched controls but only {len(pool)} remain "
            f"(shortfall {shortfall})",
            shortfall=shortfall,
        )
    matched = _match_controls(cases, pool, need, rng)
    eval_subjects = cases + matched
    eval_ids = tuple(sorted(s.id for s in eval_subjects))
    svm_train, svm_test = _stratified_holdout(
        [s.id for s in eval_subjects], [s.is_case for s in eval_subjects], test_fraction, rng
    )
    return CohortSplits(train_ids, val_ids, eval_ids, svm_train, svm_test)


def resplit_eval_pool(subjects: Sequence[Subject], splits: CohortSplits, test_fraction: float = 0.2,
                      seed: int = 0) -> CohortSplits:
    """Redraw only the stratified SVM train/test holdout of ``splits.eval_pool``."""
    index = by_id(subjects)
    labels = [index[i].is_case for i in splits.eval_pool]
    rng = np.random.default_rng([seed, 7])
    svm_train, svm_test = _stratified_holdout(list(splits.eval_pool), labels, test_fraction, rng)
    return CohortSplits(splits.align_train, splits.align_val, splits.eval_pool, svm_train, svm_test)


def by_id(subjects: Sequence[Subject]) -> dict[str, Subject]:
    return {s.id: s for s in subjects}


def select(subjects: Sequence[Subject], ids: Sequence[str]) -> list[Subject]:
    index = by_id(subjects)
    return [index[i] for i in ids]


def prevalence_of(subjects: Sequence[Subject]) -> float:
    return sum(s.is_case for s in subjects) / len(subjects)
