"""Variable schema for risk-factor profiles and retinal morphometry.

Field keys double as CSV column headers and as the placeholder labels used in
the clinical report template, so a single name identifies a variable
everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

Value = Union[float, str, None]

#: Sentinel for an unavailable value. Serialized as an empty CSV cell.
MISSING = None

GROUPS = (
    "demographic",
    "general_health",
    "risk_factors",
    "physical_activity",
    "social_leisure",
    "dietary",
)

FREQUENCY = (
    "never",
    "less than once a week",
    "once a week",
    "2-4 times a week",
    "5-6 times a week",
    "once or more daily",
)


@dataclass(frozen=True)
class FieldSpec:
    key: str
    group: str
    kind: str  # "numeric" | "categorical"
    lo: float = 0.0
    hi: float = 0.0
    decimals: int = 0
    categories: tuple[str, ...] = ()
    suffix: str = ""

    @property
    def numeric(self) -> bool:
        return self.kind == "numeric"

    def render(self, value: Value) -> str:
        """Format a value the way it appears in a clinical report."""
        if value is MISSING:
            return "not reported"
        if self.numeric:
            text = f"{float(value):.{self.decimals}f}"
            return text + self.suffix
        return str(value)


def _num(key, group, lo, hi, decimals=0, suffix=""):
    return FieldSpec(key, group, "numeric", lo, hi, decimals, suffix=suffix)


def _cat(key, group, categories):
    return FieldSpec(key, group, "categorical", categories=tuple(categories))


RISK_FIELDS: tuple[FieldSpec, ...] = (
    # demographic (5)
    _num("age", "demographic", 40, 75),
    _cat("sex", "demographic", ("female", "male")),
    _cat(
        "economic status",
        "demographic",
        (
            "0 and 18,000 pounds",
            "18,000 and 30,999 pounds",
            "31,000 and 51,999 pounds",
            "52,000 and 100,000 pounds",
            "100,000 and 500,000 pounds",
        ),
    ),
    _cat(
        "ethnic background",
        "demographic",
        ("British", "Irish", "White other", "Asian", "Black", "Mixed", "Chinese"),
    ),
    _cat(
        "employment status",
        "demographic",
        (
            "paid employment",
            "retirement",
            "unemployment",
            "full-time education",
            "home or family care",
        ),
    ),
    # general health (11)
    _num("BMI", "general_health", 14, 60, 1),
    _num("HbA1C", "general_health", 15, 150, 1),
    _num("HDL", "general_health", 0.3, 4.0, 2),
    _num("systolic blood pressure", "general_health", 80, 220),
    _num("diastolic blood pressure", "general_health", 40, 130),
    _num("numeric memory", "general_health", 2, 12),
    _num("fluid intelligence", "general_health", 0, 13),
    _num("trail-making test A duration", "general_health", 100, 1500),
    _num("trail-making test A error counts", "general_health", 0, 20),
    _num("trail-making test B duration", "general_health", 200, 3000),
    _num("trail-making test B error counts", "general_health", 0, 30),
    # risk factors (6)
    _cat("depression", "risk_factors", ("no depression", "depression")),
    _cat("sleep deprivation", "risk_factors", ("never or rarely", "sometimes", "usually")),
    _cat(
        "alcohol use",
        "risk_factors",
        (
            "never",
            "on special occasions only",
            "one to three times a month",
            "once or twice a week",
            "three or four times a week",
            "daily or almost daily",
        ),
    ),
    _cat(
        "smoking history",
        "risk_factors",
        ("a never smoker", "a previous smoker", "a current smoker"),
    ),
    _cat(
        "cannabis use",
        "risk_factors",
        ("zero", "one or two", "three to ten", "eleven to one hundred", "over one hundred"),
    ),
    _num("age of cannabis initiation", "risk_factors", 10, 60),
    # physical activity (6)
    _num("duration of walked 10+ minutes", "physical_activity", 0, 600),
    _num("number of days/week of walked 10+ minutes", "physical_activity", 0, 7),
    _num("duration of moderate activity", "physical_activity", 0, 600),
    _num("number of days/week of moderate activity", "physical_activity", 0, 7),
    _num("duration of vigorous exercise", "physical_activity", 0, 600),
    _num("number of days/week of vigorous activity", "physical_activity", 0, 7),
    # social and leisure (2)
    _cat(
        "frequency of family visit",
        "social_leisure",
        (
            "almost daily",
            "2-4 times a week",
            "about once a week",
            "about once a month",
            "once every few months",
            "never or almost never",
        ),
    ),
    _num("number of leisure activity", "social_leisure", 0, 5, suffix=" leisure activities"),
    # dietary (18)
    _num("cooked vegetable intake", "dietary", 0, 20),
    _num("raw vegetable intake", "dietary", 0, 20),
    _num("fresh fruit intake", "dietary", 0, 20),
    _num("dried fruit intake", "dietary", 0, 20),
    _cat("oily fish intake", "dietary", FREQUENCY),
    _cat("non oily fish intake", "dietary", FREQUENCY),
    _cat("processed meat intake", "dietary", FREQUENCY),
    _cat("poultry intake", "dietary", FREQUENCY),
    _cat("beef intake", "dietary", FREQUENCY),
    _cat("lamb intake", "dietary", FREQUENCY),
    _cat("pork intake", "dietary", FREQUENCY),
    _cat(
        "milk type",
        "dietary",
        ("full cream milk", "semi-skimmed milk", "skimmed milk", "soya milk", "no milk"),
    ),
    _cat(
        "spread type",
        "dietary",
        ("no spread", "butter", "sunflower spread", "olive oil spread", "other spread"),
    ),
    _num("bread intake", "dietary", 0, 70),
    _cat(
        "salt added to food",
        "dietary",
        ("never or rarely salt", "sometimes salt", "usually salt", "always salt"),
    ),
    _num("tea intake", "dietary", 0, 20),
    _num("coffee intake", "dietary", 0, 20),
    _num("water intake", "dietary", 0, 20),
)

FIELD_BY_KEY: dict[str, FieldSpec] = {f.key: f for f in RISK_FIELDS}
RISK_KEYS: tuple[str, ...] = tuple(f.key for f in RISK_FIELDS)
GROUP_SIZES = {g: sum(f.group == g for f in RISK_FIELDS) for g in GROUPS}

_VESSELS = ("artery", "vein", "combined")
_VASCULAR = (
    "fractal dimension",
    "fractal density",
    "distance tortuosity",
    "squared curvature tortuosity",
    "tortuosity density",
)

#: Two optic-nerve-head ratios followed by 15 vascular measurements.
MORPHOMETRY_NAMES: tuple[str, ...] = (
    "vertical cup-to-disc ratio",
    "horizontal cup-to-disc ratio",
) + tuple(f"{v} {m}" for v in _VESSELS for m in _VASCULAR)

N_MORPHOMETRY = len(MORPHOMETRY_NAMES)
CUP_TO_DISC = slice(0, 2)


@dataclass(frozen=True)
class RiskFactorProfile:
    """One participant's risk-factor values keyed by field name.

    Values are floats for numeric fields, category strings for categorical
    fields and ``MISSING`` (``None``) when unavailable.
    """

    values: dict[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.values) - set(RISK_KEYS)
        if unknown:
            raise KeyError(f"unknown risk-factor fields: {sorted(unknown)}")
        for key in RISK_KEYS:
            self.values.setdefault(key, MISSING)

    def __getitem__(self, key: str) -> Value:
        return self.values[key]

    def replace(self, changes: dict[str, Value]) -> "RiskFactorProfile":
        return RiskFactorProfile({**self.values, **changes})

    def validate(self) -> None:
        for spec in RISK_FIELDS:
            v = self.values[spec.key]
            if v is MISSING:
                continue
            if spec.numeric:
                if not spec.lo <= float(v) <= spec.hi:
                    raise ValueError(f"{spec.key}={v} outside [{spec.lo}, {spec.hi}]")
            elif v not in spec.categories:
                raise ValueError(f"{spec.key}={v!r} is not one of {spec.categories}")


def field_spec(key: str) -> Optional[FieldSpec]:
    return FIELD_BY_KEY.get(key)
