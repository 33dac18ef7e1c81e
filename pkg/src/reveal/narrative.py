"""Clinical-report rendering and hashed bag-of-n-grams text features."""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schema import FIELD_BY_KEY, MISSING, RISK_KEYS, RiskFactorProfile

CANNABIS_AGE = "age of cannabis initiation"
CANNABIS_FALLBACK = "No cannabis use was reported at that age"

TEMPLATE = (
    "The subject is <age> years old <ethnic background> <sex>. "
    "The average total household of this subject is in between <economic status>. "
    "The subject has <HbA1C> HbA1C, <HDL> HDL, <BMI> BMI, <systolic blood pressure> "
    "systolic blood pressure, <diastolic blood pressure> diastolic blood pressure. "
    "For lifestyle, the subject is in <employment status>. The subject is <smoking history>, "
    "has <depression>, has sleep deprivation <sleep deprivation>, and drinks alcohol "
    "<alcohol use>. The subject had his first cannabis at age <age of cannabis initiation> "
    "and used cannabis <cannabis use> times. The subject visits family "
    "<frequency of family visit>, and <number of leisure activity>. For physical activity, "
    "the subject walks <duration of walked 10+ minutes> minutes "
    "<number of days/week of walked 10+ minutes> days per week, exercises moderately "
    "<duration of moderate activity> minutes for <number of days/week of moderate activity> "
    "days a week, and exercises vigorously <duration of vigorous exercise> minutes for "
    "<number of days/week of vigorous activity> days a week. For diet, the subject has "
    "<cooked vegetable intake> tablespoons of cooked vegetables, <raw vegetable intake> "
    "tablespoons of raw vegetables, <fresh fruit intake> tablespoons of fresh fruit, and "
    "<dried fruit intake> dried fruit. In addition, the subject has oily fish "
    "<oily fish intake>, non-oily fish <non oily fish intake>, processed meat "
    "<processed meat intake>, poultry <poultry intake>, beef <beef intake>, lamb "
    "<lamb intake>, and pork <pork intake>. The subject has <bread intake> slices of bread "
    "per week, with <spread type>. The subject drinks <milk type>, <tea intake> cups of tea, "
    "<coffee intake> cups of coffee, <water intake> cups of water per day. The subject puts "
    "<salt added to food> in his diet. For cognitive function, the subject remembered "
    "<numeric memory> digits in the numeric memory test, scored <fluid intelligence> in a "
    "fluid intelligence test, completed trail #1 in <trail-making test A duration> "
    "deciseconds with <trail-making test A error counts> errors, and completed trail #2 in "
    "<trail-making test B duration> deciseconds with <trail-making test B error counts> errors."
)

_PLACEHOLDER = re.compile("<(" + "|".join(re.escape(k) for k in RISK_KEYS) + ")>")


@dataclass(frozen=True)
class ClinicalReport:
    subject_id: str
    text: str
    filled: tuple[str, ...] = field(default=(), compare=False, repr=False)


def render_report(profile: RiskFactorProfile, subject_id: str = "") -> ClinicalReport:
    """Fill the report template from a profile.

    MISSING cannabis-initiation age gets the dedicated fallback sentence;
    any other MISSING field reads "not reported".
    """
    filled = []

    def fill(match):
        key = match.group(1)
        filled.append(key)
        value = profile[key]
        if key == CANNABIS_AGE and value is MISSING:
            return CANNABIS_FALLBACK
        return FIELD_BY_KEY[key].render(value)

    text = _PLACEHOLDER.sub(fill, TEMPLATE)
    return ClinicalReport(subject_id, text, tuple(filled))


def unfilled_placeholders(text: str) -> list[str]:
    return _PLACEHOLDER.findall(text)


_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric unigrams followed by adjacent-word bigrams."""
    words = [w for w in _TOKEN_SPLIT.split(text.lower()) if w]
    return words + [f"{a} {b}" for a, b in zip(words, words[1:])]


@lru_cache(maxsize=1 << 18)
def _bucket_sign(token: str, dim: int, hash_seed: int) -> tuple[int, int]:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=16, key=struct.pack("<Q", hash_seed & (2**64 - 1))
    ).digest()
    bucket = int.from_bytes(digest[:8], "little") % dim
    sign = 1 if digest[8] & 1 else -1
    return bucket, sign


def embed_text(report, dim: int = 256, hash_seed: int = 0) -> np.ndarray:
    """Signed feature hashing of unigrams and bigrams, L2-normalized."""
    if dim < 16:
        raise ValueError(f"dim must be >= 16, got {dim}")
    text = report.text if isinstance(report, ClinicalReport) else report
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("cannot embed empty text")
    vec = np.zeros(dim)
    for tok in tokens:
        bucket, sign = _bucket_sign(tok, dim, hash_seed)
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("hashed features cancel to the zero vector")
    return vec / norm


def embed_batch(reports: Sequence, dim: int = 256, hash_seed: int = 0) -> np.ndarray:
    return np.vstack([embed_text(r, dim, hash_seed) for r in reports]) if reports else np.zeros((0, dim))


def render_cohort(subjects) -> list[ClinicalReport]:
    return [render_report(s.profile, s.id) for s in subjects]


def write_reports_jsonl(reports: Iterable[ClinicalReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(json.dumps({"id": r.subject_id, "text": r.text}, ensure_ascii=False) + "\n")


def read_reports_jsonl(path) -> list[ClinicalReport]:
    with open(path, encoding="utf-8") as fh:
        return [ClinicalReport(d["id"], d["text"]) for d in map(json.loads, filter(str.strip, fh))]


def write_reports_txt(reports: Iterable[ClinicalReport], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in reports:
        (directory / f"{r.subject_id}.txt").write_text(r.text + "\n", encoding="utf-8")
