"""CSV round-trip for cohorts. Empty cells encode MISSING."""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Sequence

from .cohort import CASE, CONTROL, Subject
from .errors import ParseError, SchemaError
from .schema import FIELD_BY_KEY, MISSING, MORPHOMETRY_NAMES, RISK_KEYS, RiskFactorProfile

ID, LABEL, ONSET = "id", "incident_label", "years_to_onset"
IMAGE_PREFIX = "image_proxy_"
_IMAGE_RE = re.compile(rf"^{IMAGE_PREFIX}(\d+)$")


def header(image_dim: int) -> list[str]:
    return (
        [ID]
        + list(RISK_KEYS)
        + list(MORPHOMETRY_NAMES)
        + [f"{IMAGE_PREFIX}{k}" for k in range(image_dim)]
        + [LABEL, ONSET]
    )


def _fmt(value) -> str:
    if value is MISSING:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_cohort_csv(subjects: Sequence[Subject], path) -> None:
    image_dim = len(subjects[0].image_proxy) if subjects else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header(image_dim))
        for s in subjects:
            row = [s.id]
            row += [_fmt(s.profile[k]) for k in RISK_KEYS]
            row += [repr(float(v)) for v in s.morphometry]
            row += [repr(float(v)) for v in s.image_proxy]
            row += [s.incident_label, _fmt(s.years_to_onset)]
            writer.writerow(row)


def _check_header(columns: list[str]) -> int:
    image_idx = sorted(int(m.group(1)) for c in columns if (m := _IMAGE_RE.match(c)))
    required = [ID, *RISK_KEYS, *MORPHOMETRY_NAMES, LABEL, ONSET]
    missing = [c for c in required if c not in columns]
    known = set(required)
    unknown = [c for c in columns if c not in known and not _IMAGE_RE.match(c)]
    if image_idx != list(range(len(image_idx))):
        missing += [f"{IMAGE_PREFIX}{k}" for k in range(max(image_idx, default=-1) + 1) if k not in image_idx]
    if not image_idx:
        missing.append(f"{IMAGE_PREFIX}0")
    if len(set(columns)) != len(columns):
        unknown += sorted({c for c in columns if columns.count(c) > 1})
    if missing or unknown:
        parts = []
        if missing:
            parts.append(f"missing columns: {', '.join(missing)}")
        if unknown:
            parts.append(f"unknown columns: {', '.join(unknown)}")
        raise SchemaError("; ".join(parts), offenders=missing + unknown)
    return len(image_idx)


def _number(cell: str, row: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"row {row}, column {column!r}: expected a number, got {cell!r}", row, column
        ) from None


def load_cohort_csv(path) -> list[Subject]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        image_dim = _check_header(columns)
        subjects = []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ParseError(f"row {rowno}: expected {len(columns)} cells, got {len(row)}", rowno)
            cells = dict(zip(columns, row))
            values = {}
            for key in RISK_KEYS:
                cell = cells[key]
                spec = FIELD_BY_KEY[key]
                if cell == "":
                    values[key] = MISSING
                elif spec.numeric:
                    values[key] = _number(cell, rowno, key)
                else:
                    if cell not in spec.categories:
                        raise ParseError(f"row {rowno}, column {key!r}: unknown category {cell!r}", rowno, key)
                    values[key] = cell
            morph = [_number(cells[c], rowno, c) for c in MORPHOMETRY_NAMES]
            image = [_number(cells[f"{IMAGE_PREFIX}{k}"], rowno, f"{IMAGE_PREFIX}{k}") for k in range(image_dim)]
            label = cells[LABEL]
            if label not in (CASE, CONTROL):
                raise ParseError(f"row {rowno}, column {LABEL!r}: expected case/control, got {label!r}", rowno, LABEL)
            onset = None if cells[ONSET] == "" else _number(cells[ONSET], rowno, ONSET)
            try:
                subjects.append(Subject(cells[ID], RiskFactorProfile(values), morph, image, label, onset))
            except ValueError as exc:
                raise ParseError(f"row {rowno}: {exc}", rowno) from exc
    return subjects
