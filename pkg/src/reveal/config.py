"""Layered experiment configuration: defaults < file < environment < flags."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigError
from .experiments import ExperimentConfig

ENV_PREFIX = "REVEAL_"
SECTIONS = ("cohort", "train", "split", "svm", "experiment")


def _merge(base: dict, over: Mapping) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for section, values in over.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, Mapping):
            raise ConfigError(f"config section {section!r} must be a mapping")
        out.setdefault(section, {}).update(values)
    return out


def read_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def from_env(env: Mapping[str, str]) -> dict:
    """``REVEAL_<SECTION>__<KEY>=value``; values parse as JSON, else as strings."""
    out: dict = {}
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].split("__", 1)
        section = section.lower()
        key = key.lower()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.setdefault(section, {})[key] = value
    return out


def load_config(path=None, env: Optional[Mapping[str, str]] = None, overrides: Optional[Mapping] = None) -> ExperimentConfig:
    layers = {s: {} for s in SECTIONS}
    if path is not None:
        layers = _merge(layers, read_file(path))
    layers = _merge(layers, from_env(os.environ if env is None else env))
    if overrides:
        layers = _merge(layers, overrides)
    try:
        return ExperimentConfig.from_dict({k: v for k, v in layers.items() if v})
    except TypeError as err:
        raise ConfigError(str(err)) from err
