"""Seeded random search over alignment hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .. import gacl
from ..errors import ConfigError
from .train import AlignData, TrainConfig, dev_similarities, train


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if self.hi < self.lo:
            raise ConfigError(f"empty range [{self.lo}, {self.hi}]")
        if self.log and self.lo <= 0:
            raise ConfigError("log-uniform range needs a positive lower bound")

    def sample(self, rng: np.random.Generator) -> float:
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))
        return float(rng.uniform(self.lo, self.hi))


# published search ranges; thresholds are added from dev-set quantiles
DEFAULT_SPACE = {
    "learning_rate": Uniform(1e-6, 5e-4, log=True),
    "eps": Uniform(1e-9, 1e-6, log=True),
    "weight_decay": Uniform(1e-6, 1e-1, log=True),
    "beta": Uniform(-5.0, 0.0),
}


def random_search(space: dict, objective: Callable[[dict], float], n_trials: int = 50, seed: int = 0,
                  maximize: bool = False):
    """Evaluate ``n_trials`` random points; return ``(best_params, trials)``.

    Each trial row holds the sampled parameters plus ``trial`` and ``score``.
    Ties keep the earliest trial.
    """
    if not space:
        raise ConfigError("search space is empty")
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    names = sorted(space)
    trials = []
    best, best_score = None, None
    for t in range(n_trials):
        params = {k: space[k].sample(rng) for k in names}
        score = float(objective(dict(params)))
        trials.append({"trial": t, **params, "score": score})
        if math.isnan(score):
            continue
        better = best_score is None or (score > best_score if maximize else score < best_score)
        if better:
            best, best_score = params, score
    if best is None:
        raise ConfigError("every trial returned NaN")
    return best, trials


def threshold_space(data: AlignData, fraction: float = 0.85, seed: int = 0) -> dict:
    """tau_F / tau_T ranges from the (Q3, max) of dev-set similarities."""
    S = dev_similarities(data, None, fraction, seed)
    return {
        "tau_F": Uniform(*gacl.quantile_thresholds(S["morphometry"])),
        "tau_T": Uniform(*gacl.quantile_thresholds(S["text"])),
    }


def tune(
    train_data: AlignData,
    val_data: AlignData,
    base: TrainConfig,
    n_trials: int = 50,
    seed: int = 0,
    space: Optional[dict] = None,
    objective: Optional[Callable[[TrainConfig], float]] = None,
    maximize: bool = False,
):
    """Random search for a TrainConfig; returns ``(best_config, trials)``.

    The default objective is the final validation loss of a training run.
    Pass ``objective`` (config -> score) and ``maximize=True`` to tune on a
    downstream score instead.
    """
    if space is None:
        space = dict(DEFAULT_SPACE)
        if base.loss == "gacl":
            space.update(threshold_space(train_data, base.dev_fraction, base.seed))
    unknown = set(space) - set(base.to_dict())
    if unknown:
        raise ConfigError(f"search space names unknown config fields: {sorted(unknown)}")

    def run(params):
        cfg = replace(base, **params)
        if objective is not None:
            return objective(cfg)
        _, log = train(train_data, val_data, cfg)
        return log.rows[-1]["val_loss"]

    best, trials = random_search(space, run, n_trials, seed, maximize)
    return replace(base, **best), trials
