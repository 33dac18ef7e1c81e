"""Stage-1 alignment training."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .. import gacl
from ..errors import ConfigError, TrainingDiverged
from ..narrative import embed_batch, render_cohort
from .losses import loss_and_grads
from .model import AlignmentModel
from .optim import AdamW

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "pos_fraction", "grad_norm")


@dataclass
class TrainConfig:
    learning_rate: float = 2.42e-4
    eps: float = 8.61e-7
    weight_decay: float = 0.0232
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    loss: str = "gacl"
    combiner: str = "or"
    tau_F: float = 0.9480
    tau_T: float = 0.9808
    image_similarity_source: str = "morphometry"
    latent_tau: Optional[float] = None
    latent_quantile: float = 0.75
    temperature: float = 0.07
    beta: float = -0.6319
    beta_trainable: bool = False
    projection_dim: int = 64
    text_dim: int = 256
    hash_seed: int = 0
    morph_norm: str = "batch"
    raw_dot_product: bool = False
    dev_fraction: float = 0.85
    center_init: bool = True

    def validate(self) -> None:
        positive = ("eps", "batch_size", "temperature", "projection_dim", "text_dim")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.epochs < 0:
            raise ConfigError("learning_rate, weight_decay and epochs must be nonnegative")
        choices = {
            "loss": ("gacl", "infonce"),
            "combiner": ("or", "and"),
            "image_similarity_source": ("morphometry", "latent"),
            "morph_norm": ("batch", "global"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not 0 <= self.latent_quantile <= 1:
            raise ConfigError("latent_quantile must lie in [0, 1]")
        if not 0 < self.dev_fraction <= 1:
            raise ConfigError("dev_fraction must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlignData:
    """Image inputs, text features and raw morphometry for one subject set."""

    X_img: np.ndarray
    T: np.ndarray
    F: np.ndarray
    ids: tuple = ()

    @classmethod
    def from_subjects(cls, subjects, text_dim=256, hash_seed=0) -> "AlignData":
        if not subjects:
            return cls(np.zeros((0, 0)), np.zeros((0, text_dim)), np.zeros((0, 0)))
        return cls(
            np.vstack([s.image_proxy for s in subjects]),
            embed_batch(render_cohort(subjects), text_dim, hash_seed),
            np.vstack([s.morphometry for s in subjects]),
            tuple(s.id for s in subjects),
        )

    def __len__(self):
        return self.X_img.shape[0]

    def take(self, idx) -> "AlignData":
        return AlignData(self.X_img[idx], self.T[idx], self.F[idx], tuple(self.ids[i] for i in idx) if self.ids else ())


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.rows:
            writer.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()


def dev_subset(n: int, fraction: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 85])
    k = max(3, int(round(fraction * n)))
    return np.sort(rng.permutation(n)[: min(k, n)])


def dev_similarities(data: AlignData, model: Optional[AlignmentModel] = None, fraction=0.85, seed=0):
    """Similarity matrices on the development slice of the alignment data.

    Returns morphometry and text similarities, plus image-latent similarity
    when a model is given.
    """
    idx = dev_subset(len(data), fraction, seed)
    sub = data.take(idx)
    out = {
        "morphometry": gacl.similarity(gacl.z_normalize(sub.F)),
        "text": gacl.similarity(sub.T),
    }
    if model is not None:
        U, _ = model.image_head.forward(sub.X_img)
        out["latent"] = gacl.similarity(U)
    return out


def _batches(n, batch_size, order):
    out = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            out.append(idx)
    return out


class _Labeler:
    def __init__(self, config: TrainConfig, F_global_stats, latent_tau):
        self.config = config
        self.stats = F_global_stats
        self.latent_tau = latent_tau

    def __call__(self, batch: AlignData, U: Optional[np.ndarray]):
        c = self.config
        if c.image_similarity_source == "latent":
            S_F = gacl.similarity(U)
            tau_F = self.latent_tau
        else:
            if c.morph_norm == "global":
                mean, std = self.stats
                Fz = (batch.F - mean) / std
            else:
                Fz = gacl.z_normalize(batch.F)
            S_F = gacl.similarity(Fz, row_normalize_rows=not c.raw_dot_product)
            tau_F = c.tau_F
        S_T = gacl.similarity(batch.T)
        return gacl.group_labels(gacl.threshold_mask(S_F, tau_F), gacl.threshold_mask(S_T, c.tau_T), c.combiner)


def _batch_loss(model, batch, config, labeler, want_grads):
    if config.loss == "gacl":
        U = model.image_head.forward(batch.X_img)[0] if config.image_similarity_source == "latent" else None
        L = labeler(batch, U)
    else:
        L = np.eye(len(batch)) * 2 - 1
    value, grads, _ = loss_and_grads(model, batch.X_img, batch.T, L, config.loss, config.beta_trainable)
    return value, (grads if want_grads else None), gacl.positive_fraction(L)


def evaluate_loss(model, data: AlignData, config: TrainConfig, labeler) -> float:
    """Mean batch loss over ``data`` in its stored order."""
    if len(data) < 2:
        return math.nan
    losses, weights = [], []
    for idx in _batches(len(data), config.batch_size, np.arange(len(data))):
        value, _, _ = _batch_loss(model, data.take(idx), config, labeler, False)
        losses.append(value)
        weights.append(len(idx))
    return float(np.average(losses, weights=weights))


def train(train_data: AlignData, val_data: Optional[AlignData], config: TrainConfig, model=None):
    """Fit both projection heads; returns ``(model, TrainLog)``.

    Deterministic given ``config.seed``. Raises ``TrainingDiverged`` (carrying
    the last finite model) if the loss stops being finite.
    """
    config.validate()
    if len(train_data) == 0:
        raise ConfigError("alignment training set is empty")
    if config.batch_size > len(train_data):
        raise ConfigError(
            f"batch_size {config.batch_size} exceeds training set size {len(train_data)}"
        )
    if model is None:
        model = AlignmentModel.init(
            train_data.X_img.shape[1],
            train_data.T.shape[1],
            config.projection_dim,
            seed=config.seed,
            temperature=config.temperature,
            beta=config.beta,
            config=config.to_dict(),
        )
        if config.center_init:
            # bias cancels the training mean so embeddings start spread out
            model.image_head.b[:] = -model.image_head.W @ train_data.X_img.mean(axis=0)
            model.text_head.b[:] = -model.text_head.W @ train_data.T.mean(axis=0)
    rng = np.random.default_rng([config.seed, 2])
    log = TrainLog()

    latent_tau = config.latent_tau
    if config.image_similarity_source == "latent" and latent_tau is None:
        S = dev_similarities(train_data, model, config.dev_fraction, config.seed)["latent"]
        latent_tau = gacl.quantile_thresholds(S, config.latent_quantile)[0]
    log.thresholds = {"tau_F": latent_tau if config.image_similarity_source == "latent" else config.tau_F,
                      "tau_T": config.tau_T}
    stats = (train_data.F.mean(axis=0), train_data.F.std(axis=0, ddof=1))
    labeler = _Labeler(config, stats, latent_tau)

    params = model.params()
    beta_arr = np.array(float(model.beta))
    if config.beta_trainable:
        params["beta"] = beta_arr
    opt = AdamW(config.learning_rate, eps=config.eps, weight_decay=config.weight_decay)

    def record(epoch, pos, gnorm):
        log.append(
            epoch=epoch,
            train_loss=evaluate_loss(model, train_data, config, labeler),
            val_loss=evaluate_loss(model, val_data, config, labeler) if val_data is not None else math.nan,
            pos_fraction=pos,
            grad_norm=gnorm,
        )

    record(0, math.nan, math.nan)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_data))
        pos, norms = [], []
        for idx in _batches(len(train_data), config.batch_size, order):
            good = model.copy()
            value, grads, frac = _batch_loss(model, train_data.take(idx), config, labeler, True)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", model=good, log=log)
            opt.step(params, grads)
            if config.beta_trainable:
                model.beta = float(beta_arr)
            pos.append(frac)
            norms.append(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        record(epoch, float(np.mean(pos)), float(np.mean(norms)))
        if not np.isfinite(log.rows[-1]["train_loss"]):
            raise TrainingDiverged(f"non-finite loss after epoch {epoch}", model=good, log=log)
    return model, log


def train_from_splits(subjects, splits, config: TrainConfig):
    """Convenience wrapper: build alignment data from cohort splits and train."""
    from ..cohort import select

    tr = AlignData.from_subjects(select(subjects, splits.align_train), config.text_dim, config.hash_seed)
    va = AlignData.from_subjects(select(subjects, splits.align_val), config.text_dim, config.hash_seed)
    return train(tr, va if len(va) >= 2 else None, config)
