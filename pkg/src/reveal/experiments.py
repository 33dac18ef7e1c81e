"""Seed-repeated evaluation runs and the ablation battery.

Every experiment is a list of *arms* (one table row each) evaluated over
``n_seeds`` repeats. A repeat reuses the task cohort, draws a fresh split with
the seed, trains the alignment heads once per distinct training setup, and
fits a cross-validated SVM per feature variant.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from . import gacl
from .align.train import AlignData, TrainConfig, dev_similarities, train
from .cohort import CohortConfig, generate_cohort, resplit_eval_pool, select, split_cohort
from .errors import ConfigError
from .impute import Imputer
from .narrative import render_cohort
from .downstream.cv import cross_validate
from .downstream.features import VARIANTS, build_features, fit_table_scaler
from .downstream.metrics import hedges_g, metrics, welch_t

TASKS = ("ad", "dementia")
KINDS = ("main", "ablate_gacl", "ablate_combiner", "ablate_similarity_source", "ablate_components", "threshold_sweep")
METRICS = ("auroc", "balanced_accuracy", "f1", "mcc")
METRIC_TITLES = {"auroc": "AUROC", "balanced_accuracy": "Balanced Accuracy", "f1": "F1-Score", "mcc": "MCC"}
TASK_TITLES = {"ad": "AD", "dementia": "Dementia"}

# task cohorts are independent streams: same generator, offset seed
_TASK_SEED_OFFSET = {"ad": 0, "dementia": 100_003}


@dataclass(frozen=True)
class SplitConfig:
    align_train: float = 0.45
    align_val: float = 0.1
    prevalence: float = 0.12
    test_fraction: float = 0.2


@dataclass(frozen=True)
class SvmConfig:
    C_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    gamma_scales: tuple = (0.1, 1.0, 10.0)
    folds: int = 5
    tol: float = 1e-3


def _section(cls, data, name):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown {name} config keys: {sorted(extra)}")
    data = dict(data)
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(v)
    return cls(**data)


@dataclass(frozen=True)
class ExperimentConfig:
    cohort: CohortConfig = field(default_factory=CohortConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    n_seeds: int = 10
    seed: int = 0
    # "quantile": tau_F/tau_T at these levels of the dev-set similarity
    # distribution; "fixed": use train.tau_F / train.tau_T as given
    thresholds: str = "quantile"
    tau_F_level: float = 0.75
    tau_T_level: float = 0.75
    sweep_levels: tuple = (0.25, 0.5, 0.75)
    variant: str = "joint"

    def validate(self) -> None:
        self.cohort.validate()
        self.train.validate()
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.thresholds not in ("quantile", "fixed"):
            raise ConfigError("thresholds must be 'quantile' or 'fixed'")
        for lv in (self.tau_F_level, self.tau_T_level, *self.sweep_levels):
            if not 0 <= lv <= 1:
                raise ConfigError(f"quantile level {lv} outside [0, 1]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.svm.folds < 2 or not self.svm.C_grid or not self.svm.gamma_scales:
            raise ConfigError("svm needs >= 2 folds and non-empty grids")

    def to_dict(self) -> dict:
        out = {
            "cohort": self.cohort.to_dict(),
            "train": self.train.to_dict(),
            "split": asdict(self.split),
            "svm": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.svm).items()},
        }
        exp = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in out}
        exp["sweep_levels"] = list(exp["sweep_levels"])
        out["experiment"] = exp
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        extra = set(data) - {"cohort", "train", "split", "svm", "experiment"}
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        kw = {}
        if "cohort" in data:
            kw["cohort"] = CohortConfig.from_dict(data["cohort"])
        if "train" in data:
            kw["train"] = TrainConfig.from_dict(data["train"])
        if "split" in data:
            kw["split"] = _section(SplitConfig, data["split"], "split")
        if "svm" in data:
            kw["svm"] = _section(SvmConfig, data["svm"], "svm")
        exp = dict(data.get("experiment", {}))
        known = {f.name for f in fields(cls)} - {"cohort", "train", "split", "svm"}
        if set(exp) - known:
            raise ConfigError(f"unknown experiment config keys: {sorted(set(exp) - known)}")
        if "sweep_levels" in exp:
            exp["sweep_levels"] = tuple(exp["sweep_levels"])
        cfg = cls(**kw, **exp)
        cfg.validate()
        return cfg

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.n_seeds)]


def task_cohort_config(cfg: ExperimentConfig, task: str) -> CohortConfig:
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    return replace(cfg.cohort, seed=cfg.cohort.seed + _TASK_SEED_OFFSET[task])


@lru_cache(maxsize=4)
def _cohort_cached(blob: str):
    return generate_cohort(CohortConfig.from_dict(json.loads(blob)))


def task_cohort(cfg: ExperimentConfig, task: str):
    return _cohort_cached(json.dumps(task_cohort_config(cfg, task).to_dict(), sort_keys=True))


# arms -----------------------------------------------------------------------


@dataclass(frozen=True)
class Arm:
    """One table row: a training setup plus a feature variant."""

    label: str
    variant: str = "joint"
    loss: str = "gacl"
    combiner: str = "or"
    source: str = "morphometry"
    tau_F_level: Optional[float] = None
    tau_T_level: Optional[float] = None

    def train_key(self):
        if self.variant == "tabular":
            return None
        if self.loss == "infonce":
            return ("infonce",)
        return (self.loss, self.combiner, self.source, self.tau_F_level, self.tau_T_level)


def base_arm(cfg: ExperimentConfig, label: str = "", **over) -> Arm:
    t = cfg.train
    arm = Arm(label, cfg.variant, t.loss, t.combiner, t.image_similarity_source, cfg.tau_F_level, cfg.tau_T_level)
    return replace(arm, **over)


def arms_for(cfg: ExperimentConfig, kind: str) -> list[Arm]:
    gacl_arm = base_arm(cfg, "Ours (with GACL)", loss="gacl")
    no_gacl = base_arm(cfg, "Ours (no GACL)", loss="infonce")
    if kind == "main":
        return [Arm("Baseline SVM", variant="tabular"), no_gacl, gacl_arm]
    if kind == "ablate_gacl":
        return [no_gacl, gacl_arm]
    if kind == "ablate_combiner":
        return [base_arm(cfg, "AND", loss="gacl", combiner="and"), base_arm(cfg, "OR", loss="gacl", combiner="or")]
    if kind == "ablate_similarity_source":
        return [
            base_arm(cfg, "Latent Feature", loss="gacl", source="latent"),
            base_arm(cfg, "Morphometric Feature", loss="gacl", source="morphometry"),
        ]
    if kind == "ablate_components":
        return [
            base_arm(cfg, "Image-only", variant="image_only"),
            base_arm(cfg, "Image+Table", variant="image_plus_table"),
            base_arm(cfg, "Text-only", variant="text_only"),
            base_arm(cfg, "Image+Text", variant="joint"),
        ]
    if kind == "threshold_sweep":
        out = []
        for which, grid in sweep_grids(cfg).items():
            for lv in grid:
                over = {"tau_F_level": lv} if which == "tau_F" else {"tau_T_level": lv}
                out.append(base_arm(cfg, f"{which}@{lv:g}", loss="gacl", **over))
        return out
    raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")


def sweep_grids(cfg: ExperimentConfig) -> dict:
    """Quantile levels tried for each threshold; the optimum is always included."""
    return {
        "tau_F": sorted(set(cfg.sweep_levels) | {cfg.tau_F_level}),
        "tau_T": sorted(set(cfg.sweep_levels) | {cfg.tau_T_level}),
    }


# one seed -------------------------------------------------------------------


def _train_config(cfg: ExperimentConfig, arm: Arm, seed: int, tr: AlignData) -> TrainConfig:
    tc = replace(cfg.train, seed=seed, loss=arm.loss, combiner=arm.combiner, image_similarity_source=arm.source)
    if cfg.thresholds == "quantile" and arm.loss == "gacl":
        S = dev_similarities(tr, None, tc.dev_fraction, seed)
        tau_T = gacl.quantile_thresholds(S["text"], arm.tau_T_level)[0]
        if arm.source == "latent":
            tc = replace(tc, tau_T=tau_T, latent_tau=None, latent_quantile=arm.tau_F_level)
        else:
            tau_F = gacl.quantile_thresholds(S["morphometry"], arm.tau_F_level)[0]
            tc = replace(tc, tau_F=tau_F, tau_T=tau_T)
    return tc


class _SvmData:
    """Imputed SVM train/test subjects plus narratives of their raw profiles."""

    def __init__(self, subjects, sp):
        raw_tr, raw_te = select(subjects, sp.svm_train), select(subjects, sp.svm_test)
        # imputation statistics come from the alignment-training subjects only
        imputer = Imputer.fit(select(subjects, sp.align_train))
        self.imp_tr, self.imp_te = imputer.transform(raw_tr), imputer.transform(raw_te)
        self.rep_tr, self.rep_te = render_cohort(raw_tr), render_cohort(raw_te)
        self.y_tr = np.array([s.is_case for s in raw_tr], dtype=int)
        self.y_te = np.array([s.is_case for s in raw_te], dtype=int)
        self.test_ids = [s.id for s in raw_te]


def evaluate_variant(cfg: ExperimentConfig, model, variant: str, data: _SvmData, seed: int) -> dict:
    """Cross-validated SVM on one feature variant, scored once on the test split."""
    scaler = fit_table_scaler(data.imp_tr, variant) if variant in ("tabular", "image_plus_table") else None
    X_tr = build_features(model, data.imp_tr, variant, scaler, reports=data.rep_tr)
    X_te = build_features(model, data.imp_te, variant, scaler, reports=data.rep_te)
    gammas = tuple(g / X_tr.shape[1] for g in cfg.svm.gamma_scales)
    cv = cross_validate(X_tr, data.y_tr, cfg.svm.C_grid, gammas, cfg.svm.folds, seed, "balanced", cfg.svm.tol)
    scores = cv.model.decision_function(X_te)
    probs = cv.model.predict_proba(X_te)
    return {
        "variant": variant,
        "C": cv.C,
        "gamma": cv.gamma,
        "metrics": metrics(scores, probs, data.y_te),
        "ids": list(data.test_ids),
        "labels": data.y_te.tolist(),
        "scores": scores.tolist(),
        "probs": probs.tolist(),
    }


def run_seed(cfg: ExperimentConfig, task: str, seed: int, arms, subjects=None) -> list[dict]:
    """Evaluate every arm on one seed; models are shared across variants."""
    if subjects is None:
        subjects = task_cohort(cfg, task)
    sp = split_cohort(subjects, seed=seed, **asdict(cfg.split))
    t = cfg.train
    tr = AlignData.from_subjects(select(subjects, sp.align_train), t.text_dim, t.hash_seed)
    va = AlignData.from_subjects(select(subjects, sp.align_val), t.text_dim, t.hash_seed)
    data = _SvmData(subjects, sp)

    models, fitted = {}, {}
    out = []
    for arm in arms:
        key = arm.train_key()
        if (key, arm.variant) in fitted:
            out.append(dict(fitted[(key, arm.variant)], arm=arm.label))
            continue
        if key is not None and key not in models:
            tc = _train_config(cfg, arm, seed, tr)
            model, log = train(tr, va if len(va) >= 2 else None, tc)
            models[key] = (model, {
                "tau_F": log.thresholds["tau_F"],
                "tau_T": log.thresholds["tau_T"],
                "final_train_loss": log.rows[-1]["train_loss"],
                "final_val_loss": log.rows[-1]["val_loss"],
            })
        model, info = models[key] if key is not None else (None, {})
        cell = {"task": task, "seed": seed, "arm": arm.label, **info}
        cell.update(evaluate_variant(cfg, model, arm.variant, data, seed))
        out.append(cell)
        fitted[(key, arm.variant)] = cell
    return out


def _run_seed_star(args):
    return run_seed(*args)


def evaluate_checkpoint(cfg: ExperimentConfig, model, subjects, splits, variant=None, task="ad",
                        label: str = "checkpoint") -> "EvalReport":
    """Score a trained model over seed-repeated SVM splits of its evaluation pool.

    The alignment sets stay as trained; each seed re-draws only the
    stratified SVM train/test holdout inside the evaluation pool.
    """
    cfg.validate()
    variant = variant or cfg.variant
    cells = []
    for seed in cfg.seeds:
        sp = resplit_eval_pool(subjects, splits, cfg.split.test_fraction, seed)
        cell = {"task": task, "seed": seed, "arm": label}
        cell.update(evaluate_variant(cfg, model, variant, _SvmData(subjects, sp), seed))
        cells.append(cell)
    return EvalReport("evaluate", (task,), cfg.seeds, [summarize(cells, task, label)], [], cells)


def worker_count(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("REVEAL_THREADS", "1"))
    except ValueError:
        raise ConfigError("REVEAL_THREADS must be an integer")
    return max(1, min(cap, n_jobs))


def run_cells(cfg: ExperimentConfig, tasks, arms, subjects=None) -> list[dict]:
    """All (task, seed) jobs; output order is fixed regardless of the pool size.

    ``subjects`` replaces the generated task cohort (single task only).
    """
    if subjects is not None and len(tasks) != 1:
        raise ConfigError("a supplied cohort runs exactly one task")
    jobs = [(cfg, task, seed, tuple(arms), subjects) for task in tasks for seed in cfg.seeds]
    workers = worker_count(len(jobs))
    if workers == 1:
        results = [_run_seed_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_seed_star, jobs))
    return [cell for group in results for cell in group]


# aggregation ----------------------------------------------------------------


def fmt_mean_std(values, digits: int = 3) -> str:
    values = np.asarray(values, float)
    if len(values) == 1:
        return f"{values[0]:.{digits}f}"
    return f"{values.mean():.{digits}f}±{values.std(ddof=1):.{digits}f}"


def summarize(cells, task, arm_label) -> dict:
    picked = [c for c in cells if c["task"] == task and c["arm"] == arm_label]
    row = {"task": task, "model": arm_label, "n_seeds": len(picked)}
    for m in METRICS:
        vals = np.array([c["metrics"][m] for c in picked])
        row[f"{m}_mean"] = float(vals.mean())
        row[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else None
    return row


def compare(cells, task, a_label, b_label) -> dict:
    """Welch p and Hedges g of arm ``a`` against reference arm ``b``."""
    row = {"task": task, "model": a_label, "reference": b_label}
    for m in METRICS:
        a = [c["metrics"][m] for c in cells if c["task"] == task and c["arm"] == a_label]
        b = [c["metrics"][m] for c in cells if c["task"] == task and c["arm"] == b_label]
        try:
            row[f"{m}_p"] = welch_t(a, b)[1]
            row[f"{m}_g"] = hedges_g(a, b)
        except ValueError:
            row[f"{m}_p"] = row[f"{m}_g"] = None
    return row


def pct_difference(value: float, optimum: float) -> float:
    if value == optimum:
        return 0.0
    if optimum == 0:
        return math.nan
    return 100.0 * (value - optimum) / abs(optimum)


@dataclass
class EvalReport:
    kind: str
    tasks: tuple
    seeds: list
    rows: list
    stats: list = field(default_factory=list)
    cells: list = field(default_factory=list)

    def _metric_cells(self, row):
        out = []
        for m in METRICS:
            if self.kind == "threshold_sweep":
                out.append(f"{row[m + '_pct']:+.2f}%")
            else:
                vals = [c["metrics"][m] for c in self.cells if c["task"] == row["task"] and c["arm"] == row["model"]]
                out.append(fmt_mean_std(vals))
        return out

    def to_text(self) -> str:
        """Aligned table, one block per task."""
        if self.kind == "threshold_sweep":
            head = ["Threshold", "Level", "Value"] + [f"{METRIC_TITLES[m]} (% diff)" for m in METRICS]
        else:
            head = ["Model"] + [METRIC_TITLES[m] for m in METRICS]
        lines = []
        for task in self.tasks:
            body = []
            for row in (r for r in self.rows if r["task"] == task):
                if self.kind == "threshold_sweep":
                    body.append([row["varied"], f"{row['level']:g}", f"{row['tau_mean']:.4f}"] + self._metric_cells(row))
                else:
                    body.append([row["model"]] + self._metric_cells(row))
            widths = [max(len(r[k]) for r in [head] + body) for k in range(len(head))]
            lines.append(TASK_TITLES[task])
            for r in [head] + body:
                lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if self.stats:
                lines.append("")
                lines.append(f"Welch p (Hedges g) vs {self.stats[0]['reference']}")
                srows = [[s["model"]] + [
                    "n/a" if s[f"{m}_p"] is None else f"{s[f'{m}_p']:.3g} ({s[f'{m}_g']:.2f})" for m in METRICS
                ] for s in self.stats if s["task"] == task]
                shead = ["Model"] + [METRIC_TITLES[m] for m in METRICS]
                widths = [max(len(r[k]) for r in [shead] + srows) for k in range(len(shead))]
                for r in [shead] + srows:
                    lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            lines.append("")
        return "\n".join(lines)

    def rows_csv(self) -> str:
        return _csv(self.rows)

    def stats_csv(self) -> str:
        return _csv(self.stats)

    def per_seed_csv(self) -> str:
        out = []
        for c in self.cells:
            row = {k: c[k] for k in ("task", "seed", "arm", "variant", "C", "gamma")}
            row.update({k: c.get(k, "") for k in ("tau_F", "tau_T", "final_train_loss", "final_val_loss")})
            row.update(c["metrics"])
            out.append(row)
        return _csv(out)

    def predictions_csv(self) -> str:
        out = []
        for c in self.cells:
            for sid, lab, sc, pr in zip(c["ids"], c["labels"], c["scores"], c["probs"]):
                out.append({"task": c["task"], "seed": c["seed"], "arm": c["arm"], "id": sid,
                            "label": lab, "score": sc, "probability": pr})
        return _csv(out)

    def to_json(self) -> str:
        per_seed = [{k: v for k, v in c.items() if k not in ("ids", "labels", "scores", "probs")} for c in self.cells]
        blob = {"kind": self.kind, "tasks": list(self.tasks), "seeds": self.seeds,
                "rows": self.rows, "stats": self.stats, "per_seed": per_seed}
        return json.dumps(_clean(blob), indent=2, sort_keys=True) + "\n"

    def mean(self, task, label, metric="auroc") -> float:
        vals = [c["metrics"][metric] for c in self.cells if c["task"] == task and c["arm"] == label]
        return float(np.mean(vals))


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in cols})
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, kind: str, tasks=("ad",), cells=None, subjects=None) -> EvalReport:
    """Run (or re-aggregate pre-computed ``cells`` for) one experiment kind."""
    cfg.validate()
    tasks = tuple(tasks)
    arms = arms_for(cfg, kind)
    if cells is None:
        cells = run_cells(cfg, tasks, arms, subjects)
    labels = [a.label for a in arms]
    if kind != "threshold_sweep":
        rows = [summarize(cells, task, lab) for task in tasks for lab in labels]
        stats = []
        if kind in ("main", "ablate_gacl"):
            ref = "Ours (with GACL)"
            stats = [compare(cells, task, lab, ref) for task in tasks for lab in labels if lab != ref]
        return EvalReport(kind, tasks, cfg.seeds, rows, stats, cells)

    rows = []
    grids = sweep_grids(cfg)
    for task in tasks:
        opt_label = f"tau_F@{cfg.tau_F_level:g}"
        opt = summarize(cells, task, opt_label)
        for which, grid in grids.items():
            for lv in grid:
                label = f"{which}@{lv:g}"
                s = summarize(cells, task, label)
                picked = [c for c in cells if c["task"] == task and c["arm"] == label]
                other = "tau_T" if which == "tau_F" else "tau_F"
                row = {
                    "task": task, "model": label, "varied": which, "level": lv,
                    "tau_mean": float(np.mean([c[which] for c in picked])),
                    f"{other}_level": cfg.tau_T_level if which == "tau_F" else cfg.tau_F_level,
                    "optimum": lv == (cfg.tau_F_level if which == "tau_F" else cfg.tau_T_level),
                }
                for m in METRICS:
                    row[f"{m}_mean"] = s[f"{m}_mean"]
                    row[f"{m}_pct"] = pct_difference(s[f"{m}_mean"], opt[f"{m}_mean"])
                rows.append(row)
    return EvalReport(kind, tasks, cfg.seeds, rows, [], cells)
