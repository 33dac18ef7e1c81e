"""Figures for experiment reports (Agg backend, deterministic PNG bytes)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import METRIC_TITLES, METRICS, TASK_TITLES, EvalReport  # noqa: E402

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_sweep(report: EvalReport, path) -> None:
    """Percent difference against the optimum, one panel per threshold."""
    tasks = list(report.tasks)
    fig, axes = plt.subplots(len(tasks), 2, figsize=(9, 3.2 * len(tasks)), squeeze=False, sharey="row")
    for i, task in enumerate(tasks):
        for j, which in enumerate(("tau_F", "tau_T")):
            ax = axes[i, j]
            rows = [r for r in report.rows if r["task"] == task and r["varied"] == which]
            x = [r["level"] for r in rows]
            for m in METRICS:
                ax.plot(x, [r[f"{m}_pct"] for r in rows], marker="o", label=METRIC_TITLES[m])
            ax.axhline(0.0, color="0.6", lw=0.8)
            opt = [r["level"] for r in rows if r["optimum"]]
            if opt:
                ax.axvline(opt[0], color="0.6", lw=0.8, ls="--")
            name = "morphometry" if which == "tau_F" else "text"
            ax.set_title(f"{TASK_TITLES[task]}: {name} threshold varied")
            ax.set_xlabel("quantile level of dev-set similarity")
            if j == 0:
                ax.set_ylabel("% difference vs optimum")
    axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_metrics(report: EvalReport, path) -> None:
    """Grouped bars of mean metric per row, std as error bars."""
    tasks = list(report.tasks)
    fig, axes = plt.subplots(1, len(tasks), figsize=(6.5 * len(tasks), 3.8), squeeze=False)
    for ax, task in zip(axes[0], tasks):
        rows = [r for r in report.rows if r["task"] == task]
        width = 0.8 / max(len(rows), 1)
        base = np.arange(len(METRICS))
        for k, r in enumerate(rows):
            means = [r[f"{m}_mean"] for m in METRICS]
            errs = [r[f"{m}_std"] or 0.0 for m in METRICS]
            ax.bar(base + k * width, means, width, yerr=errs, capsize=2, label=r["model"])
        ax.set_xticks(base + width * (len(rows) - 1) / 2)
        ax.set_xticklabels([METRIC_TITLES[m] for m in METRICS])
        ax.set_ylim(min(0.0, min(r["mcc_mean"] for r in rows) - 0.05), 1.0)
        ax.set_title(TASK_TITLES[task])
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_report(report: EvalReport, path) -> None:
    if report.kind == "threshold_sweep":
        plot_sweep(report, path)
    else:
        plot_metrics(report, path)


def plot_train_log(log, path) -> None:
    epochs = log.column("epoch")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epochs, log.column("train_loss"), label="train")
    val = log.column("val_loss")
    if np.all(np.isfinite(val)):
        ax.plot(epochs, val, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
