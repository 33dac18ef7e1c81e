"""End-to-end acceptance checks at their stated tolerances.

Each test records a one-line verdict that conftest prints after the run.
"""

import csv
import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from reveal import gacl
from reveal.align import AlignmentModel, gacl_loss, infonce_loss, loss_and_grads
from reveal.cli import run
from reveal.cohort import CohortConfig, generate_cohort
from reveal.downstream.metrics import auroc, balanced_accuracy, f1_score, hedges_g, mcc, welch_t
from reveal.downstream.svm import train_svm
from reveal.experiments import Arm, ExperimentConfig, run_seed
from reveal.manifest import file_digest
from reveal.narrative import CANNABIS_FALLBACK, render_report, unfilled_placeholders
from reveal.schema import MISSING, RISK_KEYS


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, detail


# 1 ---------------------------------------------------------------------------


def _central(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        n, d_img, d_txt, P = (int(rng.integers(2, 9)), int(rng.integers(2, 17)),
                              int(rng.integers(2, 17)), int(rng.integers(2, 9)))
        model = AlignmentModel.init(d_img, d_txt, P, seed=seed, temperature=0.07, beta=-0.6319)
        Xi, Xt = rng.normal(size=(n, d_img)), rng.normal(size=(n, d_txt))
        L = np.where(rng.random((n, n)) < 0.4, 1.0, -1.0)
        np.fill_diagonal(L, 1.0)
        _, grads, _ = loss_and_grads(model, Xi, Xt, L, "gacl")
        for name, p in model.params().items():
            num = _central(lambda: loss_and_grads(model, Xi, Xt, L, "gacl")[0], p)
            err = np.abs(grads[name] - num) / np.maximum(1e-8, np.abs(grads[name]) + np.abs(num))
            worst = max(worst, float(err.max()))
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-4 and elapsed < 5.0, f"max rel err {worst:.2e} (<1e-4), {elapsed:.2f}s (<5s)")


# 2 ---------------------------------------------------------------------------


def _brute(F, T, tau_F, tau_T, combiner):
    n, k = len(F), len(F[0])
    cols = []
    for c in range(k):
        col = [F[r][c] for r in range(n)]
        mu = sum(col) / n
        sd = math.sqrt(sum((x - mu) ** 2 for x in col) / (n - 1))
        cols.append([(x - mu) / sd for x in col])

    def cos(a, b):
        return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            fi = [cols[c][i] for c in range(k)]
            fj = [cols[c][j] for c in range(k)]
            a = i == j or cos(fi, fj) > tau_F
            b = i == j or cos(T[i], T[j]) > tau_T
            out[i, j] = 1.0 if ((a or b) if combiner == "or" else (a and b)) else -1.0
    return out


def test_2_gacl_oracle_equivalence():
    mismatches = superset_fail = monotone_fail = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(3, 13))
        F = rng.normal(size=(n, 17))
        T = rng.normal(size=(n, 8))
        tF, tT = rng.uniform(-0.5, 0.8, 2)
        ours = {c: gacl.label_matrix(F, T, tF, tT, c) for c in ("or", "and")}
        for c in ("or", "and"):
            mismatches += not np.array_equal(ours[c], _brute(F.tolist(), T.tolist(), tF, tT, c))
        superset_fail += np.any((ours["and"] > 0) & (ours["or"] <= 0))
        for c in ("or", "and"):
            up_F = gacl.label_matrix(F, T, tF + 0.1, tT, c)
            up_T = gacl.label_matrix(F, T, tF, tT + 0.1, c)
            monotone_fail += np.any((up_F > 0) & (ours[c] <= 0)) or np.any((up_T > 0) & (ours[c] <= 0))
    ok = mismatches == superset_fail == monotone_fail == 0
    record(2, ok, f"100 batches: {mismatches} oracle mismatches, {superset_fail} OR/AND violations, "
                  f"{monotone_fail} threshold-monotonicity violations")


# 3 ---------------------------------------------------------------------------


def test_3_loss_fixtures():
    tau, beta = 0.07, -0.6319
    errs = [
        abs(gacl_loss(np.array([[tau * beta]]), np.array([[1.0]]), tau, beta) - math.log(2)),
        abs(gacl_loss(np.array([[tau * beta]]), np.array([[-1.0]]), tau, beta) - math.log(2)),
        abs(gacl_loss(np.array([[1.0]]), np.array([[1.0]]), 0.07, 0.0) - math.log1p(math.exp(-1 / 0.07))),
        abs(infonce_loss(np.eye(2), 1.0) - math.log1p(math.exp(-1.0))),
        abs(infonce_loss(np.full((5, 5), 0.3), 0.07) - math.log(5)),
        abs(infonce_loss(np.array([[0.4]]), 0.07) - 0.0),
    ]
    log_n = [abs(infonce_loss(np.full((n, n), 0.2), 0.07) - math.log(n)) for n in (2, 8, 128)]
    ok = max(errs) < 1e-9 and max(log_n) < 1e-12
    record(3, ok, f"fixture max err {max(errs):.1e} (<1e-9); log N max err {max(log_n):.1e} (<1e-12)")


# 4 and 5: one shared 10-seed run ------------------------------------------


@pytest.fixture(scope="module")
def planted_runs():
    cfg = ExperimentConfig()  # n=2400, rho=0.9, eval-pool prevalence 0.12, 10 seeds
    arms = [
        Arm("image_only", "image_only", tau_F_level=cfg.tau_F_level, tau_T_level=cfg.tau_T_level),
        Arm("text_only", "text_only", tau_F_level=cfg.tau_F_level, tau_T_level=cfg.tau_T_level),
        Arm("joint", "joint", tau_F_level=cfg.tau_F_level, tau_T_level=cfg.tau_T_level),
        Arm("infonce", "joint", loss="infonce"),
    ]
    cells, times = [], []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        cells += run_seed(cfg, "ad", seed, arms)
        times.append(time.perf_counter() - t0)
    mean = {a.label: float(np.mean([c["metrics"]["auroc"] for c in cells if c["arm"] == a.label])) for a in arms}
    return cfg, mean, times


def test_4_planted_signal_recovery(planted_runs):
    cfg, m, times = planted_runs
    assert cfg.cohort.n_subjects == 2400 and cfg.cohort.signal_strength == 0.9 and cfg.split.prevalence == 0.12
    ok = m["joint"] >= 0.75 and m["joint"] >= m["text_only"] >= m["image_only"] and max(times) < 60
    record(4, ok, f"AUROC joint {m['joint']:.4f} >= text {m['text_only']:.4f} >= image {m['image_only']:.4f}; "
                  f"joint >= 0.75; slowest seed {max(times):.1f}s (<60s)")


def test_5_gacl_not_worse_than_infonce(planted_runs):
    _, m, _ = planted_runs
    diff = m["joint"] - m["infonce"]
    record(5, diff >= -0.005, f"AUROC GACL {m['joint']:.4f} - InfoNCE {m['infonce']:.4f} = {diff:+.5f} (>= -0.005)")


# 6 ---------------------------------------------------------------------------


def test_6_metric_oracles():
    bad = 0
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 21))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        s = rng.integers(0, 5, n).astype(float)
        pos, neg = s[y == 1], s[y == 0]
        pairs = [(1.0 if a > b else 0.5 if a == b else 0.0) for a, b in itertools.product(pos, neg)]
        bad += abs(auroc(s, y) - sum(pairs) / len(pairs)) > 1e-12
    pred = np.array([1, 1, 0, 0, 1, 0, 0, 0, 1, 0], bool)
    lab = np.array([1, 0, 1, 0, 1, 0, 0, 0, 0, 0])
    tp, fp, fn, tn = 2, 2, 1, 5
    exact = (
        balanced_accuracy(pred, lab) == (tp / (tp + fn) + tn / (tn + fp)) / 2
        and f1_score(pred, lab) == 2 * tp / (2 * tp + fp + fn)
        and mcc(pred, lab) == (tp * tn - fp * fn) / math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    )
    z = rng.normal(size=10)
    z = (z - z.mean()) / z.std(ddof=1)
    g = hedges_g(1.0 + z, z)  # means 1 vs 0, both SD 1, n = 10 each
    t, p = welch_t(z, z)
    ok = bad == 0 and exact and abs(g - (1 - 3 / 71)) < 1e-3 and t == 0 and p == 1.0
    record(6, ok, f"AUROC pair-count mismatches {bad}/300; confusion fixtures exact={exact}; g={g:.4f} (0.958)")


# 7 ---------------------------------------------------------------------------


def _blobs(rng, n_pos, n_neg, sep):
    X = np.vstack([rng.normal(size=(n_pos, 2)) + sep / 2, rng.normal(size=(n_neg, 2)) - sep / 2])
    return X, np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]


def test_7_svm_sanity():
    rng = np.random.default_rng(1)
    X, y = _blobs(rng, 30, 60, 8.0)
    model = train_svm(X, y, C=10.0, gamma=0.5)
    Xt, yt = _blobs(rng, 30, 60, 8.0)
    a = auroc(model.decision_function(Xt), yt)
    gains = []
    for seed in range(10):
        r = np.random.default_rng(seed)
        X, y = _blobs(r, 12, 150, 1.5)
        Xt, yt = _blobs(r, 50, 50, 1.5)
        w = train_svm(X, y, C=1.0, gamma=0.5, class_weights="balanced")
        u = train_svm(X, y, C=1.0, gamma=0.5, class_weights=None)
        gains.append(np.mean(w.decision_function(Xt)[yt == 1] > 0) - np.mean(u.decision_function(Xt)[yt == 1] > 0))
    ok = a > 0.99 and model.kkt_residual < 1e-3 and np.mean(gains) > 0 and min(gains) >= 0
    record(7, ok, f"blob AUROC {a:.4f}, KKT {model.kkt_residual:.1e}; weighted minority recall gain "
                  f"mean {np.mean(gains):+.3f}, min {min(gains):+.3f} over 10 seeds")


# 8 ---------------------------------------------------------------------------


def test_8_template_fidelity():
    subs = generate_cohort(CohortConfig(n_subjects=300, prevalence=0.1, missing_rate=0.15, seed=8))
    field_miss = placeholder_hits = fallback_miss = n_missing_cannabis = 0
    for s in subs:
        r = render_report(s.profile, s.id)
        field_miss += len(set(RISK_KEYS) - set(r.filled))
        placeholder_hits += len(unfilled_placeholders(r.text))
        if s.profile["age of cannabis initiation"] is MISSING:
            n_missing_cannabis += 1
            fallback_miss += "No cannabis use was reported at that age" not in r.text
    ok = field_miss == placeholder_hits == fallback_miss == 0 and n_missing_cannabis > 0 and len(RISK_KEYS) == 48
    assert CANNABIS_FALLBACK == "No cannabis use was reported at that age"
    record(8, ok, f"300 reports: {field_miss} missing fields, {placeholder_hits} placeholders, "
                  f"fallback absent in {fallback_miss}/{n_missing_cannabis} cannabis-MISSING reports")


# 9 and 10: CLI harness ------------------------------------------------------

SMALL = {
    "cohort": {"n_subjects": 600, "prevalence": 0.05, "seed": 3},
    "train": {"epochs": 1, "batch_size": 64},
    "svm": {"C_grid": [1.0], "gamma_scales": [1.0], "folds": 3},
    "experiment": {"n_seeds": 2, "sweep_levels": [0.25, 0.5]},
}

COMMANDS = {
    "sweep": ["sweep-thresholds"],
    "similarity": ["ablate-similarity", "--task", "ad", "--task", "dementia"],
    "combiner": ["ablate-combiner", "--task", "ad", "--task", "dementia"],
}


@pytest.fixture(scope="module")
def harness(tmp_path_factory, monkeypatch_module):
    root = tmp_path_factory.mktemp("harness")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    codes = {}
    for name, argv in COMMANDS.items():
        for rep in ("a", "b"):
            codes[(name, rep)] = run(argv + ["--config", str(cfg), "--out", str(root / name / rep)])
    gen = ["gen-cohort", "--config", str(cfg)]
    for rep in ("a", "b"):
        codes[("gen", rep)] = run(gen + ["--out", str(root / "gen" / rep)])
        codes[("render", rep)] = run(["render-reports", "--cohort", str(root / "gen" / "a" / "cohort.csv"),
                                      "--out", str(root / "render" / rep)])
        codes[("train", rep)] = run(["train-align", "--config", str(cfg), "--cohort",
                                     str(root / "gen" / "a" / "cohort.csv"), "--out", str(root / "train" / rep)])
    return root, codes


@pytest.fixture(scope="module")
def monkeypatch_module():
    mp = pytest.MonkeyPatch()
    import os

    for k in list(os.environ):
        if k.startswith("REVEAL_"):
            mp.delenv(k)
    yield mp
    mp.undo()


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_9_harness_table_structure(harness):
    root, codes = harness
    problems = [f"{k} exit {c}" for k, c in codes.items() if c != 0]
    sweep = _rows(root / "sweep" / "a" / "threshold_sweep.csv")
    n_grid = len(set(SMALL["experiment"]["sweep_levels"]) | {0.75})
    if len(sweep) != 2 * n_grid:
        problems.append(f"sweep has {len(sweep)} rows, want |grid_F|+|grid_T| = {2 * n_grid}")
    metric_cols = {"auroc_pct", "balanced_accuracy_pct", "f1_pct", "mcc_pct"}
    if not metric_cols <= set(sweep[0]):
        problems.append("sweep lacks % difference columns")
    opt = [r for r in sweep if r["optimum"] == "True"]
    opt_zero = len(opt) == 2 and all(float(r[c]) == 0.0 for r in opt for c in metric_cols)
    if not opt_zero:
        problems.append("optimum-vs-optimum cell is not exactly 0%")
    sim = [(r["task"], r["model"]) for r in _rows(root / "similarity" / "a" / "ablate_similarity_source.csv")]
    if sim != [(t, m) for t in ("ad", "dementia") for m in ("Latent Feature", "Morphometric Feature")]:
        problems.append(f"similarity table rows {sim}")
    comb = [(r["task"], r["model"]) for r in _rows(root / "combiner" / "a" / "ablate_combiner.csv")]
    if comb != [(t, m) for t in ("ad", "dementia") for m in ("AND", "OR")]:
        problems.append(f"combiner table rows {comb}")
    for name, stem in (("similarity", "ablate_similarity_source"), ("combiner", "ablate_combiner")):
        head = (root / name / "a" / f"{stem}.txt").read_text().splitlines()[1].split("  ")
        if [h.strip() for h in head if h.strip()] != ["Model", "AUROC", "Balanced Accuracy", "F1-Score", "MCC"]:
            problems.append(f"{stem} text header {head}")
    record(9, not problems, "sweep, similarity and combiner table shapes ok, optimum cell 0%" if not problems else "; ".join(problems))


def test_10_reproducible_digests(harness):
    root, codes = harness
    differing = []
    n_files = 0
    for name in ("sweep", "similarity", "combiner", "gen", "render", "train"):
        a, b = root / name / "a", root / name / "b"
        for p in sorted(a.iterdir()):
            if p.name == "manifest.json":
                continue
            n_files += 1
            if file_digest(p) != file_digest(b / p.name):
                differing.append(f"{name}/{p.name}")
    record(10, not differing and n_files > 0,
           f"{n_files} output files compared across re-runs, {len(differing)} differ {differing}")
