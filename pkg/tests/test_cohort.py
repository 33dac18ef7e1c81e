import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score

from reveal.cohort import (
    CohortConfig,
    Subject,
    eval_control_count,
    generate_cohort,
    prevalence_of,
    select,
    split_cohort,
)
from reveal.errors import ConfigError, InfeasibleMatchingError
from reveal.schema import GROUP_SIZES, MISSING, MORPHOMETRY_NAMES, RISK_FIELDS, RiskFactorProfile


def morph_logistic_auroc(n, rho, seed, prevalence=0.12):
    subs = generate_cohort(CohortConfig(n_subjects=n, prevalence=prevalence, signal_strength=rho, seed=seed))
    X = np.log(np.vstack([s.morphometry for s in subs]))
    y = np.array([s.is_case for s in subs], int)
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    tr, te = idx[: n // 2], idx[n // 2 :]
    clf = LogisticRegression(max_iter=2000).fit(X[tr], y[tr])
    return roc_auc_score(y[te], clf.decision_function(X[te]))


def test_schema_group_sizes():
    assert len(RISK_FIELDS) == 48
    assert list(GROUP_SIZES.values()) == [5, 11, 6, 6, 2, 18]
    assert len(MORPHOMETRY_NAMES) == 17


def test_profile_rejects_unknown_and_fills_missing():
    p = RiskFactorProfile({"age": 50.0})
    assert p["BMI"] is MISSING
    with pytest.raises(Exception):
        RiskFactorProfile({"favourite colour": "blue"})


def test_null_signal_prevalence_and_indistinguishable():
    subs = generate_cohort(CohortConfig(n_subjects=1000, prevalence=0.12, signal_strength=0.0, seed=7))
    assert 0.10 <= prevalence_of(subs) <= 0.14
    M = np.vstack([s.morphometry for s in subs])
    y = np.array([s.is_case for s in subs])
    p = [stats.ttest_ind(M[y, k], M[~y, k], equal_var=False).pvalue for k in range(M.shape[1])]
    assert np.mean(p) > 0.01


def test_determinism():
    cfg = CohortConfig(n_subjects=200, prevalence=0.12, seed=7)
    a, b = generate_cohort(cfg), generate_cohort(cfg)
    for s, t in zip(a, b):
        assert s.id == t.id and s.profile == t.profile and s.incident_label == t.incident_label
        assert s.morphometry.tobytes() == t.morphometry.tobytes()
        assert s.image_proxy.tobytes() == t.image_proxy.tobytes()


def test_planted_signal_logistic_oracle():
    assert morph_logistic_auroc(2000, 0.9, 3) > 0.70


def test_monotone_signal_in_rho():
    means = [np.mean([morph_logistic_auroc(1000, rho, seed) for seed in range(10)]) for rho in (0, 0.3, 0.6, 0.9)]
    assert all(b >= a for a, b in zip(means, means[1:])), means


def test_subject_invariants():
    subs = generate_cohort(CohortConfig(n_subjects=500, prevalence=0.12, seed=1))
    for s in subs:
        assert (s.years_to_onset is not None) == s.is_case
        if s.is_case:
            assert 1.5 <= s.years_to_onset <= 11.58
        assert np.all((s.morphometry[:2] > 0) & (s.morphometry[:2] <= 1))
        assert np.all(np.isfinite(s.morphometry)) and np.all(s.morphometry > 0)
        for spec in RISK_FIELDS:
            v = s.profile[spec.key]
            if v is not MISSING and spec.numeric:
                assert spec.lo <= v <= spec.hi
    with pytest.raises(ValueError):
        Subject("x", subs[0].profile, subs[0].morphometry, subs[0].image_proxy, "case", None)


@pytest.mark.parametrize(
    "kwargs",
    [{"n_subjects": 5}, {"prevalence": 0.0}, {"prevalence": 0.5}, {"signal_strength": 1.5}, {"image_noise": -1}],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        generate_cohort(CohortConfig(**kwargs))


def test_config_json_roundtrip(tmp_path):
    cfg = CohortConfig(n_subjects=300, seed=4)
    path = tmp_path / "c.json"
    import json

    path.write_text(json.dumps({"cohort": cfg.to_dict()}))
    assert CohortConfig.from_json(path) == cfg
    with pytest.raises(ConfigError):
        CohortConfig.from_dict({"n_subject": 3})


def test_eval_control_count_examples():
    assert eval_control_count(93, 0.12) == 682
    assert eval_control_count(86, 86 / 1163) == 1077


def test_split_reaches_target_eval_prevalence():
    subs = generate_cohort(CohortConfig(n_subjects=3000, prevalence=86 / 3000, seed=2))
    sp = split_cohort(subs, align_train=0.3, align_val=0.05, prevalence=86 / 1163, seed=0)
    pool = select(subs, sp.eval_pool)
    assert sum(s.is_case for s in pool) == 86
    assert len(pool) == 1163


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    prevalence=st.floats(0.02, 0.08),
    fr=st.floats(0.2, 0.5),
    target=st.floats(0.08, 0.2),
)
def test_split_invariants(seed, prevalence, fr, target):
    subs = generate_cohort(CohortConfig(n_subjects=400, prevalence=prevalence, seed=seed))
    try:
        sp = split_cohort(subs, align_train=fr, align_val=0.1, prevalence=target, seed=seed)
    except InfeasibleMatchingError as err:
        assert err.shortfall > 0
        return
    sets = [set(sp.align_train), set(sp.align_val), set(sp.eval_pool)]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    cases = {s.id for s in subs if s.is_case}
    assert cases <= sets[2]
    assert not (cases & (sets[0] | sets[1]))
    assert abs(prevalence_of(select(subs, sp.eval_pool)) - target) <= 0.02
    assert set(sp.svm_train) | set(sp.svm_test) == sets[2]
    assert not set(sp.svm_train) & set(sp.svm_test)
    test_cases = len(cases & set(sp.svm_test))
    assert abs(test_cases - 0.2 * len(cases)) <= 1


def test_matching_balances_sex():
    subs = generate_cohort(CohortConfig(n_subjects=2400, prevalence=0.05, seed=0))
    sp = split_cohort(subs, seed=0)
    pool = select(subs, sp.eval_pool)
    cases = [s for s in pool if s.is_case]
    controls = [s for s in pool if not s.is_case]
    male = lambda group: np.mean([s.profile["sex"] == "male" for s in group])
    assert abs(male(cases) - male(controls)) < 0.05


def test_infeasible_and_no_cases():
    subs = generate_cohort(CohortConfig(n_subjects=200, prevalence=0.2, seed=0))
    with pytest.raises(InfeasibleMatchingError) as err:
        split_cohort(subs, align_train=0.6, align_val=0.2, prevalence=0.05)
    assert "shortfall" in str(err.value) and err.value.shortfall > 0
    controls = [s for s in subs if not s.is_case]
    with pytest.raises(InfeasibleMatchingError):
        split_cohort(controls)
