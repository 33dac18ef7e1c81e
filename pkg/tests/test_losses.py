import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reveal.align import AdamW, AlignmentModel, encode, gacl_loss, infonce_loss, loss_and_grads
from reveal.align.losses import gacl_loss_and_grad_s, infonce_loss_and_grad_s
from reveal.align.model import ProjectionHead, cosine_matrix


def random_labels(rng, n):
    L = np.where(rng.random((n, n)) < 0.4, 1.0, -1.0)
    L = np.where(np.triu(np.ones((n, n))) > 0, L, L.T)
    np.fill_diagonal(L, 1.0)
    return L


def scalar_gacl(s, L, tau, beta):
    n = len(s)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += math.log1p(math.exp(L[i][j] * (-s[i][j] / tau + beta)))
    return total / (n * n)


# fixtures ------------------------------------------------------------------


def test_gacl_zero_argument_positive():
    assert gacl_loss([[0.07 * -0.6319]], [[1.0]], 0.07, -0.6319) == pytest.approx(math.log(2), abs=1e-9)


def test_gacl_zero_argument_negative():
    assert gacl_loss([[0.07 * -0.6319]], [[-1.0]], 0.07, -0.6319) == pytest.approx(math.log(2), abs=1e-9)


def test_gacl_saturated_positive():
    expected = math.log1p(math.exp(-1 / 0.07))
    assert gacl_loss([[1.0]], [[1.0]], 0.07, 0.0) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(6.2487e-7, rel=1e-4)


def test_infonce_identity_n2():
    assert infonce_loss(np.eye(2), 1.0) == pytest.approx(math.log1p(math.exp(-1)), abs=1e-9)


@pytest.mark.parametrize("n", [2, 8, 128])
def test_infonce_uniform_is_log_n(n):
    assert abs(infonce_loss(np.full((n, n), 0.3), 0.07) - math.log(n)) < 1e-12


def test_infonce_single():
    assert infonce_loss([[0.5]], 0.07) == 0.0


def test_loss_errors():
    with pytest.raises(ValueError):
        gacl_loss(np.zeros((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        gacl_loss(np.zeros((2, 2)), np.ones((2, 2)), tau=0.0)
    with pytest.raises(ValueError):
        infonce_loss(np.zeros((2, 2)), tau=-1)
    with pytest.raises(ValueError):
        infonce_loss(np.zeros((2, 3)))


# properties ----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 7), seed=st.integers(0, 10**6), beta=st.floats(-5, 0))
def test_gacl_matches_scalar_loop_and_nonnegative(n, seed, beta):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, (n, n))
    L = random_labels(rng, n)
    value = gacl_loss(s, L, 0.07, beta)
    assert value >= 0
    assert value == pytest.approx(scalar_gacl(s.tolist(), L.tolist(), 0.07, beta), rel=1e-12, abs=1e-15)


def test_gacl_label_locality():
    rng = np.random.default_rng(2)
    s = rng.uniform(-1, 1, (5, 5))
    L = random_labels(rng, 5)
    L[1, 3] = 1.0
    L2 = L.copy()
    L2[1, 3] = -1.0
    a = -s[1, 3] / 0.07 - 0.6319
    diff = (math.log1p(math.exp(-a)) - math.log1p(math.exp(a))) / 25
    assert gacl_loss(s, L2, 0.07, -0.6319) - gacl_loss(s, L, 0.07, -0.6319) == pytest.approx(diff, abs=1e-12)


def test_gacl_saturated_gradient_vanishes():
    s = np.array([[1.0, -1.0], [-1.0, 1.0]])
    L = np.array([[1.0, -1.0], [-1.0, 1.0]])
    _, ds, dbeta = gacl_loss_and_grad_s(s, L, 0.001, 0.0)
    assert np.abs(ds).max() < 1e-100
    assert abs(dbeta) < 1e-100


def test_infonce_permutation_equivariance():
    rng = np.random.default_rng(4)
    I = rng.normal(size=(9, 4))
    T = rng.normal(size=(9, 4))
    perm = rng.permutation(9)
    a = infonce_loss(I @ T.T, 0.07)
    b = infonce_loss(I[perm] @ T[perm].T, 0.07)
    assert a == pytest.approx(b, abs=1e-12)


def test_infonce_matches_loop():
    rng = np.random.default_rng(9)
    s = rng.uniform(-1, 1, (6, 6))
    tau = 0.2
    rows = [-(s[i, i] / tau - math.log(sum(math.exp(s[i, j] / tau) for j in range(6)))) for i in range(6)]
    cols = [-(s[j, j] / tau - math.log(sum(math.exp(s[i, j] / tau) for i in range(6)))) for j in range(6)]
    assert infonce_loss(s, tau) == pytest.approx(0.5 * (np.mean(rows) + np.mean(cols)), abs=1e-12)


# finite differences --------------------------------------------------------


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def numeric_grad(f, x, h=1e-5):
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


def make_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    d_img, d_txt, P = int(rng.integers(2, 17)), int(rng.integers(2, 17)), int(rng.integers(2, 9))
    model = AlignmentModel.init(d_img, d_txt, P, seed=seed, temperature=0.5, beta=float(rng.uniform(-2, 0)))
    model.image_head.b[:] = rng.normal(size=P) * 0.1
    model.text_head.b[:] = rng.normal(size=P) * 0.1
    return model, rng.normal(size=(n, d_img)), rng.normal(size=(n, d_txt)), random_labels(rng, n)


@pytest.mark.parametrize("loss", ["gacl", "infonce"])
def test_gradients_match_central_differences(loss):
    worst = 0.0
    for seed in range(20):
        model, Xi, Xt, L = make_instance(seed)
        _, grads, _ = loss_and_grads(model, Xi, Xt, L, loss, trainable_beta=True)
        params = model.params()
        for name, p in params.items():
            num = numeric_grad(lambda: loss_and_grads(model, Xi, Xt, L, loss)[0], p)
            worst = max(worst, rel_err(grads[name], num))
        if loss == "gacl":
            box = np.array([model.beta])

            def f():
                model.beta = float(box[0])
                return loss_and_grads(model, Xi, Xt, L, loss)[0]

            num = numeric_grad(f, box)
            worst = max(worst, rel_err(np.atleast_1d(grads["beta"]), num))
    assert worst < 1e-4


def test_beta_gradient_closed_form():
    rng = np.random.default_rng(1)
    s = rng.uniform(-1, 1, (4, 4))
    L = random_labels(rng, 4)
    _, _, dbeta = gacl_loss_and_grad_s(s, L, 0.07, -0.5)
    sig = 1 / (1 + np.exp(-(L * (-s / 0.07 - 0.5))))
    assert dbeta == pytest.approx(np.sum(sig * L) / 16, abs=1e-14)


def test_infonce_grad_s_matches_fd():
    rng = np.random.default_rng(6)
    s = rng.uniform(-1, 1, (5, 5))
    _, ds = infonce_loss_and_grad_s(s, 0.3)
    num = numeric_grad(lambda: infonce_loss(s, 0.3), s)
    assert rel_err(ds, num) < 1e-6


# heads and encode ----------------------------------------------------------


def test_identity_head_passes_unit_input():
    head = ProjectionHead(np.eye(3), np.zeros(3))
    x = np.array([[0.6, 0.8, 0.0]])
    np.testing.assert_allclose(head.forward(x)[0], x, atol=1e-15)


def test_encode_unit_rows_and_scale_invariance():
    model = AlignmentModel.init(5, 7, 4, seed=0)
    rng = np.random.default_rng(0)
    Xi, Xt = rng.normal(size=(6, 5)), rng.normal(size=(6, 7))
    pair = encode(model, Xi, Xt)
    np.testing.assert_allclose(np.linalg.norm(pair.I, axis=1), 1, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(pair.T_emb, axis=1), 1, atol=1e-9)
    Xi2 = Xi.copy()
    Xi2[2] *= 3
    np.testing.assert_allclose(encode(model, Xi2, Xt).I, pair.I, atol=1e-12)
    s = cosine_matrix(pair)
    assert np.all(np.abs(s) <= 1 + 1e-9)


def test_encode_zero_vector_errors():
    head = ProjectionHead(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError, match="row 0"):
        head.forward(np.zeros((1, 2)))


def test_encode_width_mismatch():
    model = AlignmentModel.init(5, 7, 4)
    with pytest.raises(ValueError):
        encode(model, np.ones((2, 4)), np.ones((2, 7)))


def test_checkpoint_roundtrip(tmp_path):
    model = AlignmentModel.init(5, 7, 4, seed=3, config={"a": 1})
    model.save(tmp_path / "m.json")
    back = AlignmentModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.image_head.W, model.image_head.W)
    np.testing.assert_array_equal(back.text_head.b, model.text_head.b)
    assert back.beta == model.beta and back.config == {"a": 1}


# optimizer -----------------------------------------------------------------


def test_adamw_first_step_by_hand():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -0.1])}
    opt = AdamW(lr=0.1, eps=1e-8, weight_decay=0.01)
    opt.step(p, g)
    # bias-corrected m/sqrt(v) is sign(g) on the first step
    expected = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01) - 0.1 * np.sign([0.5, -0.1]) * (
        np.abs([0.5, -0.1]) / (np.abs([0.5, -0.1]) + 1e-8)
    )
    np.testing.assert_allclose(p["w"], expected, rtol=1e-12)


def test_adamw_two_steps_reference():
    b1, b2, lr, eps, wd = 0.9, 0.999, 0.01, 1e-6, 0.1
    x, m, v = 2.0, 0.0, 0.0
    grads = [0.3, -0.7]
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x * (1 - lr * wd) - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    p = {"x": np.array([2.0])}
    opt = AdamW(lr, (b1, b2), eps, wd)
    for g in grads:
        opt.step(p, {"x": np.array([g])})
    assert p["x"][0] == pytest.approx(x, abs=1e-14)


def test_adamw_no_decay_and_zero_lr():
    p = {"beta": np.array(1.0), "w": np.array([3.0])}
    opt = AdamW(lr=0.0, weight_decay=0.5)
    opt.step(p, {"beta": np.array(0.2), "w": np.array([0.1])})
    assert p["w"][0] == 3.0 and float(p["beta"]) == 1.0
    with pytest.raises(ValueError):
        AdamW(lr=-1)
