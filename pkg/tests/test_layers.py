import math

import numpy as np
import pytest

from multiattn import layers as L
from multiattn.ndmath import grad_check, make_rng


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_gru_step(x, h, p):
    """Pure-Python reference of one GRU step, written independently of the vectorized code."""
    m, d = len(p["b_h"]), len(x)

    def mv(M, v):
        return [sum(M[i][j] * v[j] for j in range(len(v))) for i in range(len(M))]

    wz, uz = mv(p["W_z"], x), mv(p["U_z"], h)
    wr, ur = mv(p["W_r"], x), mv(p["U_r"], h)
    z = [sig(wz[i] + uz[i] + p["b_z"][i]) for i in range(m)]
    r = [sig(wr[i] + ur[i] + p["b_r"][i]) for i in range(m)]
    rh = [r[i] * h[i] for i in range(m)]
    wh, uh = mv(p["W_h"], x), mv(p["U_h"], rh)
    hh = [math.tanh(wh[i] + uh[i] + p["b_h"][i]) for i in range(m)]
    return [(1 - z[i]) * h[i] + z[i] * hh[i] for i in range(m)]


def zero_gru(d_in, m):
    return {k: (np.zeros((m, d_in)) if k[0] == "W" else np.zeros((m, m)) if k[0] == "U" else np.zeros(m))
            for k in L.GRU_KEYS}


def random_gru(d_in, m, seed, scale=0.5):
    rng = make_rng(seed)
    p = L.init_gru(d_in, m, rng)
    for k in p:
        p[k] = rng.normal(0, scale, p[k].shape)
    return p


# -- spatial dropout -------------------------------------------------------

def test_dropout_identity_cases():
    x = make_rng(0).normal(size=(5, 7))
    out, mask = L.spatial_dropout(x, 0.5, make_rng(1), training=False)
    assert out is x and mask is None
    out, _ = L.spatial_dropout(x, 0.0, make_rng(1), training=True)
    np.testing.assert_array_equal(out, x)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        L.spatial_dropout(np.ones((2, 2)), 1.0, make_rng(0), True)


def test_dropout_columns_are_coherent():
    x = make_rng(0).normal(size=(9, 40)) + 5.0
    for seed in range(20):
        out, mask = L.spatial_dropout(x, 0.3, make_rng(seed), True)
        dropped = mask == 0
        assert np.all(out[:, dropped] == 0.0)
        assert np.all(out[:, ~dropped] != 0.0)
        np.testing.assert_allclose(out[:, ~dropped], x[:, ~dropped] / 0.7)


def test_dropout_preserves_mean_in_expectation():
    # Monte-Carlo oracle: E[out] = x under inverted dropout
    x = make_rng(0).normal(size=(4, 6)) + 1.0
    rng = make_rng(123)
    acc = np.zeros_like(x)
    trials = 10_000
    for _ in range(trials):
        acc += L.spatial_dropout(x, 0.5, rng, True)[0]
    assert abs(acc.mean() / trials - x.mean()) / abs(x.mean()) < 0.02


def test_dropout_backward_uses_the_same_mask():
    x = make_rng(0).normal(size=(3, 5))
    _, mask = L.spatial_dropout(x, 0.4, make_rng(9), True)
    g = make_rng(2).normal(size=(3, 5))
    np.testing.assert_array_equal(L.spatial_dropout_backward(mask, g), g * mask)


# -- projection ------------------------------------------------------------

def test_projection_examples():
    out, _ = L.project_forward(np.ones((3, 4)), {"W": np.zeros((2, 4)), "b": np.zeros(2)})
    np.testing.assert_array_equal(out, np.zeros((3, 2)))
    out, _ = L.project_forward(np.array([[0.5]]), {"W": np.array([[1.0]]), "b": np.array([0.0])})
    assert out[0, 0] == pytest.approx(0.46212, abs=1e-5)


def test_projection_matches_scalar_loop():
    rng = make_rng(4)
    x, W, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    out, _ = L.project_forward(x, {"W": W, "b": b})
    for t in range(3):
        for i in range(4):
            ref = math.tanh(sum(W[i, j] * x[t, j] for j in range(5)) + b[i])
            assert out[t, i] == pytest.approx(ref, abs=1e-13)
    assert np.all(np.abs(out) < 1)


# -- GRU -------------------------------------------------------------------

def test_gru_cell_zero_params_halves_state():
    v = np.array([0.4, -0.8, 1.0])
    h = L.gru_cell(np.array([1.0, 2.0]), v, zero_gru(2, 3))
    np.testing.assert_array_equal(h, 0.5 * v)


def test_gru_cell_update_gate_saturation():
    p = zero_gru(2, 3)
    p["b_z"][:] = 50.0
    h = L.gru_cell(np.array([1.0, 2.0]), np.array([0.4, -0.8, 1.0]), p)
    np.testing.assert_allclose(h, 0.0, atol=1e-20)


def test_gru_cell_scalar_case():
    one = np.array([[1.0]])
    p = {"W_h": one, "U_h": one, "W_z": one, "U_z": one, "W_r": one, "U_r": one,
         "b_h": np.zeros(1), "b_z": np.zeros(1), "b_r": np.zeros(1)}
    h = L.gru_cell(np.array([1.0]), np.array([0.5]), p)
    z = sig(1.5)
    hh = math.tanh(1 + z * 0.5)
    assert z == pytest.approx(0.81757, abs=1e-5)
    # frozen from the calculator evaluation above
    assert hh == pytest.approx(0.887236, abs=1e-6)
    assert h[0] == pytest.approx((1 - z) * 0.5 + z * hh, abs=1e-15)
    assert h[0] == pytest.approx(0.816594, abs=1e-6)


def test_gru_forward_single_step_equals_cell():
    p = random_gru(3, 4, 0)
    x = make_rng(1).normal(size=(1, 3))
    states, _ = L.gru_forward(x, p)
    np.testing.assert_allclose(states[0], L.gru_cell(x[0], np.zeros(4), p), rtol=0, atol=1e-15)


def test_gru_forward_matches_scalar_unroll():
    p = random_gru(3, 4, 7)
    x = make_rng(8).normal(size=(4, 3))
    states, _ = L.gru_forward(x, p)
    plist = {k: v.tolist() for k, v in p.items()}
    h = [0.0] * 4
    for t in range(4):
        h = scalar_gru_step(x[t].tolist(), h, plist)
        np.testing.assert_allclose(states[t], h, rtol=0, atol=1e-13)


def test_gru_zero_params_geometric_decay():
    h0 = np.array([0.9, -0.3])
    states, _ = L.gru_forward(np.ones((6, 3)), zero_gru(3, 2), h0)
    for t in range(6):
        np.testing.assert_array_equal(states[t], 0.5 ** (t + 1) * h0)


def test_gru_states_bounded_from_zero_state():
    for seed in range(30):
        p = random_gru(5, 6, seed, scale=1.0)
        x = make_rng(seed + 1).normal(0, 1.0, size=(12, 5))
        states, _ = L.gru_forward(x, p)
        assert np.all(np.abs(states) < 1.0)
        # saturated gates can round tanh to exactly 1.0 in float64
        p = random_gru(5, 6, seed, scale=5.0)
        states, _ = L.gru_forward(5 * x, p)
        assert np.all(np.abs(states) <= 1.0)


def test_gru_empty_sequence_rejected():
    with pytest.raises(ValueError):
        L.gru_forward(np.zeros((0, 3)), random_gru(3, 2, 0))


# -- attention -------------------------------------------------------------

def attention_params(m, q, seed):
    rng = make_rng(seed)
    return {k: rng.normal(0, 1.0, v.shape) for k, v in L.init_attention(m, q, 1, rng).items()}


def test_attention_single_state():
    states = make_rng(0).normal(size=(1, 4))
    a, h, _ = L.attention_forward(states, attention_params(4, 3, 0))
    np.testing.assert_array_equal(a, [1.0])
    np.testing.assert_array_equal(h, states[0])


def test_attention_zero_params_is_mean():
    states = make_rng(0).normal(size=(5, 4))
    p = {k: np.zeros_like(v) for k, v in attention_params(4, 3, 0).items()}
    a, h, _ = L.attention_forward(states, p)
    np.testing.assert_allclose(a, 0.2, rtol=0, atol=1e-15)
    np.testing.assert_allclose(h, states.mean(axis=0), atol=1e-15)


def test_attention_engineered_scores():
    # score(h) = 2 ln2 * tanh(h); states tanh^-1(0.5) and 0 give scores ln2 and 0
    p = {"l0.W": np.array([[1.0]]), "l0.b": np.zeros(1),
         "out.W": np.array([[2 * math.log(2)]]), "out.b": np.zeros(1)}
    states = np.array([[math.atanh(0.5)], [0.0]])
    a, _, _ = L.attention_forward(states, p)
    np.testing.assert_allclose(a, [2 / 3, 1 / 3], atol=1e-15)


def test_attention_shift_invariance():
    states = make_rng(3).normal(size=(6, 4))
    p = attention_params(4, 3, 1)
    a1, _, _ = L.attention_forward(states, p)
    p["out.b"] = p["out.b"] + 17.0
    a2, _, _ = L.attention_forward(states, p)
    np.testing.assert_allclose(a1, a2, rtol=0, atol=1e-12)


# -- head ------------------------------------------------------------------

def test_head_examples():
    p = {k: np.zeros_like(v) for k, v in L.init_head(4, 5, 1, make_rng(0)).items()}
    assert L.head_forward(np.ones(4), p)[0] == 0.5
    p["out.b"][0] = -50.0
    prob = L.head_forward(np.ones(4), p)[0]
    assert 0.0 < prob < 1e-20


def test_head_scalar_case():
    p = {"l0.W": np.array([[2.0], [-1.0]]), "l0.b": np.array([0.5, 0.1]),
         "out.W": np.array([[1.5, 3.0]]), "out.b": np.array([-0.25])}
    prob, logit, _ = L.head_forward(np.array([0.3]), p)
    hidden = [max(0.0, 2.0 * 0.3 + 0.5), max(0.0, -0.3 + 0.1)]
    expected_logit = 1.5 * hidden[0] + 3.0 * hidden[1] - 0.25
    assert logit == pytest.approx(expected_logit, abs=1e-15)
    assert prob == pytest.approx(sig(expected_logit), abs=1e-15)


# -- backward --------------------------------------------------------------

def _check(loss, params, analytic):
    return grad_check(loss, params, analytic, 1e-4)


def test_projection_backward_grad_check():
    rng = make_rng(0)
    x = rng.normal(size=(4, 5))
    p = {"W": rng.normal(size=(3, 5)), "b": rng.normal(size=3)}
    up = rng.normal(size=(4, 3))
    out, cache = L.project_forward(x, p)
    grads = {}
    dx = L.project_backward(cache, up, grads)
    assert _check(lambda: float(np.sum(L.project_forward(x, p)[0] * up)), p, grads) < 1e-6
    assert _check(lambda: float(np.sum(L.project_forward(xs["x"], p)[0] * up)), (xs := {"x": x}), {"x": dx}) < 1e-6


def test_gru_backward_grad_check():
    p = random_gru(3, 4, 2)
    x = {"x": make_rng(3).normal(size=(5, 3))}
    up = make_rng(4).normal(size=(5, 4))
    _, cache = L.gru_forward(x["x"], p)
    grads = {}
    dx, _ = L.gru_backward(cache, up, p, grads)

    def f():
        return float(np.sum(L.gru_forward(x["x"], p)[0] * up))

    assert _check(f, p, grads) < 1e-6
    assert _check(f, x, {"x": dx}) < 1e-6


def test_gru_backward_h0_gradient():
    p = random_gru(2, 3, 5)
    x = make_rng(3).normal(size=(3, 2))
    h0 = {"h0": make_rng(6).normal(0, 0.5, 3)}
    up = make_rng(4).normal(size=(3, 3))
    _, cache = L.gru_forward(x, p, h0["h0"])
    _, dh0 = L.gru_backward(cache, up, p, {})
    assert _check(lambda: float(np.sum(L.gru_forward(x, p, h0["h0"])[0] * up)), h0, {"h0": dh0}) < 1e-6


def test_attention_backward_grad_check():
    p = attention_params(4, 3, 2)
    s = {"s": make_rng(1).normal(size=(6, 4))}
    up = make_rng(2).normal(size=4)
    _, _, cache = L.attention_forward(s["s"], p)
    grads = {}
    ds = L.attention_backward(cache, up, grads)

    def f():
        return float(L.attention_forward(s["s"], p)[1] @ up)

    assert _check(f, p, grads) < 1e-6
    assert _check(f, s, {"s": ds}) < 1e-6


def test_attention_backward_single_state_is_identity():
    p = attention_params(4, 3, 2)
    _, _, cache = L.attention_forward(make_rng(1).normal(size=(1, 4)), p)
    up = np.array([1.0, -2.0, 3.0, 0.5])
    grads = {}
    np.testing.assert_allclose(L.attention_backward(cache, up, grads), up[None, :], atol=1e-15)


def test_head_backward_grad_check():
    rng = make_rng(7)
    p = {k: rng.normal(size=v.shape) for k, v in L.init_head(4, 6, 2, rng).items()}
    h = {"h": rng.normal(size=4)}
    _, _, cache = L.head_forward(h["h"], p)
    grads = {}
    dh = L.head_backward(cache, 1.0, grads)
    f = lambda: L.head_forward(h["h"], p)[1]  # noqa: E731
    assert _check(f, p, grads) < 1e-6
    assert _check(f, h, {"h": dh}) < 1e-6


def test_zero_upstream_gives_zero_gradients():
    p = random_gru(3, 4, 2)
    _, cache = L.gru_forward(make_rng(3).normal(size=(5, 3)), p)
    grads = {}
    L.gru_backward(cache, np.zeros((5, 4)), p, grads)
    assert all(np.all(g == 0) for g in grads.values())
    ap = attention_params(4, 3, 0)
    _, _, acache = L.attention_forward(make_rng(1).normal(size=(3, 4)), ap)
    agrads = {}
    L.attention_backward(acache, np.zeros(4), agrads)
    assert all(np.all(g == 0) for g in agrads.values())


def test_backward_without_cache_is_a_state_error():
    with pytest.raises(L.LayerStateError):
        L.gru_backward(None, np.zeros((1, 1)), {}, {})
    with pytest.raises(L.LayerStateError):
        L.attention_backward(None, np.zeros(1), {})
    with pytest.raises(L.LayerStateError):
        L.head_backward(None, 1.0, {})
