import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from theory_of_machine.netcore import (
    ParamBlock,
    ShapeError,
    affine_backward,
    affine_forward,
    finite_diff_check,
    gru_backward,
    gru_init,
    gru_sequence,
    gru_sequence_backward,
    gru_step,
    init_uniform,
    mse,
    mse_backward,
    sigmoid,
)
from theory_of_machine.rng import SplitMix64

finite = st.floats(-3, 3, allow_nan=False)


def random_cell(seed, d, e):
    return ParamBlock(gru_init(SplitMix64(seed), d, e))


def test_init_uniform_bounds_and_order():
    w = init_uniform(SplitMix64(1), (4, 9), 9)
    assert np.all(np.abs(w) <= 1 / 3)
    r = SplitMix64(1)
    assert w[0, 0] == r.uniform(-1 / 3, 1 / 3)
    assert w[0, 1] == r.uniform(-1 / 3, 1 / 3)


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(2.0) == pytest.approx(0.8807970779778823, abs=1e-15)
    assert sigmoid(-800.0) == 0.0 and sigmoid(800.0) == 1.0


def test_affine_examples():
    assert np.array_equal(affine_forward(np.zeros((2, 3)), np.zeros(2), np.ones(3)), np.zeros(2))
    assert affine_forward(np.eye(3), np.zeros(3), np.array([1.0, 2.0, 3.0])).tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ShapeError):
        affine_forward(np.eye(3), np.zeros(3), np.ones(4))


def test_affine_gradients():
    rng = np.random.default_rng(0)
    x, g_out = rng.normal(size=3), rng.normal(size=4)
    p = ParamBlock({"W": rng.normal(size=(4, 3)), "b": rng.normal(size=4), "x": x})

    def loss(pb):
        y = affine_forward(pb["W"], pb["b"], pb["x"])
        pb.grads["x"] += affine_backward(pb["W"], pb["x"], g_out, pb.grads["W"], pb.grads["b"])
        return float(g_out @ y)

    assert finite_diff_check(loss, p, eps=1e-6) < 1e-7


def test_affine_batched_matches_loop():
    rng = np.random.default_rng(1)
    W, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    X, G = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    gW1, gb1, gW2, gb2 = (np.zeros_like(a) for a in (W, b, W, b))
    dx = affine_backward(W, X, G, gW1, gb1)
    for i in range(5):
        np.testing.assert_allclose(affine_forward(W, b, X[i]), affine_forward(W, b, X)[i], atol=1e-15)
        np.testing.assert_allclose(dx[i], affine_backward(W, X[i], G[i], gW2, gb2), atol=1e-14)
    np.testing.assert_allclose(gW1, gW2, atol=1e-13)
    np.testing.assert_allclose(gb1, gb2, atol=1e-13)


def test_gru_zero_fixed_point():
    cell = ParamBlock({k: np.zeros_like(v) for k, v in gru_init(SplitMix64(0), 6, 4).items()})
    h, cache = gru_step(cell, np.zeros(4), np.ones(6))
    assert np.array_equal(h, np.zeros(4))
    assert np.all(cache.z == 0.5) and np.all(cache.hh == 0.0)


def test_gru_closed_update_gate_keeps_state():
    cell = ParamBlock({k: np.zeros_like(v) for k, v in gru_init(SplitMix64(0), 6, 4).items()})
    cell.values["b_z"][:] = -30.0
    h0 = np.array([0.3, -0.7, 1.5, 0.0])
    h, _ = gru_step(cell, h0, np.linspace(-1, 1, 6))
    np.testing.assert_allclose(h, h0, rtol=0, atol=1e-12)


def test_gru_step_gradients():
    cell = random_cell(3, 6, 4)
    rng = np.random.default_rng(3)
    cell.add("h", rng.normal(size=4))
    cell.add("x", rng.normal(size=6))
    w = rng.normal(size=4)

    def loss(pb):
        h, cache = gru_step(pb, pb["h"], pb["x"])
        dh, dx = gru_backward(pb, cache, w)
        pb.grads["h"] += dh
        pb.grads["x"] += dx
        return float(w @ h)

    assert finite_diff_check(loss, cell, eps=1e-6) < 1e-6


def test_sequence_matches_stepwise():
    cell = random_cell(4, 6, 5)
    xs = np.random.default_rng(4).normal(size=(12, 6))
    h = np.zeros(5)
    caches = []
    for x in xs:
        h, c = gru_step(cell, h, x)
        caches.append(c)
    h_seq, seq_cache = gru_sequence(cell, xs)
    np.testing.assert_allclose(h_seq, h, rtol=0, atol=1e-12)

    w = np.linspace(-1, 1, 5)
    dh = w
    dxs = np.zeros_like(xs)
    for t in range(11, -1, -1):
        dh, dxs[t] = gru_backward(cell, caches[t], dh)
    step_grads = {k: v.copy() for k, v in cell.grads.items()}
    cell.zero_grads()
    dh0, dxs_seq = gru_sequence_backward(cell, seq_cache, w)
    np.testing.assert_allclose(dh0, dh, atol=1e-12)
    np.testing.assert_allclose(dxs_seq, dxs, atol=1e-12)
    for k in step_grads:
        np.testing.assert_allclose(cell.grads[k], step_grads[k], atol=1e-12)


def test_sequence_batched_rows_independent():
    cell = random_cell(5, 6, 4)
    xs = np.random.default_rng(5).normal(size=(3, 7, 6))
    hb, _ = gru_sequence(cell, xs)
    for i in range(3):
        np.testing.assert_allclose(hb[i], gru_sequence(cell, xs[i])[0], atol=1e-14)


def test_sequence_gradients_fd():
    cell = random_cell(6, 6, 4)
    rng = np.random.default_rng(6)
    cell.add("xs", rng.normal(size=(2, 5, 6)))
    w = rng.normal(size=(2, 4))

    def loss(pb):
        h, cache = gru_sequence(pb, pb["xs"])
        _, dxs = gru_sequence_backward(pb, cache, w)
        pb.grads["xs"] += dxs
        return float(np.sum(w * h))

    assert finite_diff_check(loss, cell, eps=1e-5) < 1e-5


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 6, elements=finite), st.integers(0, 2**32))
def test_gru_convex_bound(h, x, seed):
    h2, _ = gru_step(random_cell(seed, 6, 4), h, x)
    assert np.all(np.abs(h2) <= np.maximum(np.abs(h), 1.0) + 1e-12)


def test_mse_examples():
    assert mse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert mse([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]) == 1.0
    assert mse([0.1, 0.2, 0.3], [0.0, 0.0, 0.0]) == pytest.approx(0.14 / 3, abs=1e-16)
    with pytest.raises(ShapeError):
        mse([1.0], [1.0, 2.0])


def test_mse_backward():
    p = ParamBlock({"p": [0.3, -0.4, 1.2]})
    t = np.array([0.1, 0.2, 0.3])

    def loss(pb):
        pb.grads["p"] += mse_backward(pb["p"], t)
        return mse(pb["p"], t)

    assert finite_diff_check(loss, p) < 1e-8


def test_checker_quadratic_exact():
    p = ParamBlock({"p": [1.0, 2.0]})

    def loss(pb):
        pb.grads["p"] += 2 * pb["p"]
        return float(np.sum(pb["p"] ** 2))

    assert finite_diff_check(loss, p) < 1e-10


def test_checker_constant_loss():
    assert finite_diff_check(lambda pb: 3.0, ParamBlock({"p": [1.0, 2.0]})) == 0.0


def test_checker_catches_wrong_gradient():
    p = ParamBlock({"p": [1.0, 2.0]})

    def loss(pb):
        pb.grads["p"] += pb["p"]  # half the true gradient
        return float(np.sum(pb["p"] ** 2))

    assert finite_diff_check(loss, p) == pytest.approx(0.5, abs=1e-6)


def test_param_block_helpers():
    b = ParamBlock({"a": [1.0, 2.0], "b": [[3.0]]})
    assert b.size() == 3 and b.names() == ["a", "b"]
    c = b.copy()
    assert c.equal(b)
    c.values["a"][0] = 9.0
    assert not c.equal(b) and b["a"][0] == 1.0
