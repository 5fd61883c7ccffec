"""Autodiff gradient oracles, parameter store, and optimizer behavior."""

import json

import numpy as np
import pytest

import stylescout.numerics as nm
from stylescout.numerics import (
    Adam,
    FrozenStoreError,
    NonFiniteGradientError,
    ParamStore,
    Tensor,
    backward,
    gradient_check,
)

TOL = 1e-4  # central differences at h=1e-4


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# ----------------------------------------------------------- per-op checks


def test_grad_elementwise_ops():
    rng = np.random.default_rng(0)
    ops = {
        "sigmoid": nm.sigmoid,
        "tanh": nm.tanh,
        "gelu": nm.gelu,
        "exp": nm.exp,
        "neg": nm.neg,
    }
    for name, op in ops.items():
        for trial in range(8):
            x = leaf(rng, 4, 3)
            worst = gradient_check(lambda: nm.tsum(op(x)), {"x": x}, rng)
            assert worst < TOL, f"{name} trial {trial}: {worst}"


def test_grad_relu_away_from_kink():
    rng = np.random.default_rng(1)
    for _ in range(8):
        x = leaf(rng, 5, 2)
        x.data[np.abs(x.data) < 1e-2] += 0.5  # central diff straddles the kink otherwise
        assert gradient_check(lambda: nm.tsum(nm.relu(x)), {"x": x}, rng) < TOL


def test_grad_log_positive_domain():
    rng = np.random.default_rng(2)
    for _ in range(8):
        x = Tensor(rng.uniform(0.5, 3.0, size=(4, 4)), requires_grad=True)
        assert gradient_check(lambda: nm.tsum(nm.log(x)), {"x": x}, rng) < TOL


def test_grad_clamp_interior_and_zero_outside():
    rng = np.random.default_rng(3)
    x = Tensor(np.array([[-2.0, 0.3, 0.9, 5.0]]), requires_grad=True)
    loss = nm.tsum(nm.clamp(x, 0.0, 1.0))
    backward(loss)
    assert np.allclose(x.grad, [[0.0, 1.0, 1.0, 0.0]])
    for _ in range(6):
        y = Tensor(rng.uniform(0.05, 0.95, size=(3, 3)), requires_grad=True)
        assert gradient_check(lambda: nm.tsum(nm.clamp(y, 0.0, 1.0)), {"y": y}, rng) < TOL


def test_grad_binary_ops_with_broadcast():
    rng = np.random.default_rng(4)
    for _ in range(8):
        a = leaf(rng, 4, 3)
        b = leaf(rng, 1, 3)  # broadcast over rows
        assert gradient_check(lambda: nm.tsum(nm.add(a, b)), {"a": a, "b": b}, rng) < TOL
        assert gradient_check(lambda: nm.tsum(nm.mul(a, b)), {"a": a, "b": b}, rng) < TOL
        assert gradient_check(lambda: nm.tsum(nm.sub(a, b)), {"a": a, "b": b}, rng) < TOL


def test_grad_matmul_and_scale():
    rng = np.random.default_rng(5)
    for _ in range(8):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4, 2)
        assert gradient_check(lambda: nm.tsum(nm.matmul(a, b)), {"a": a, "b": b}, rng) < TOL
        assert gradient_check(lambda: nm.tsum(nm.scale(a, -1.7)), {"a": a}, rng) < TOL


def test_grad_shape_ops():
    rng = np.random.default_rng(6)
    for _ in range(6):
        x = leaf(rng, 2, 6)
        assert gradient_check(lambda: nm.tsum(nm.reshape(x, (3, 4))), {"x": x}, rng) < TOL
        assert gradient_check(lambda: nm.tsum(nm.transpose(x, (1, 0))), {"x": x}, rng) < TOL
        y = leaf(rng, 2, 6)
        assert (
            gradient_check(lambda: nm.tsum(nm.concat([x, y], axis=0)), {"x": x, "y": y}, rng) < TOL
        )


def test_grad_take_rows_accumulates_repeats():
    rng = np.random.default_rng(7)
    table = leaf(rng, 5, 3)
    idx = np.array([1, 1, 4])
    loss = nm.tsum(nm.take_rows(table, idx))
    backward(loss)
    assert np.allclose(table.grad[1], 2.0)  # row selected twice
    assert np.allclose(table.grad[4], 1.0)
    assert np.allclose(table.grad[0], 0.0)
    for _ in range(6):
        t = leaf(rng, 6, 4)
        ix = rng.integers(0, 6, size=5)
        assert gradient_check(lambda: nm.tsum(nm.take_rows(t, ix)), {"t": t}, rng) < TOL


def test_grad_reductions():
    rng = np.random.default_rng(8)
    for _ in range(6):
        x = leaf(rng, 3, 5)
        assert gradient_check(lambda: nm.tmean(x), {"x": x}, rng) < TOL
        assert gradient_check(lambda: nm.tsum(nm.tsum(x, axis=0)), {"x": x}, rng) < TOL


def test_grad_masked_softmax_and_layer_norm():
    rng = np.random.default_rng(9)
    for _ in range(6):
        x = leaf(rng, 4, 6)
        mask = np.array([1, 1, 0, 1, 0, 1], dtype=bool)
        # plain tsum would be constant (rows sum to 1), so weight the probs
        w = Tensor(rng.normal(size=(4, 6)))
        assert (
            gradient_check(
                lambda: nm.tsum(nm.mul(nm.masked_softmax(x, mask), w)), {"x": x}, rng
            )
            < TOL
        )
        g = Tensor(rng.normal(size=6) + 1.0, requires_grad=True)
        b = leaf(rng, 6)
        assert (
            gradient_check(
                lambda: nm.tsum(nm.layer_norm(x, g, b)), {"x": x, "g": g, "b": b}, rng
            )
            < TOL
        )


def test_grad_mean_over_mask():
    rng = np.random.default_rng(10)
    for _ in range(6):
        x = leaf(rng, 5, 3)
        mask = np.array([True, False, True, True, False])
        assert gradient_check(lambda: nm.tsum(nm.mean_over_mask(x, mask)), {"x": x}, rng) < TOL


def test_masked_slots_get_exactly_zero_gradient():
    rng = np.random.default_rng(11)
    x = leaf(rng, 4, 3)
    mask = np.array([True, True, False, False])
    loss = nm.tsum(nm.mean_over_mask(x, mask))
    backward(loss)
    assert np.all(x.grad[2:] == 0.0)
    x2 = leaf(rng, 2, 4)
    m2 = np.array([True, False, True, False])
    loss2 = nm.tsum(nm.masked_softmax(x2, m2))
    backward(loss2)
    assert np.all(x2.grad[:, ~m2] == 0.0)


def test_appending_masked_positions_is_a_noop():
    """Forward values and gradients ignore everything behind the mask."""
    rng = np.random.default_rng(12)
    x_small = leaf(rng, 3, 4)
    mask_small = np.array([True, True, True])
    loss_small = nm.tsum(nm.mean_over_mask(x_small, mask_small))
    backward(loss_small)

    padded = np.concatenate([x_small.data, rng.normal(size=(2, 4)) * 100], axis=0)
    x_big = Tensor(padded, requires_grad=True)
    mask_big = np.array([True, True, True, False, False])
    loss_big = nm.tsum(nm.mean_over_mask(x_big, mask_big))
    backward(loss_big)

    assert loss_big.item() == pytest.approx(loss_small.item(), abs=0)
    assert np.array_equal(x_big.grad[:3], x_small.grad)
    assert np.all(x_big.grad[3:] == 0.0)


def test_gradient_accumulates_across_reuse():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    loss = nm.tsum(nm.add(nm.mul(x, x), x))  # x^2 + x, d/dx = 2x + 1
    backward(loss)
    assert x.grad[0, 0] == pytest.approx(5.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        backward(nm.mul(x, x))


# ------------------------------------------------------------- ParamStore


def test_store_initialization_is_seed_deterministic():
    def build(seed):
        s = ParamStore(seed)
        s.dense("w1", 8, 4)
        s.embedding("e", 10, 3)
        s.zeros("b", 4)
        return s

    a, b = build(123), build(123)
    for (na, ta), (nb, tb) in zip(a.items(), b.items()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
    c = build(124)
    assert not np.array_equal(a["w1"].data, c["w1"].data)


def test_store_dense_init_bounds():
    s = ParamStore(0)
    w = s.dense("w", 100, 50)
    bound = 1.0 / np.sqrt(100)
    assert np.all(np.abs(w.data) <= bound)


def test_store_json_round_trip_bit_exact():
    s = ParamStore(7)
    s.dense("w", 5, 5)
    s.embedding("e", 4, 6)
    text = s.to_json()
    back = ParamStore.from_json(text)
    assert sorted(back.names()) == sorted(s.names())
    for name, t in s.items():
        assert back[name].data.tobytes() == t.data.tobytes()  # bit-exact, not approx
    assert back.to_json() == text


def test_store_duplicate_name_rejected():
    s = ParamStore(0)
    s.dense("w", 2, 2)
    with pytest.raises(ValueError):
        s.dense("w", 2, 2)


def test_frozen_store_rejects_writes():
    s = ParamStore(0)
    s.dense("w", 2, 2)
    f = s.freeze()
    with pytest.raises(FrozenStoreError):
        f.dense("w2", 2, 2)
    with pytest.raises(ValueError):
        f["w"].data[0, 0] = 1.0  # numpy write lock


# ------------------------------------------------------------------ Adam


def _quadratic_store():
    s = ParamStore(0)
    s.constant("x", np.array([[4.0, -3.0]]))
    return s


def test_adam_descends_quadratic():
    s = _quadratic_store()
    opt = Adam(s, lr=0.1)
    for _ in range(200):
        s.zero_grad()
        x = s["x"]
        loss = nm.tsum(nm.mul(x, x))
        backward(loss)
        opt.step()
    assert np.all(np.abs(s["x"].data) < 1e-2)


def test_adam_is_deterministic():
    def run():
        s = _quadratic_store()
        opt = Adam(s, lr=0.05)
        for _ in range(20):
            s.zero_grad()
            loss = nm.tsum(nm.mul(s["x"], s["x"]))
            backward(loss)
            opt.step()
        return s["x"].data.copy()

    assert np.array_equal(run(), run())


def test_adam_rejects_whole_step_on_non_finite_gradient():
    s = _quadratic_store()
    before = s["x"].data.copy()
    opt = Adam(s)
    with pytest.raises(NonFiniteGradientError):
        opt.step({"x": np.array([[np.nan, 1.0]])})
    assert np.array_equal(s["x"].data, before)
    assert opt.t == 0  # bias-correction clock untouched


def test_adam_skips_parameters_without_gradients():
    s = ParamStore(0)
    s.constant("a", np.ones((2, 2)))
    s.constant("b", np.ones((2, 2)))
    before_b = s["b"].data.copy()
    opt = Adam(s, lr=0.5)
    opt.step({"a": np.ones((2, 2))})
    assert not np.array_equal(s["a"].data, np.ones((2, 2)))
    assert np.array_equal(s["b"].data, before_b)


def test_adam_refuses_frozen_store():
    s = _quadratic_store()
    with pytest.raises(FrozenStoreError):
        Adam(s.freeze()).step({"x": np.ones((1, 2))})


def test_adam_first_step_is_lr_sized():
    # bias correction makes |update| == lr for any constant gradient
    s = ParamStore(0)
    s.constant("x", np.zeros(3))
    Adam(s, lr=0.25).step({"x": np.array([10.0, -2.0, 0.5])})
    assert np.allclose(np.abs(s["x"].data), 0.25, atol=1e-6)
