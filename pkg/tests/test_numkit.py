import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refqa.errors import DimensionError, NumericError
from refqa.numkit import (
    Layer,
    ParamRegistry,
    Rng,
    Tensor,
    concat,
    dot,
    gelu,
    grad_check,
    layer_norm,
    linear,
    mlp_forward,
    mul,
    relu,
    sigmoid,
    softplus,
    total,
)
from refqa.numkit.tensor import make_node


def erf_gelu(x):
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def test_linear_identity():
    y = linear(Tensor([3.0, -1.0]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(y.data, [3.0, -1.0])


def test_linear_hand_multiply():
    y = linear(Tensor([1.0, 1.0]), Tensor([[1.0, 2.0], [0.0, 1.0]]), Tensor([1.0, 1.0]))
    np.testing.assert_array_equal(y.data, [4.0, 2.0])


def test_linear_bias_gradient_all_ones():
    reg = ParamRegistry()
    W = reg.add("W", np.random.default_rng(0).normal(size=(3, 4)))
    b = reg.add("b", np.zeros(3))
    total(linear(Tensor(np.arange(4.0)), W, b)).backward()
    np.testing.assert_array_equal(b.grad, np.ones(3))


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        linear(Tensor(np.zeros(3)), Tensor(np.eye(2)))


@pytest.mark.parametrize("x", [0.0, -1.0, 2.0, 0.3, -4.5])
def test_gelu_matches_erf_form(x):
    assert gelu(Tensor([x])).data[0] == pytest.approx(erf_gelu(x), abs=1e-15)


def test_gelu_reference_values():
    y = gelu(Tensor([0.0, -1.0, 2.0])).data
    assert y[0] == 0.0
    assert round(y[1], 5) == -0.15866
    assert round(y[2], 5) == 1.95450


def test_sigmoid_values():
    y = sigmoid(Tensor([0.0, -1000.0, math.log(3.0), 1000.0])).data
    assert y[0] == 0.5
    assert y[1] == 0.0
    assert y[2] == pytest.approx(0.75, abs=1e-15)
    assert y[3] == 1.0


def test_softplus_values():
    y = softplus(Tensor([0.0, 1000.0, -1000.0])).data
    assert y[0] == pytest.approx(math.log(2.0), abs=1e-15)
    assert y[1] == pytest.approx(1000.0)
    assert 0.0 < y[2] < 1e-300
    assert np.all(np.isfinite(y))


def test_layer_norm_cases():
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(layer_norm(Tensor([5.0, 5.0, 5.0]), one, zero).data, 0.0)
    y = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    np.testing.assert_array_equal(y.data, [-1.0, 1.0])
    bias = Tensor([0.5, -2.0, 7.0])
    np.testing.assert_array_equal(layer_norm(Tensor([1.0, 4.0, 9.0]), Tensor(np.zeros(3)), bias).data, bias.data)


def test_layer_norm_standardizes():
    x = np.random.default_rng(3).normal(scale=10.0, size=(5, 32))
    y = layer_norm(Tensor(x), Tensor(np.ones(32)), Tensor(np.zeros(32))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)


def test_mlp_dropout_zero_train_equals_eval():
    rng = np.random.default_rng(1)
    layers = [Layer(Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=5)), "relu"),
              Layer(Tensor(rng.normal(size=(2, 5))), Tensor(rng.normal(size=2)))]
    x = Tensor(rng.normal(size=4))
    a = mlp_forward(x, layers, 0.0, training=True, rng=Rng(0)).data
    b = mlp_forward(x, layers, 0.0, training=False).data
    np.testing.assert_array_equal(a, b)


def test_mlp_identity_layer():
    x = Tensor([1.5, -2.0, 0.25])
    y = mlp_forward(x, [Layer(Tensor(np.eye(3)), Tensor(np.zeros(3)))])
    np.testing.assert_array_equal(y.data, x.data)


def test_mlp_two_layer_hand_computation():
    # layer 1: relu([[1,-1],[2,0.5]] x + [0, -1]); layer 2: [1, 2] h + 0.5
    layers = [Layer(Tensor([[1.0, -1.0], [2.0, 0.5]]), Tensor([0.0, -1.0]), "relu"),
              Layer(Tensor([[1.0, 2.0]]), Tensor([0.5]))]
    x = Tensor([1.0, 2.0])
    # h = relu([-1, 2 + 1 - 1]) = [0, 2]; y = 0 + 4 + 0.5
    assert mlp_forward(x, layers).data[0] == 4.5


def test_mlp_dropout_inverted_scaling():
    layers = [Layer(Tensor(np.eye(1000)), None, "identity"), Layer(Tensor(np.eye(1000)))]
    y = mlp_forward(Tensor(np.ones(1000)), layers, 0.25, training=True, rng=Rng(5)).data
    kept = y[y != 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    assert 650 < kept.size < 850


def test_backward_shared_subexpression():
    reg = ParamRegistry()
    x = reg.add("x", [3.0])
    total(mul(x, x)).backward()
    assert x.grad[0] == 6.0


def _random_registry(seed):
    rng = np.random.default_rng(seed)
    reg = ParamRegistry()
    reg.add("W1", rng.normal(size=(6, 5)))
    reg.add("b1", rng.normal(size=6))
    reg.add("gain", rng.normal(size=6))
    reg.add("bias", rng.normal(size=6))
    reg.add("w", rng.normal(size=12))
    reg.add("W2", rng.normal(size=(1, 6)))
    x = rng.normal(size=(4, 5))
    return reg, x


def test_linear_sum_gradient_exact():
    reg = ParamRegistry()
    rng = np.random.default_rng(9)
    reg.add("W", rng.normal(size=(4, 3)))
    reg.add("b", rng.normal(size=4))
    x = rng.normal(size=3)
    report = grad_check(lambda: total(linear(Tensor(x), reg["W"], reg["b"])), reg, h=1e-4, tol=1e-10)
    assert report.passed, report.max_rel_err


@pytest.mark.parametrize("seed", range(100))
def test_composite_gradients_match_central_differences(seed):
    reg, x = _random_registry(seed)

    def f():
        h = gelu(linear(Tensor(x), reg["W1"], reg["b1"]))
        n = layer_norm(h, reg["gain"], reg["bias"])
        gate = sigmoid(dot(concat([n, h]), reg["w"]))
        y = softplus(linear(n, reg["W2"]))
        return total(y) + total(mul(gate, gate)) + total(relu(h))

    report = grad_check(f, reg, h=1e-4, tol=1e-4)
    assert report.passed, report.max_rel_err


def test_grad_check_detects_corrupted_backward():
    reg = ParamRegistry()
    w = reg.add("w", [0.7, -1.2])

    def broken_square(t):
        return make_node(t.data ** 2, (t,), lambda g: (g * 3.0 * t.data,))

    report = grad_check(lambda: total(broken_square(w)), reg)
    assert not report.passed
    assert report.max_rel_err["w"] > 0.1


def test_grad_check_non_finite_names_parameter():
    reg = ParamRegistry()
    w = reg.add("w", [1e-5])

    def f():
        return total(Tensor(np.log(w.data)) + mul(w, 1.0)) if w.data[0] > 0 else Tensor(np.nan)

    with pytest.raises(NumericError, match="w"):
        grad_check(f, reg, h=1e-4)


def test_registry_rejects_duplicates_and_keeps_grad_shapes():
    reg = ParamRegistry()
    reg.add("a", np.zeros((2, 3)))
    with pytest.raises(KeyError):
        reg.add("a", np.zeros(1))
    assert all(t.grad.shape == t.shape for _, t in reg.items())


def test_rng_determinism_and_children():
    a, b = Rng(42), Rng(42)
    np.testing.assert_array_equal(a.normal(size=10), b.normal(size=10))
    c1, c2 = Rng(42).child(1), Rng(42).child(2)
    assert not np.array_equal(c1.uniform(size=5), c2.uniform(size=5))
    np.testing.assert_array_equal(Rng(42).child(1, 3).uniform(size=4), Rng(42).child(1, 3).uniform(size=4))


def test_forward_backward_bitwise_reproducible():
    def run():
        reg, x = _random_registry(11)
        h = gelu(linear(Tensor(x), reg["W1"], reg["b1"]))
        out = total(layer_norm(h, reg["gain"], reg["bias"]) * h)
        out.backward()
        return out.data.copy(), reg["W1"].grad.copy()

    (a0, g0), (a1, g1) = run(), run()
    assert a0.tobytes() == a1.tobytes() and g0.tobytes() == g1.tobytes()


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(finite, finite)
def test_activations_monotone(x1, x2):
    lo, hi = min(x1, x2), max(x1, x2)
    for fn in (sigmoid, softplus):
        assert fn(Tensor([lo])).data[0] <= fn(Tensor([hi])).data[0]


def test_gelu_monotone_on_grid():
    # GeLU is only monotone right of its minimum near -0.7518
    grid = np.linspace(-0.75, 50, 5001)
    assert np.all(np.diff(gelu(Tensor(grid)).data) >= 0)
