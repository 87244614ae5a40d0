import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_net, randomize
from fewshot_dml import layers
from fewshot_dml.errors import ConfigError, InputError, ShapeError
from fewshot_dml.layers import (LayerSpec, ParamBundle, ParamGrads, backprop, cross_entropy,
                                forward, gp_param_gradient, init_params, input_gradient,
                                mean_cross_entropy, softmax)
from fewshot_dml.optim import finite_diff_gradcheck


# --- init_params -----------------------------------------------------------


def test_init_same_seed_bit_identical():
    specs = [LayerSpec(4, 3, "relu"), LayerSpec(3, 2, "softmax")]
    a = init_params(specs, seed=42)
    b = init_params(specs, seed=42)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_init_shapes():
    net = init_params([LayerSpec(4, 3, "relu"), LayerSpec(3, 2, "softmax")], seed=0)
    assert net.weights[0].shape == (3, 4)
    assert net.biases[0].shape == (3,)
    assert net.weights[1].shape == (2, 3)
    assert net.biases[1].shape == (2,)


def test_init_broken_chain_rejected():
    with pytest.raises(ConfigError):
        init_params([LayerSpec(4, 3), LayerSpec(5, 2)], seed=0)


def test_init_bounds_and_zero_biases():
    net = init_params([LayerSpec(100, 50, "relu"), LayerSpec(50, 10, "linear")], seed=1)
    for spec, w in zip(net.specs, net.weights):
        limit = math.sqrt(6.0 / (spec.input_dim + spec.output_dim))
        assert np.all(np.abs(w) <= limit)
    for b in net.biases:
        assert np.all(b == 0.0)


def test_softmax_only_final_layer():
    with pytest.raises(ConfigError):
        init_params([LayerSpec(3, 3, "softmax"), LayerSpec(3, 2, "linear")], seed=0)


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        LayerSpec(0, 3)
    with pytest.raises(ConfigError):
        LayerSpec(3, 3, "tanh")
    with pytest.raises(ConfigError):
        LayerSpec(3, 3, "leaky_relu", slope=1.5)


# --- forward ---------------------------------------------------------------


def test_forward_identity_linear_layer():
    net = ParamBundle((LayerSpec(3, 3, "linear"),), [np.eye(3)], [np.zeros(3)])
    x = np.array([[1.5, -2.0, 0.25]])
    assert np.array_equal(forward(net, x).output, x)


def test_forward_leaky_relu_definition():
    net = ParamBundle((LayerSpec(1, 1, "leaky_relu"),), [np.eye(1)], [np.zeros(1)])
    out = forward(net, np.array([[-2.0]])).output
    assert out[0, 0] == pytest.approx(-0.4, rel=1e-15)


def test_forward_softmax_symmetry():
    net = ParamBundle((LayerSpec(3, 3, "softmax"),), [np.eye(3)], [np.zeros(3)])
    out = forward(net, np.zeros((1, 3))).output
    assert np.allclose(out, 1.0 / 3.0, atol=1e-15)


def test_forward_width_mismatch():
    net = make_net([4, 2], ["linear"])
    with pytest.raises(ShapeError):
        forward(net, np.zeros((5, 3)))


def test_forward_pure_bitwise():
    net = make_net([6, 5, 2], ["leaky_relu", "softmax"], seed=11)
    x = np.random.default_rng(12).normal(size=(7, 6))
    a = forward(net, x).output
    b = forward(net, x).output
    assert np.array_equal(a, b)


# --- cross-entropy ---------------------------------------------------------


def test_cross_entropy_one_hot_is_zero():
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0


def test_cross_entropy_uniform_eight_classes():
    probs = np.full(8, 1.0 / 8.0)
    for label in range(8):
        assert cross_entropy(probs, label) == pytest.approx(math.log(8.0), rel=1e-12)


def test_cross_entropy_zero_probability_floored():
    val = cross_entropy(np.array([1.0, 0.0]), 1)
    assert val == pytest.approx(-math.log(layers.PROB_FLOOR))
    assert math.isfinite(val)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InputError):
        cross_entropy(np.array([0.5, 0.5]), 2)


@given(hnp.arrays(np.float64, st.integers(2, 8),
                  elements=st.floats(-30, 30, allow_nan=False)))
@settings(max_examples=50, deadline=None)
def test_cross_entropy_nonnegative_property(logits):
    probs = softmax(logits)
    for label in range(len(probs)):
        assert cross_entropy(probs, label) >= 0.0


# --- softmax properties ----------------------------------------------------


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 9)),
                  elements=st.floats(-50, 50, allow_nan=False)))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_are_distributions(logits):
    p = softmax(logits)
    assert np.all(p >= 0.0)
    assert np.all(p <= 1.0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


@given(hnp.arrays(np.float64, st.integers(2, 9),
                  elements=st.floats(-20, 20, allow_nan=False)),
       st.floats(min_value=0.1, max_value=10.0),
       st.floats(min_value=-25, max_value=25))
@settings(max_examples=50, deadline=None)
def test_softmax_argmax_invariance(logits, scale, shift):
    base = np.argmax(softmax(logits))
    assert np.argmax(softmax(logits * scale)) == np.argmax(softmax(logits * scale))
    assert np.argmax(softmax(logits + shift)) == base
    # positive scaling preserves ordering of the max
    assert np.argmax(logits * scale) == np.argmax(logits)


# --- backprop --------------------------------------------------------------


def test_backprop_zero_output_gradient():
    net = make_net([4, 6, 2], ["relu", "linear"], seed=13)
    cache = forward(net, np.random.default_rng(14).normal(size=(3, 4)))
    grads = backprop(net, cache, np.zeros_like(cache.output))
    for a in grads.arrays():
        assert np.all(a == 0.0)
    assert np.all(grads.input_grad == 0.0)


def test_backprop_matches_finite_differences_random_two_layer():
    net = make_net([5, 6, 4], ["leaky_relu", "linear"], seed=15)
    randomize(net, seed=16)
    rng = np.random.default_rng(17)
    x = rng.normal(size=(4, 5))
    probe = rng.normal(size=(4, 4))  # fixed linear functional of the output

    def loss(p):
        return float((forward(p, x).output * probe).mean())

    cache = forward(net, x)
    analytic = backprop(net, cache, probe / probe.size)
    assert finite_diff_gradcheck(loss, net, analytic, step=1e-5) < 1e-5


def test_backprop_matches_finite_differences_softmax_head():
    net = make_net([3, 5, 4], ["relu", "softmax"], seed=18)
    randomize(net, seed=19)
    rng = np.random.default_rng(20)
    x = rng.normal(size=(5, 3))
    probe = rng.normal(size=(5, 4))

    def loss(p):
        return float((forward(p, x).output * probe).sum())

    cache = forward(net, x)
    analytic = backprop(net, cache, probe)
    assert finite_diff_gradcheck(loss, net, analytic, step=1e-5) < 1e-5


def test_backprop_linear_layer_closed_form():
    # one linear layer, one example, squared-error loss:
    # dL/dW = 2 (W x + b - y) x^T, dL/db = 2 (W x + b - y)
    rng = np.random.default_rng(21)
    net = make_net([3, 2], ["linear"], seed=22)
    randomize(net, seed=23)
    x = rng.normal(size=(1, 3))
    y = rng.normal(size=(1, 2))
    cache = forward(net, x)
    resid = cache.output - y
    grads = backprop(net, cache, 2.0 * resid)
    expected_w = 2.0 * resid.T @ x
    expected_b = 2.0 * resid[0]
    assert np.allclose(grads.weights[0], expected_w, rtol=1e-12)
    assert np.allclose(grads.biases[0], expected_b, rtol=1e-12)


def test_backprop_shape_mismatch():
    net = make_net([3, 2], ["linear"])
    cache = forward(net, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        backprop(net, cache, np.zeros((4, 3)))


# --- input_gradient --------------------------------------------------------


def test_input_gradient_linear_critic_equals_weights():
    w = np.array([[3.0, -4.0]])
    net = ParamBundle((LayerSpec(2, 1, "linear"),), [w], [np.array([0.7])])
    for point in (np.zeros(2), np.array([5.0, -1.0])):
        g = input_gradient(net, point)
        assert np.allclose(g, w[0], rtol=1e-15)


def test_input_gradient_dead_relu_region():
    net = ParamBundle(
        (LayerSpec(2, 3, "relu"), LayerSpec(3, 1, "linear")),
        [np.ones((3, 2)), np.ones((1, 3))],
        [np.full(3, -100.0), np.zeros(1)])
    g = input_gradient(net, np.array([1.0, 1.0]))
    assert np.all(g == 0.0)


def test_input_gradient_matches_finite_differences():
    net = make_net([4, 7, 5, 1], ["leaky_relu", "relu", "linear"], seed=24)
    randomize(net, seed=25)
    rng = np.random.default_rng(26)
    point = rng.normal(size=4)
    analytic = input_gradient(net, point)
    step = 1e-6
    for i in range(4):
        up, down = point.copy(), point.copy()
        up[i] += step
        down[i] -= step
        fd = (forward(net, up).output[0, 0] - forward(net, down).output[0, 0]) / (2 * step)
        assert abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), 1e-6) < 1e-5


def test_input_gradient_with_condition_concatenation():
    net = make_net([5, 6, 1], ["leaky_relu", "linear"], seed=27)
    randomize(net, seed=28)
    point = np.arange(3.0)
    cond = np.array([0.5, -0.5])
    g = input_gradient(net, point, conditions=cond)
    direct = input_gradient(net, np.concatenate([point, cond]))
    assert g.shape == (5,)
    assert np.array_equal(g, direct)


def test_input_gradient_requires_scalar_linear_output():
    with pytest.raises(ConfigError):
        input_gradient(make_net([3, 2], ["linear"]), np.zeros(3))
    with pytest.raises(ConfigError):
        input_gradient(make_net([3, 1], ["relu"]), np.zeros(3))


# --- gradient penalty ------------------------------------------------------


def linear_critic(w, b=0.0):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return ParamBundle((LayerSpec(w.shape[1], 1, "linear"),), [w], [np.array([b])])


def test_gp_unit_norm_linear_critic_zero_everything():
    net = linear_critic([[0.6, 0.8]])
    penalty, grads, norms = gp_param_gradient(net, np.random.default_rng(0).normal(size=(5, 2)))
    assert penalty == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(norms, 1.0)
    assert np.all(grads.biases[0] == 0.0)
    # analytic derivative 2(||w|| - 1) w / ||w|| vanishes at unit norm
    assert np.allclose(grads.weights[0], 0.0, atol=1e-12)


def test_gp_linear_critic_penalty_value_and_gradient():
    net = linear_critic([[3.0, 4.0]])
    batch = np.random.default_rng(1).normal(size=(6, 2))
    penalty, grads, norms = gp_param_gradient(net, batch)
    assert penalty == pytest.approx(16.0, rel=1e-12)          # (5 - 1)^2
    assert np.allclose(norms, 5.0)
    expected = 2.0 * (5.0 - 1.0) * np.array([[3.0, 4.0]]) / 5.0
    assert np.allclose(grads.weights[0], expected, rtol=1e-12)
    assert np.all(grads.biases[0] == 0.0)


def test_gp_matches_finite_differences_random_critic():
    net = make_net([3, 6, 5, 1], ["leaky_relu", "leaky_relu", "linear"], seed=29)
    randomize(net, seed=30)
    batch = np.random.default_rng(31).normal(size=(4, 3))

    def loss(p):
        return gp_param_gradient(p, batch)[0]

    _, analytic, _ = gp_param_gradient(net, batch)
    assert finite_diff_gradcheck(loss, net, analytic, step=1e-5) < 1e-4


def test_gp_with_restricted_norm_dims_matches_finite_differences():
    net = make_net([5, 6, 1], ["leaky_relu", "linear"], seed=32)
    randomize(net, seed=33)
    batch = np.random.default_rng(34).normal(size=(5, 5))

    def loss(p):
        return gp_param_gradient(p, batch, norm_dims=3)[0]

    _, analytic, _ = gp_param_gradient(net, batch, norm_dims=3)
    assert finite_diff_gradcheck(loss, net, analytic, step=1e-5) < 1e-4


def test_gp_rejects_softmax_critic():
    net = make_net([3, 1], ["softmax"])
    # softmax output of width 1 is constant, but the contract forbids it outright
    with pytest.raises(ConfigError):
        gp_param_gradient(net, np.zeros((2, 3)))


def test_gp_penalty_nonnegative_random_nets():
    for seed in range(5):
        net = make_net([4, 5, 1], ["leaky_relu", "linear"], seed=seed)
        randomize(net, seed=seed + 100)
        batch = np.random.default_rng(seed).normal(size=(6, 4))
        penalty, _, norms = gp_param_gradient(net, batch)
        assert penalty >= 0.0
        expected = float(((norms - 1.0) ** 2).mean())
        assert penalty == pytest.approx(expected, rel=1e-12)
