import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_net, randomize
from fewshot_dml import layers
from fewshot_dml.errors import ConfigError, InputError, TrainingError
from fewshot_dml.layers import LayerSpec, ParamBundle, ParamGrads, init_params
from fewshot_dml.optim import AdamHyper, AdamState, adam_step, finite_diff_gradcheck


def scalar_bundle(value=0.0):
    spec = (LayerSpec(1, 1, "linear"),)
    return ParamBundle(spec, [np.array([[value]])], [np.zeros(1)])


def grads_like(bundle, fill):
    return ParamGrads([np.full_like(w, fill) for w in bundle.weights],
                      [np.full_like(b, fill) for b in bundle.biases])


def test_adam_first_step_hand_computed():
    # m1 = 0.1, v1 = 0.001; bias-corrected m_hat = 1, v_hat = 1
    # theta1 = 0 - 0.001 * 1 / (sqrt(1) + 1e-8) = -0.001 / 1.00000001
    params = scalar_bundle(0.0)
    state = AdamState.for_bundle(params)
    hyper = AdamHyper(learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8)
    state, params = adam_step(state, params, grads_like(params, 1.0), hyper)
    theta = params.weights[0][0, 0]
    assert theta == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-12)
    assert theta == pytest.approx(-0.000999999, abs=1e-8)
    assert state.step_count == 1


def test_adam_zero_gradients_leave_params_unchanged():
    params = make_net([3, 2], ["linear"], seed=1)
    state = AdamState.for_bundle(params)
    state.first_moment[0][...] = 0.5  # nonzero moment decays but update stays 0 only if grads cancel it
    before = [a.copy() for a in params.arrays()]
    state2, params2 = adam_step(state, params, grads_like(params, 0.0),
                                AdamHyper(learning_rate=1e-3))
    assert state2.step_count == state.step_count + 1
    # moments decayed toward zero
    assert np.all(np.abs(state2.first_moment[0]) < np.abs(state.first_moment[0]) + 1e-15)
    # zero-moment coordinates stay exactly put
    assert np.array_equal(params2.biases[0], before[1])


def test_adam_zero_gradients_zero_moments_identity():
    params = make_net([3, 2], ["linear"], seed=1)
    state = AdamState.for_bundle(params)
    _, params2 = adam_step(state, params, grads_like(params, 0.0), AdamHyper())
    for a, b in zip(params.arrays(), params2.arrays()):
        assert np.array_equal(a, b)


def test_adam_deterministic_and_pure():
    params = make_net([4, 3], ["relu"], seed=2)
    grads = grads_like(params, 0.25)
    state = AdamState.for_bundle(params)
    snapshot = [a.copy() for a in params.arrays()]
    s1, p1 = adam_step(state, params, grads, AdamHyper())
    s2, p2 = adam_step(state, params, grads, AdamHyper())
    for a, b in zip(p1.arrays(), p2.arrays()):
        assert np.array_equal(a, b)
    for a, b in zip(s1.first_moment, s2.first_moment):
        assert np.array_equal(a, b)
    # inputs untouched
    for a, b in zip(params.arrays(), snapshot):
        assert np.array_equal(a, b)
    assert state.step_count == 0


@given(g=st.floats(min_value=1e-6, max_value=1e6, allow_nan=False))
@settings(max_examples=30, deadline=None)
def test_adam_step_opposes_gradient_sign(g):
    for sign in (1.0, -1.0):
        params = scalar_bundle(0.0)
        state = AdamState.for_bundle(params)
        _, p2 = adam_step(state, params, grads_like(params, sign * g), AdamHyper())
        assert np.sign(p2.weights[0][0, 0]) == -sign


@given(g=st.floats(min_value=1e-8, max_value=1e8, allow_nan=False),
       lr=st.floats(min_value=1e-6, max_value=1.0))
@settings(max_examples=30, deadline=None)
def test_adam_first_step_magnitude_bounded_by_lr(g, lr):
    params = scalar_bundle(0.0)
    state = AdamState.for_bundle(params)
    _, p2 = adam_step(state, params, grads_like(params, g), AdamHyper(learning_rate=lr))
    assert abs(p2.weights[0][0, 0]) <= lr * (1.0 + 1e-9)


def test_adam_rejects_non_finite_gradient():
    params = make_net([2, 2, 1], ["relu", "linear"], seed=0)
    grads = grads_like(params, 0.0)
    grads.weights[1][0, 0] = np.nan
    with pytest.raises(TrainingError) as err:
        adam_step(AdamState.for_bundle(params), params, grads, AdamHyper())
    assert err.value.layer == 1


def test_adam_rejects_shape_mismatch():
    params = make_net([2, 2], ["linear"], seed=0)
    bad = ParamGrads([np.zeros((3, 2))], [np.zeros(2)])
    from fewshot_dml.errors import ShapeError
    with pytest.raises(ShapeError):
        adam_step(AdamState.for_bundle(params), params, bad, AdamHyper())


def test_adam_hyper_validation():
    with pytest.raises(ConfigError):
        AdamHyper(learning_rate=0.0)
    with pytest.raises(ConfigError):
        AdamHyper(beta1=1.0)


# --- finite-difference oracle ---------------------------------------------


def test_gradcheck_quadratic_loss():
    params = make_net([5, 4, 3], ["leaky_relu", "linear"], seed=3)
    randomize(params, seed=4)

    def loss(p):
        return sum(float((a * a).sum()) for a in p.arrays())

    analytic = ParamGrads([2.0 * w for w in params.weights],
                          [2.0 * b for b in params.biases])
    assert finite_diff_gradcheck(loss, params, analytic) < 1e-8


def test_gradcheck_constant_loss_is_exactly_zero():
    params = make_net([3, 2], ["relu"], seed=5)

    analytic = ParamGrads([np.zeros_like(w) for w in params.weights],
                          [np.zeros_like(b) for b in params.biases])
    assert finite_diff_gradcheck(lambda p: 7.25, params, analytic) == 0.0


def test_gradcheck_cross_entropy_classifier():
    net = make_net([4, 5, 3], ["leaky_relu", "softmax"], seed=6)
    randomize(net, seed=7)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)

    def loss(p):
        return layers.mean_cross_entropy(layers.forward(p, x).output, y)

    cache = layers.forward(net, x)
    analytic = layers.backprop(net, cache, layers.cross_entropy_probs_grad(cache.output, y))
    assert finite_diff_gradcheck(loss, net, analytic) < 1e-5


def test_gradcheck_rejects_non_finite_loss():
    params = make_net([2, 1], ["linear"], seed=9)
    analytic = grads_like(params, 0.0)
    with pytest.raises(InputError):
        finite_diff_gradcheck(lambda p: float("nan"), params, analytic)
