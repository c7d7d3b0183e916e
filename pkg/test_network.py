"""
Tests for the dense network engine, the gradient reversal layer and the
Nesterov optimizer.

Gradient checks compare backprop against central finite differences
(eps = 1e-5, relative tolerance 1e-4) on small float64 networks.
"""
import numpy as np
import numpy.testing as npt
import pytest

from engines.network import (
    DenseLayer,
    Mlp,
    dropout_forward,
    glorot_uniform_init,
    grl_backward,
    grl_forward,
    relu,
    softmax,
)
from engines.objective import (
    DomainBatch,
    LabeledBatch,
    cross_entropy_logit_grad,
    weighted_domain_loss,
    weighted_domain_loss_grad,
    weighted_label_loss,
    weighted_label_loss_grad,
)
from engines.optimizer import OptimizerState, sgd_nesterov_step
from models.schemas import Activation, Mode
from utils.errors import InvalidArgumentError, InvariantViolationError, ShapeError

EPS = 1e-5
RTOL = 1e-4
ATOL = 1e-8


def numeric_gradient(loss_fn, param: np.ndarray) -> np.ndarray:
    """Central differences of loss_fn() w.r.t. every entry of param (mutated in place, then restored)."""
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        original = param[idx]
        param[idx] = original + EPS
        plus = loss_fn()
        param[idx] = original - EPS
        minus = loss_fn()
        param[idx] = original
        grad[idx] = (plus - minus) / (2 * EPS)
    return grad


# Central differences straddle a ReLU kink whenever a pre-activation sits
# within a perturbation of zero; checked setups keep every |z| above this.
KINK_MARGIN = 1e-3
MAX_DRAWS = 50


def offset_biases(net: Mlp, rng: np.random.Generator) -> Mlp:
    """Nonzero biases of random sign, so fully dropped rows never land on z = 0."""
    for layer in net.layers:
        layer.bias[:] = rng.uniform(0.1, 0.5, size=layer.fan_out) * rng.choice([-1.0, 1.0], size=layer.fan_out)
    return net


def relu_margin(net: Mlp, *traces) -> float:
    return min(
        float(np.abs(z).min())
        for trace in traces
        for layer, z in zip(net.layers, trace.pre_activations)
        if layer.activation is Activation.RELU
    )


def draw_away_from_kinks(draw, margin):
    """Call draw() until margin(setup) clears KINK_MARGIN; draw consumes a seeded rng, so this is deterministic."""
    for _ in range(MAX_DRAWS):
        setup = draw()
        if margin(setup) > KINK_MARGIN:
            return setup
    pytest.fail(f"no setup with every ReLU pre-activation beyond {KINK_MARGIN} in {MAX_DRAWS} draws")


# =============================================================================
# Initialization & elementwise ops
# =============================================================================

GLOROT_CASES = [
    {"name": "1x1", "fan_in": 1, "fan_out": 1, "limit": np.sqrt(3.0)},
    {"name": "3x3", "fan_in": 3, "fan_out": 3, "limit": 1.0},
    {"name": "8x16", "fan_in": 8, "fan_out": 16, "limit": np.sqrt(6.0 / 24)},
]


@pytest.mark.parametrize("case", GLOROT_CASES, ids=lambda c: c["name"])
def test_glorot_bounds(case, rng):
    weights = glorot_uniform_init(case["fan_in"], case["fan_out"], rng)
    assert weights.shape == (case["fan_in"], case["fan_out"])
    assert np.all(np.abs(weights) <= case["limit"])


def test_glorot_moments(rng):
    weights = glorot_uniform_init(1024, 1024, rng)
    assert abs(weights.mean()) < 0.01
    assert np.abs(weights).max() <= np.sqrt(6.0 / 2048)


@pytest.mark.parametrize("fans", [(0, 3), (3, 0)])
def test_glorot_rejects_zero_fans(fans, rng):
    with pytest.raises(InvalidArgumentError):
        glorot_uniform_init(*fans, rng)


def test_relu(rng):
    npt.assert_array_equal(relu(np.array([[-1.0, 0.0, 2.0]])), [[0.0, 0.0, 2.0]])
    x = rng.normal(size=(5, 7))
    npt.assert_array_equal(relu(np.abs(x)), np.abs(x))
    npt.assert_array_equal(relu(relu(x)), relu(x))


SOFTMAX_CASES = [
    {"name": "symmetric", "logits": [[0.0, 0.0]], "expected": [[0.5, 0.5]]},
    {"name": "large", "logits": [[1000.0, 1000.0, 1000.0]], "expected": [[1 / 3, 1 / 3, 1 / 3]]},
    {"name": "log-ratios", "logits": [[np.log(1), np.log(2), np.log(3)]], "expected": [[1 / 6, 2 / 6, 3 / 6]]},
]


@pytest.mark.parametrize("case", SOFTMAX_CASES, ids=lambda c: c["name"])
def test_softmax_cases(case):
    npt.assert_allclose(softmax(np.array(case["logits"])), case["expected"], rtol=0, atol=1e-12)


def test_softmax_rows_sum_to_one_at_large_magnitudes(rng):
    logits = rng.uniform(-1000, 1000, size=(200, 6))
    probs = softmax(logits)
    assert np.all(np.isfinite(probs))
    npt.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_dropout_noop_cases(rng):
    x = rng.normal(size=(4, 5))
    out, mask = dropout_forward(x, 0.0, rng, Mode.TRAIN)
    assert out is x and mask is None
    out, mask = dropout_forward(x, 0.5, rng, Mode.EVAL)
    assert out is x and mask is None


def test_dropout_preserves_expectation(rng):
    x = np.ones((100, 1000))
    out, mask = dropout_forward(x, 0.5, rng, Mode.TRAIN)
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(mask)) <= {0.0, 2.0}


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_rejects_bad_rates(rate, rng):
    with pytest.raises(InvalidArgumentError):
        dropout_forward(np.ones((2, 2)), rate, rng, Mode.TRAIN)


# =============================================================================
# Forward / backward
# =============================================================================

def test_identity_layer_passes_input_through(rng):
    net = Mlp([DenseLayer(np.eye(3), np.zeros(3), Activation.IDENTITY)])
    x = rng.normal(size=(4, 3))
    npt.assert_array_equal(net.forward(x).output, x)


def test_zero_input_gives_bias_driven_softmax(rng):
    net = Mlp.build([3, 4, 2], rng)
    net.layers[0].bias[:] = [0.5, -1.0, 2.0, 0.0]
    net.layers[1].bias[:] = [0.3, -0.3]
    hidden = relu(net.layers[0].bias)
    expected = softmax((hidden @ net.layers[1].weights + net.layers[1].bias)[None, :])
    npt.assert_allclose(net.predict(np.zeros((1, 3))), expected, rtol=0, atol=1e-15)


def test_train_forward_is_deterministic_given_rng_state():
    net = Mlp.build([5, 8, 8, 3], np.random.default_rng(0), dropout_rate=0.5)
    x = np.random.default_rng(1).normal(size=(6, 5))
    first = net.forward(x, np.random.default_rng(99)).output
    second = net.forward(x, np.random.default_rng(99)).output
    npt.assert_array_equal(first, second)


def test_forward_shape_error_names_layer(rng):
    net = Mlp.build([4, 6, 3], rng)
    with pytest.raises(ShapeError, match="layer 0"):
        net.forward(np.zeros((2, 5)))


def test_layers_must_chain(rng):
    with pytest.raises(ShapeError):
        Mlp([
            DenseLayer(np.zeros((4, 6)), np.zeros(6)),
            DenseLayer(np.zeros((5, 3)), np.zeros(3)),
        ])


def test_zero_grad_output_gives_zero_gradients(rng):
    net = Mlp.build([4, 6, 6, 3], rng)
    trace = net.forward(rng.normal(size=(5, 4)), mode=Mode.EVAL)
    grads = net.backward(trace, np.zeros_like(trace.output))
    for g in grads.as_list():
        npt.assert_array_equal(g, 0.0)


def test_stale_trace_is_rejected(rng):
    first = Mlp.build([4, 6, 3], rng)
    second = Mlp.build([4, 5, 3], rng)
    trace = first.forward(rng.normal(size=(2, 4)))
    with pytest.raises(InvariantViolationError):
        second.backward(trace, np.ones_like(trace.output))


def test_softmax_cross_entropy_logit_gradient(rng):
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    probs = softmax(logits)
    onehot = np.eye(4)[labels]
    npt.assert_allclose(cross_entropy_logit_grad(probs, labels), (probs - onehot) / 6, atol=1e-15)

    def loss():
        p = softmax(logits)
        return -np.mean(np.log(p[np.arange(6), labels]))

    npt.assert_allclose(cross_entropy_logit_grad(probs, labels), numeric_gradient(loss, logits), rtol=RTOL, atol=ATOL)


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    """Unfused path: an arbitrary linear functional of the softmax output."""
    rng = np.random.default_rng(seed)

    def draw():
        net = offset_biases(Mlp.build([5, 8, 8, 4], rng), rng)
        return net, rng.normal(size=(7, 5))

    net, x = draw_away_from_kinks(draw, lambda s: relu_margin(s[0], s[0].forward(s[1], mode=Mode.EVAL)))
    weights = rng.normal(size=(7, 4))

    def loss():
        return float(np.sum(net.forward(x, mode=Mode.EVAL).output * weights))

    grads = net.backward(net.forward(x, mode=Mode.EVAL), weights)
    for param, analytic in zip(net.parameters(), grads.as_list()):
        npt.assert_allclose(analytic, numeric_gradient(loss, param), rtol=RTOL, atol=ATOL)


@pytest.mark.parametrize("seed", range(3))
def test_backward_with_fixed_dropout_masks(seed):
    """TRAIN mode is differentiable too when every evaluation replays the same masks."""
    rng = np.random.default_rng(seed)

    def forward(net, x):
        return net.forward(x, np.random.default_rng(1000 + seed), mode=Mode.TRAIN)

    def draw():
        net = offset_biases(Mlp.build([5, 8, 8, 3], rng, dropout_rate=0.5), rng)
        return net, rng.normal(size=(6, 5))

    net, x = draw_away_from_kinks(draw, lambda s: relu_margin(s[0], forward(*s)))
    labels = rng.integers(0, 3, size=6)
    batch = LabeledBatch(features=x, labels=labels, instance_weights=np.ones(6))

    def loss():
        return weighted_label_loss(forward(net, x).output, batch)

    trace = forward(net, x)
    assert any(mask is not None and (mask == 0).any() for mask in trace.masks)
    grads = net.backward(trace, weighted_label_loss_grad(trace.output, batch), wrt_logits=True)
    for param, analytic in zip(net.parameters(), grads.as_list()):
        npt.assert_allclose(analytic, numeric_gradient(loss, param), rtol=RTOL, atol=ATOL)


@pytest.mark.parametrize("seed", range(20))
def test_lad_model_gradients(seed):
    """
    Classifier 8->16->16->5 and discriminator 5->16->16->2: gradients of the
    weighted source loss and of the GRL-composed domain loss. Through the
    reversal layer the classifier receives exactly the negated gradient.
    """
    rng = np.random.default_rng(seed)

    def draw():
        classifier = offset_biases(Mlp.build([8, 16, 16, 5], rng), rng)
        discriminator = offset_biases(Mlp.build([5, 16, 16, 2], rng), rng)
        return classifier, discriminator, rng.normal(size=(6, 8)), rng.normal(loc=0.5, size=(5, 8))

    def margin(setup):
        classifier, discriminator, xs, xt = setup
        both = classifier.forward(np.vstack([xs, xt]), mode=Mode.EVAL)
        return min(
            relu_margin(classifier, both),
            relu_margin(discriminator, discriminator.forward(both.output, mode=Mode.EVAL)),
        )

    classifier, discriminator, xs, xt = draw_away_from_kinks(draw, margin)
    ys = rng.integers(0, 5, size=6)
    ws, wt = rng.uniform(0.5, 3.0, size=6), rng.uniform(0.5, 3.0, size=5)

    label_batch = LabeledBatch(features=xs, labels=ys, instance_weights=ws)
    trace = classifier.forward(xs, mode=Mode.EVAL)
    grads = classifier.backward(trace, weighted_label_loss_grad(trace.output, label_batch), wrt_logits=True)

    def label_loss():
        return weighted_label_loss(classifier.forward(xs, mode=Mode.EVAL).output, label_batch)

    for param, analytic in zip(classifier.parameters(), grads.as_list()):
        npt.assert_allclose(analytic, numeric_gradient(label_loss, param), rtol=RTOL, atol=ATOL)

    domain_batch = DomainBatch.concat(xs, ws, xt, wt)

    def domain_loss():
        probs = classifier.forward(domain_batch.features, mode=Mode.EVAL).output
        return weighted_domain_loss(discriminator.forward(grl_forward(probs), mode=Mode.EVAL).output, domain_batch)

    class_trace = classifier.forward(domain_batch.features, mode=Mode.EVAL)
    domain_trace = discriminator.forward(grl_forward(class_trace.output), mode=Mode.EVAL)
    domain_grads = discriminator.backward(
        domain_trace, weighted_domain_loss_grad(domain_trace.output, domain_batch), wrt_logits=True
    )
    reversed_grads = classifier.backward(class_trace, grl_backward(domain_grads.inputs))

    for param, analytic in zip(discriminator.parameters(), domain_grads.as_list()):
        npt.assert_allclose(analytic, numeric_gradient(domain_loss, param), rtol=RTOL, atol=ATOL)
    for param, analytic in zip(classifier.parameters(), reversed_grads.as_list()):
        npt.assert_allclose(analytic, -numeric_gradient(domain_loss, param), rtol=RTOL, atol=ATOL)


# =============================================================================
# Gradient reversal
# =============================================================================

def test_grl():
    g = np.array([[1.0, -2.0]])
    npt.assert_array_equal(grl_backward(g), [[-1.0, 2.0]])
    npt.assert_array_equal(grl_backward(np.zeros((2, 2))), 0.0)
    npt.assert_array_equal(grl_backward(grl_backward(g)), g)
    assert grl_forward(g) is g


# =============================================================================
# Optimizer
# =============================================================================

def test_zero_momentum_is_plain_sgd(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    grads = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    expected = [p - 0.1 * g for p, g in zip(params, grads)]
    sgd_nesterov_step(params, grads, OptimizerState.zeros_like(params, 0.1, 0.0))
    for p, e in zip(params, expected):
        npt.assert_allclose(p, e, rtol=0, atol=1e-15)


def test_zero_gradient_leaves_params_unchanged(rng):
    params = [rng.normal(size=(4, 4))]
    before = params[0].copy()
    sgd_nesterov_step(params, [np.zeros((4, 4))], OptimizerState.zeros_like(params, 0.1, 0.9))
    npt.assert_array_equal(params[0], before)


def test_nesterov_scalar_two_steps():
    p = [np.array([1.0])]
    state = OptimizerState.zeros_like(p, 0.1, 0.9)
    sgd_nesterov_step(p, [np.array([1.0])], state)
    # v = -0.1; p = 1 + 0.9 * -0.1 - 0.1
    npt.assert_allclose(p[0], [0.81], atol=1e-15)
    sgd_nesterov_step(p, [np.array([1.0])], state)
    # v = 0.9 * -0.1 - 0.1 = -0.19; p = 0.81 + 0.9 * -0.19 - 0.1
    npt.assert_allclose(state.velocity[0], [-0.19], atol=1e-15)
    npt.assert_allclose(p[0], [0.539], atol=1e-15)


def test_optimizer_rejects_mismatches():
    params = [np.zeros((2, 2))]
    state = OptimizerState.zeros_like(params, 0.1, 0.9)
    with pytest.raises(InvalidArgumentError):
        sgd_nesterov_step(params, [np.zeros((2, 3))], state)
    with pytest.raises(InvalidArgumentError):
        sgd_nesterov_step(params, [], state)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_nesterov_matches_reference_update_and_reuses_buffers(dtype, rng):
    params = [rng.normal(size=(64, 32)).astype(dtype), rng.normal(size=32).astype(dtype)]
    expected = [p.astype(np.float64) for p in params]
    velocity = [np.zeros_like(p) for p in expected]
    state = OptimizerState.zeros_like(params, 0.01, 0.9)

    buffers = None
    for _ in range(5):
        grads = [rng.normal(size=p.shape).astype(dtype) for p in params]
        for e, v, g in zip(expected, velocity, grads):
            v[...] = 0.9 * v - 0.01 * g
            e[...] = e + 0.9 * v - 0.01 * g
        sgd_nesterov_step(params, grads, state)
        if buffers is None:
            buffers = [id(b) for b in state.scratch]
        assert [id(b) for b in state.scratch] == buffers

    tolerance = 1e-12 if dtype == np.float64 else 1e-5
    for p, e in zip(params, expected):
        assert p.dtype == dtype
        npt.assert_allclose(p, e, rtol=0, atol=tolerance)
    for v, e in zip(state.velocity, velocity):
        npt.assert_allclose(v, e, rtol=0, atol=tolerance)


def test_backward_can_skip_the_input_gradient(rng):
    net = Mlp.build([4, 6, 3], rng)
    trace = net.forward(rng.normal(size=(5, 4)), mode=Mode.EVAL)
    grad = rng.normal(size=(5, 3))
    full = net.backward(trace, grad)
    params_only = net.backward(trace, grad, input_grad=False)
    assert params_only.inputs is None and full.inputs.shape == (5, 4)
    for a, b in zip(full.as_list(), params_only.as_list()):
        npt.assert_array_equal(a, b)


def test_non_finite_output_is_an_invariant_violation(rng, caplog):
    net = Mlp.build([2, 3, 2], rng)
    net.layers[0].weights[:] = np.nan
    with pytest.raises(InvariantViolationError, match="NaN or Inf"):
        net.forward(np.ones((1, 2)))
    assert "Non-finite" in caplog.text
