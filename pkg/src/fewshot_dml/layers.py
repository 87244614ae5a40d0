"""Dense feed-forward networks with exact reverse-mode gradients.

Everything trains in float64.  Weights are [output_dim x input_dim] so a
layer computes ``z = x @ W.T + b``; activations are linear, relu,
leaky_relu (slope in (0,1)) or softmax (final classifier layer only).
The input-gradient and gradient-penalty operations additionally require
piecewise-linear activations and a scalar linear output, which is what a
Wasserstein critic is.

Hot loops live in the kernel backend (compiled or pure numpy); this module
owns validation, parameter containers, and the public contracts.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ConfigError, InputError, ShapeError

ACTIVATIONS = ("linear", "relu", "leaky_relu", "softmax")
_ACT_CODE = {"linear": 0, "relu": 1, "leaky_relu": 2, "softmax": 3}

# floor applied to probabilities inside cross-entropy
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "linear"
    slope: float = 0.2  # leaky_relu only

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.input_dim}x{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ConfigError(f"leaky_relu slope must be in (0,1), got {self.slope}")


def validate_chain(specs):
    """Check dimensional chaining and softmax placement for a layer stack."""
    if not specs:
        raise ConfigError("network needs at least one layer")
    for i in range(len(specs) - 1):
        if specs[i].output_dim != specs[i + 1].input_dim:
            raise ConfigError(
                f"layer {i} outputs {specs[i].output_dim} but layer {i + 1} "
                f"expects {specs[i + 1].input_dim}")
        if specs[i].activation == "softmax":
            raise ConfigError("softmax is only permitted on the final layer")


@dataclass
class ParamBundle:
    """Weights and biases of one dense network, with layer metadata."""

    specs: tuple
    weights: list  # [output_dim x input_dim] per layer
    biases: list   # [output_dim] per layer

    @property
    def input_dim(self):
        return self.specs[0].input_dim

    @property
    def output_dim(self):
        return self.specs[-1].output_dim

    def copy(self):
        return ParamBundle(self.specs, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases])

    def arrays(self):
        """All parameter arrays, weights interleaved with biases, layer order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def num_params(self):
        return sum(a.size for a in self.arrays())

    def checksum(self):
        """Order-sensitive fingerprint; equal iff parameters are bit-identical."""
        return hash(tuple(a.tobytes() for a in self.arrays()))


@dataclass
class ParamGrads:
    """Gradients shaped like a ParamBundle, plus the input gradient."""

    weights: list
    biases: list
    input_grad: np.ndarray = None

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def zero_grads(bundle):
    return ParamGrads([np.zeros_like(w) for w in bundle.weights],
                      [np.zeros_like(b) for b in bundle.biases])


def accumulate(total, grads, weight=1.0):
    """total += weight * grads, in place."""
    for t, g in zip(total.weights, grads.weights):
        t += weight * g
    for t, g in zip(total.biases, grads.biases):
        t += weight * g
    return total


def init_params(specs, seed):
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, per-seed deterministic."""
    specs = tuple(specs)
    validate_chain(specs)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for s in specs:
        limit = np.sqrt(6.0 / (s.input_dim + s.output_dim))
        weights.append(rng.uniform(-limit, limit, size=(s.output_dim, s.input_dim)))
        biases.append(np.zeros(s.output_dim))
    return ParamBundle(specs, weights, biases)


def _spec_arrays(specs):
    acts = [_ACT_CODE[s.activation] for s in specs]
    slopes = [s.slope for s in specs]
    return acts, slopes


def _as_batch(x, expected_dim, what="batch"):
    x = np.ascontiguousarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != expected_dim:
        raise ShapeError(f"{what} must be [n x {expected_dim}], got shape {x.shape}")
    return x, squeeze


@dataclass
class ForwardCache:
    """All intermediate activations of one forward pass (needed by backprop)."""

    x: np.ndarray
    zs: list
    outs: list

    @property
    def output(self):
        return self.outs[-1]


def forward(bundle, batch):
    """Run a batch through the net; returns every layer's pre/post activations."""
    x, _ = _as_batch(batch, bundle.input_dim)
    acts, slopes = _spec_arrays(bundle.specs)
    zs, outs = kernels.net_forward(bundle.weights, bundle.biases, acts, slopes, x)
    return ForwardCache(x, zs, outs)


def backprop(bundle, cache, grad_output):
    """Exact parameter gradients given dLoss/d(final activation)."""
    grad_output = np.ascontiguousarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.output.shape:
        raise ShapeError(
            f"grad_output shape {grad_output.shape} != output shape {cache.output.shape}")
    acts, slopes = _spec_arrays(bundle.specs)
    gws, gbs, gx = kernels.net_backward(bundle.weights, acts, slopes,
                                        cache.x, cache.zs, cache.outs, grad_output)
    return ParamGrads(gws, gbs, gx)


def _check_critic(bundle, op):
    if bundle.output_dim != 1:
        raise ConfigError(f"{op} requires a scalar-output net, got output dim {bundle.output_dim}")
    for s in bundle.specs:
        if s.activation == "softmax":
            raise ConfigError(f"{op} is undefined for softmax layers")
    if bundle.specs[-1].activation != "linear":
        raise ConfigError(f"{op} requires a linear final layer")


def input_gradient(bundle, points, conditions=None):
    """Per-sample gradient of a scalar critic's output w.r.t. its full input.

    ``conditions``, when given, is concatenated onto ``points`` along the
    feature axis; the result spans the concatenated input.
    """
    _check_critic(bundle, "input_gradient")
    single = np.asarray(points).ndim == 1
    if conditions is not None:
        points = np.atleast_2d(points)
        conditions = np.atleast_2d(conditions)
        points = np.concatenate([points, conditions], axis=1)
    x, squeeze = _as_batch(points, bundle.input_dim, "critic input")
    squeeze = squeeze or single
    acts, slopes = _spec_arrays(bundle.specs)
    zs, _ = kernels.net_forward(bundle.weights, bundle.biases, acts, slopes, x)
    g = kernels.input_gradients(bundle.weights, acts, slopes, zs)
    return g[0] if squeeze else g


def gp_param_gradient(bundle, interp_batch, target_norm=1.0, norm_dims=None):
    """Value and parameter gradients of mean((||grad_input||_2 - target)^2).

    The norm spans the first ``norm_dims`` input coordinates (all of them by
    default), so a conditioned critic can penalize only the interpolated
    part of its input.  Bias gradients are exactly zero for piecewise-linear
    critics; they are returned as zeros to keep ParamBundle shape.
    """
    _check_critic(bundle, "gp_param_gradient")
    x, _ = _as_batch(interp_batch, bundle.input_dim, "interpolate batch")
    if norm_dims is None:
        norm_dims = bundle.input_dim
    if not 1 <= norm_dims <= bundle.input_dim:
        raise ShapeError(f"norm_dims must be in [1, {bundle.input_dim}], got {norm_dims}")
    acts, slopes = _spec_arrays(bundle.specs)
    zs, _ = kernels.net_forward(bundle.weights, bundle.biases, acts, slopes, x)
    penalty, gws, norms = kernels.gp_backward(bundle.weights, acts, slopes, zs,
                                              int(norm_dims), float(target_norm))
    grads = ParamGrads(gws, [np.zeros_like(b) for b in bundle.biases])
    return penalty, grads, norms


def softmax(logits):
    """Stable softmax over the last axis; rows sum to 1."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        return _softmax_np(z[None, :])[0]
    return _softmax_np(z)


def _softmax_np(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, label):
    """-log(probs[label]) with the probability floored at PROB_FLOOR."""
    probs = np.asarray(probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < probs.shape[-1]:
        raise InputError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[..., label], PROB_FLOOR)))


def mean_cross_entropy(probs, labels):
    """Mean cross-entropy of a batch of probability rows against int labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        return 0.0
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise InputError(f"labels out of range for {probs.shape[1]} classes")
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def cross_entropy_probs_grad(probs, labels):
    """d(mean CE)/d(probs): -1/(n * p[label]) at each true label, else 0."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    grad = np.zeros_like(probs)
    n = len(labels)
    idx = np.arange(n)
    grad[idx, labels] = -1.0 / (n * np.maximum(probs[idx, labels], PROB_FLOOR))
    return grad
