"""Pure-numpy kernels for dense nets.

Reference implementation of the hot training kernels.  A compiled Cython
twin (``fewshot_dml._kernels``) implements the same API; ``_backend``
picks whichever is available.  Both operate on float64 C-contiguous
arrays; weights are stored row-major as [output_dim x input_dim], so a
layer computes ``z = x @ W.T + b``.

Activation derivative convention: relu and leaky_relu use subgradient 1
at exactly z == 0.
"""

import numpy as np

BACKEND_NAME = "python"

ACT_LINEAR = 0
ACT_RELU = 1
ACT_LEAKY = 2
ACT_SOFTMAX = 3


def _act_mask(z, act, slope):
    """Elementwise derivative of the activation at pre-activation z."""
    if act == ACT_LINEAR:
        return np.ones_like(z)
    if act == ACT_RELU:
        return np.where(z >= 0.0, 1.0, 0.0)
    if act == ACT_LEAKY:
        return np.where(z >= 0.0, 1.0, slope)
    raise ValueError(f"no elementwise derivative for activation code {act}")


def softmax_rows(z):
    """Numerically stable row-wise softmax."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def net_forward(weights, biases, acts, slopes, x):
    """Run x [n x d0] through every layer.

    Returns (zs, outs): per-layer pre-activations and activations.
    """
    zs, outs = [], []
    a = x
    for w, b, act, slope in zip(weights, biases, acts, slopes):
        z = a @ w.T + b
        if act == ACT_SOFTMAX:
            a = softmax_rows(z)
        elif act == ACT_RELU:
            a = np.maximum(z, 0.0)
        elif act == ACT_LEAKY:
            a = np.where(z >= 0.0, z, slope * z)
        else:
            a = z.copy()
        zs.append(z)
        outs.append(a)
    return zs, outs


def net_backward(weights, acts, slopes, x, zs, outs, grad_out):
    """Backpropagate grad_out = dL/d(outs[-1]) through the net.

    Returns (grad_ws, grad_bs, grad_x).  Softmax layers apply the full
    Jacobian: dz = p * (da - sum(p * da)).
    """
    n_layers = len(weights)
    grad_ws = [None] * n_layers
    grad_bs = [None] * n_layers
    d = grad_out
    for l in range(n_layers - 1, -1, -1):
        act = acts[l]
        if act == ACT_SOFTMAX:
            p = outs[l]
            dz = p * (d - (p * d).sum(axis=1, keepdims=True))
        else:
            dz = d * _act_mask(zs[l], act, slopes[l])
        a_in = x if l == 0 else outs[l - 1]
        grad_ws[l] = dz.T @ a_in
        grad_bs[l] = dz.sum(axis=0)
        d = dz @ weights[l]
    return grad_ws, grad_bs, d


def input_gradients(weights, acts, slopes, zs):
    """Per-sample gradient of a scalar-output net w.r.t. its input [n x d0].

    The final layer must be linear with output dim 1; activations must be
    piecewise linear (no softmax).
    """
    n = zs[0].shape[0]
    u = np.ones((n, 1))
    for l in range(len(weights) - 1, -1, -1):
        ut = u * _act_mask(zs[l], acts[l], slopes[l])
        u = ut @ weights[l]
    return u


def gp_backward(weights, acts, slopes, zs, norm_dims, target):
    """Gradient-penalty value and its gradient w.r.t. the weights.

    Penalty = mean over the batch of (||g[:norm_dims]||_2 - target)^2 where
    g is the per-sample input gradient of the scalar-output net.  For
    piecewise-linear activations the activation masks are locally constant,
    so the penalty gradient w.r.t. every bias is exactly zero and the
    weight gradients reduce to one extra forward sweep:

        reverse:  ut_l = mask_l * u_{l+1},  u_l = ut_l @ W_l,  g = u_0
        forward:  dW_l = ut_l^T @ v_l,      v_{l+1} = mask_l * (v_l @ W_l^T)

    with v_0 = d(penalty)/dg.  Returns (penalty, grad_ws, norms).
    """
    n_layers = len(weights)
    n = zs[0].shape[0]
    uts = [None] * n_layers
    u = np.ones((n, 1))
    for l in range(n_layers - 1, -1, -1):
        ut = u * _act_mask(zs[l], acts[l], slopes[l])
        uts[l] = ut
        u = ut @ weights[l]
    g = u[:, :norm_dims]
    norms = np.sqrt((g * g).sum(axis=1))
    diffs = norms - target
    penalty = float((diffs * diffs).mean())
    # zero rows have zero gradient: the penalty is locally constant there
    scale = np.where(norms > 0.0, 2.0 * diffs / (n * np.maximum(norms, 1e-300)), 0.0)
    v = np.zeros_like(u)
    v[:, :norm_dims] = scale[:, None] * g
    grad_ws = []
    for l in range(n_layers):
        grad_ws.append(uts[l].T @ v)
        if l < n_layers - 1:
            v = (v @ weights[l].T) * _act_mask(zs[l], acts[l], slopes[l])
    return penalty, grad_ws, norms


def adam_update(params, grads, ms, vs, t, lr, beta1, beta2, eps):
    """One in-place Adam update with bias correction; t is the step after increment."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, ms, vs):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
