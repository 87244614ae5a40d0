"""The compiled kernels must agree with the pure-numpy reference."""

import numpy as np
import pytest

from fewshot_dml._backend import load_backend

pure = load_backend("python")
try:
    compiled = load_backend("compiled")
except Exception:
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def random_net(seed, dims, acts, slopes=None):
    rng = np.random.default_rng(seed)
    ws = [np.ascontiguousarray(rng.normal(size=(dims[i + 1], dims[i])))
          for i in range(len(dims) - 1)]
    bs = [np.ascontiguousarray(rng.normal(size=d)) for d in dims[1:]]
    x = np.ascontiguousarray(rng.normal(size=(6, dims[0])))
    return ws, bs, acts, slopes or [0.2] * len(acts), x


CASES = [
    (0, [4, 5, 3], [2, 3]),          # leaky -> softmax
    (1, [3, 8, 8, 1], [2, 1, 0]),    # leaky -> relu -> linear critic
    (2, [2, 2], [0]),                # single linear
    (3, [5, 16, 16, 4], [1, 2, 3]),  # relu -> leaky -> softmax
]


@needs_compiled
@pytest.mark.parametrize("seed,dims,acts", CASES)
def test_forward_backward_agree(seed, dims, acts):
    ws, bs, a, s, x = random_net(seed, dims, acts)
    zc, oc = compiled.net_forward(ws, bs, a, s, x)
    zp, op = pure.net_forward(ws, bs, a, s, x)
    for c, p in zip(zc + oc, zp + op):
        np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-14)
    go = np.ascontiguousarray(np.random.default_rng(seed + 50).normal(size=oc[-1].shape))
    rc = compiled.net_backward(ws, a, s, x, zc, oc, go)
    rp = pure.net_backward(ws, a, s, x, zp, op, go)
    for cs, ps in zip(rc[:2], rp[:2]):
        for c, p in zip(cs, ps):
            np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(rc[2], rp[2], rtol=1e-12, atol=1e-14)


@needs_compiled
def test_critic_kernels_agree():
    ws, bs, a, s, x = random_net(7, [4, 9, 7, 1], [2, 2, 0])
    zc, _ = compiled.net_forward(ws, bs, a, s, x)
    zp, _ = pure.net_forward(ws, bs, a, s, x)
    np.testing.assert_allclose(compiled.input_gradients(ws, a, s, zc),
                               pure.input_gradients(ws, a, s, zp),
                               rtol=1e-12, atol=1e-14)
    for nd in (4, 2):
        pen_c, gws_c, norm_c = compiled.gp_backward(ws, a, s, zc, nd, 1.0)
        pen_p, gws_p, norm_p = pure.gp_backward(ws, a, s, zp, nd, 1.0)
        assert pen_c == pytest.approx(pen_p, rel=1e-12)
        np.testing.assert_allclose(norm_c, norm_p, rtol=1e-12)
        for c, p in zip(gws_c, gws_p):
            np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-14)


@needs_compiled
def test_adam_agree():
    rng = np.random.default_rng(9)
    shapes = [(5, 4), (5,), (1, 5), (1,)]
    params_c = [np.ascontiguousarray(rng.normal(size=sh)) for sh in shapes]
    params_p = [p.copy() for p in params_c]
    grads = [np.ascontiguousarray(rng.normal(size=sh)) for sh in shapes]
    mc = [np.zeros(sh) for sh in shapes]
    vc = [np.zeros(sh) for sh in shapes]
    mp = [np.zeros(sh) for sh in shapes]
    vp = [np.zeros(sh) for sh in shapes]
    for t in (1, 2, 3):
        compiled.adam_update(params_c, grads, mc, vc, t, 1e-3, 0.9, 0.999, 1e-8)
        pure.adam_update(params_p, grads, mp, vp, t, 1e-3, 0.9, 0.999, 1e-8)
    for c, p in zip(params_c + mc + vc, params_p + mp + vp):
        np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-15)


@needs_compiled
def test_each_backend_individually_deterministic():
    ws, bs, a, s, x = random_net(11, [3, 6, 1], [2, 0])
    for mod in (compiled, pure):
        z1, o1 = mod.net_forward(ws, bs, a, s, x)
        z2, o2 = mod.net_forward(ws, bs, a, s, x)
        for p, q in zip(z1 + o1, z2 + o2):
            assert np.array_equal(p, q)
