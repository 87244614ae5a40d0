# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for dense nets.

Same API and numerical conventions as ``_kernels_py`` (the pure-numpy
reference); matmuls go through BLAS dgemm, elementwise work is fused into
C loops.  See the reference module for the math.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "compiled"

ACT_LINEAR = 0
ACT_RELU = 1
ACT_LEAKY = 2
ACT_SOFTMAX = 3

cdef enum:
    _LINEAR = 0
    _RELU = 1
    _LEAKY = 2
    _SOFTMAX = 3


cdef void _gemm(char ta, char tb, int m, int n, int k, double alpha,
                double* a, int lda, double* b, int ldb,
                double beta, double* c, int ldc) noexcept nogil:
    if m == 0 or n == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


# Row-major helpers built on the usual operand-swap trick.

cdef void _mm_x_wt(double[:, ::1] x, double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # out[n,o] = x[n,i] @ w[o,i]^T
    cdef int n = x.shape[0], i = x.shape[1], o = w.shape[0]
    _gemm(b'T', b'N', o, n, i, 1.0, &w[0, 0], i, &x[0, 0], i, 0.0, &out[0, 0], o)


cdef void _mm_dzt_x(double[:, ::1] dz, double[:, ::1] x, double[:, ::1] out) noexcept nogil:
    # out[o,i] = dz[n,o]^T @ x[n,i]
    cdef int n = dz.shape[0], o = dz.shape[1], i = x.shape[1]
    _gemm(b'N', b'T', i, o, n, 1.0, &x[0, 0], i, &dz[0, 0], o, 0.0, &out[0, 0], i)


cdef void _mm_dz_w(double[:, ::1] dz, double[:, ::1] w, double[:, ::1] out) noexcept nogil:
    # out[n,i] = dz[n,o] @ w[o,i]
    cdef int n = dz.shape[0], o = dz.shape[1], i = w.shape[1]
    _gemm(b'N', b'N', i, n, o, 1.0, &w[0, 0], i, &dz[0, 0], o, 0.0, &out[0, 0], i)


cdef void _activate(double[:, ::1] z, double[:, ::1] out, int act, double slope) noexcept nogil:
    cdef Py_ssize_t r, c
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    cdef double v, mx, s
    if act == _SOFTMAX:
        for r in range(n):
            mx = z[r, 0]
            for c in range(1, d):
                if z[r, c] > mx:
                    mx = z[r, c]
            s = 0.0
            for c in range(d):
                v = exp(z[r, c] - mx)
                out[r, c] = v
                s += v
            for c in range(d):
                out[r, c] /= s
        return
    for r in range(n):
        for c in range(d):
            v = z[r, c]
            if act == _RELU:
                out[r, c] = v if v > 0.0 else 0.0
            elif act == _LEAKY:
                out[r, c] = v if v >= 0.0 else slope * v
            else:
                out[r, c] = v


cdef void _mask_mul(double[:, ::1] src, double[:, ::1] z, double[:, ::1] out,
                    int act, double slope) noexcept nogil:
    # out = src * activation'(z), subgradient 1 at z == 0 for relu/leaky
    cdef Py_ssize_t r, c
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    for r in range(n):
        for c in range(d):
            if act == _LINEAR:
                out[r, c] = src[r, c]
            elif act == _RELU:
                out[r, c] = src[r, c] if z[r, c] >= 0.0 else 0.0
            else:
                out[r, c] = src[r, c] if z[r, c] >= 0.0 else slope * src[r, c]


cdef void _softmax_jacobian(double[:, ::1] p, double[:, ::1] d, double[:, ::1] out) noexcept nogil:
    # out = p * (d - rowsum(p * d))
    cdef Py_ssize_t r, c
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    cdef double dot
    for r in range(n):
        dot = 0.0
        for c in range(k):
            dot += p[r, c] * d[r, c]
        for c in range(k):
            out[r, c] = p[r, c] * (d[r, c] - dot)


def net_forward(weights, biases, acts, slopes, x):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, r, c
    cdef double[:, ::1] a = x
    cdef double[:, ::1] w, zv, ov
    cdef double[::1] bv
    zs, outs = [], []
    for l in range(n_layers):
        w = weights[l]
        bv = biases[l]
        z = np.empty((a.shape[0], w.shape[0]))
        zv = z
        _mm_x_wt(a, w, zv)
        for r in range(zv.shape[0]):
            for c in range(zv.shape[1]):
                zv[r, c] += bv[c]
        out = np.empty_like(z)
        ov = out
        _activate(zv, ov, acts[l], slopes[l])
        zs.append(z)
        outs.append(out)
        a = ov
    return zs, outs


def net_backward(weights, acts, slopes, x, zs, outs, grad_out):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l
    grad_ws = [None] * n_layers
    grad_bs = [None] * n_layers
    cdef double[:, ::1] d = grad_out
    cdef double[:, ::1] w, zv, dz_v, gw_v, a_in, nd_v
    cdef double[::1] gb_v
    cdef Py_ssize_t r, c
    for l in range(n_layers - 1, -1, -1):
        w = weights[l]
        zv = zs[l]
        dz = np.empty((zv.shape[0], zv.shape[1]))
        dz_v = dz
        if acts[l] == _SOFTMAX:
            _softmax_jacobian(outs[l], d, dz_v)
        else:
            _mask_mul(d, zv, dz_v, acts[l], slopes[l])
        a_in = x if l == 0 else outs[l - 1]
        gw = np.empty((w.shape[0], w.shape[1]))
        gw_v = gw
        _mm_dzt_x(dz_v, a_in, gw_v)
        gb = np.zeros(w.shape[0])
        gb_v = gb
        for r in range(dz_v.shape[0]):
            for c in range(dz_v.shape[1]):
                gb_v[c] += dz_v[r, c]
        grad_ws[l] = gw
        grad_bs[l] = gb
        nd = np.empty((dz_v.shape[0], w.shape[1]))
        nd_v = nd
        _mm_dz_w(dz_v, w, nd_v)
        d = nd_v
    return grad_ws, grad_bs, np.asarray(d)


def input_gradients(weights, acts, slopes, zs):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l
    cdef double[:, ::1] z0 = zs[0]
    cdef Py_ssize_t n = z0.shape[0]
    u = np.ones((n, 1))
    cdef double[:, ::1] uv = u, w, zv, ut_v, nu_v
    for l in range(n_layers - 1, -1, -1):
        w = weights[l]
        zv = zs[l]
        ut = np.empty((n, zv.shape[1]))
        ut_v = ut
        _mask_mul(uv, zv, ut_v, acts[l], slopes[l])
        nu = np.empty((n, w.shape[1]))
        nu_v = nu
        _mm_dz_w(ut_v, w, nu_v)
        u = nu
        uv = nu_v
    return u


def gp_backward(weights, acts, slopes, zs, norm_dims, target):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l, r, c
    cdef double[:, ::1] z0 = zs[0]
    cdef Py_ssize_t n = z0.shape[0]
    cdef int nd = norm_dims
    cdef double tgt = target
    uts = [None] * n_layers
    u = np.ones((n, 1))
    cdef double[:, ::1] uv = u, w, zv, ut_v, nu_v, vv, nv_v, gw_v
    for l in range(n_layers - 1, -1, -1):
        w = weights[l]
        zv = zs[l]
        ut = np.empty((n, zv.shape[1]))
        ut_v = ut
        _mask_mul(uv, zv, ut_v, acts[l], slopes[l])
        uts[l] = ut
        nu = np.empty((n, w.shape[1]))
        nu_v = nu
        _mm_dz_w(ut_v, w, nu_v)
        u = nu
        uv = nu_v
    norms = np.empty(n)
    cdef double[::1] norms_v = norms
    cdef double s, penalty = 0.0, diff, scale
    v = np.zeros((n, uv.shape[1]))
    vv = v
    for r in range(n):
        s = 0.0
        for c in range(nd):
            s += uv[r, c] * uv[r, c]
        s = sqrt(s)
        norms_v[r] = s
        diff = s - tgt
        penalty += diff * diff
        if s > 0.0:
            scale = 2.0 * diff / (n * s)
            for c in range(nd):
                vv[r, c] = scale * uv[r, c]
    penalty /= n
    grad_ws = []
    for l in range(n_layers):
        w = weights[l]
        ut_v = uts[l]
        gw = np.empty((w.shape[0], w.shape[1]))
        gw_v = gw
        _mm_dzt_x(ut_v, vv, gw_v)
        grad_ws.append(gw)
        if l < n_layers - 1:
            nv = np.empty((n, w.shape[0]))
            nv_v = nv
            _mm_x_wt(vv, w, nv_v)
            _mask_mul(nv_v, zs[l], nv_v, acts[l], slopes[l])
            v = nv
            vv = nv_v
    return penalty, grad_ws, norms


def adam_update(params, grads, ms, vs, t, lr, beta1, beta2, eps):
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double b1 = beta1, b2 = beta2, rate = lr, e = eps
    cdef double g
    cdef Py_ssize_t i, j
    cdef double[::1] pf, gf, mf, vf
    for i in range(len(params)):
        pa = np.ravel(params[i])
        ga = np.ravel(grads[i])
        ma = np.ravel(ms[i])
        va = np.ravel(vs[i])
        pf, gf, mf, vf = pa, ga, ma, va
        for j in range(pf.shape[0]):
            g = gf[j]
            mf[j] = b1 * mf[j] + (1.0 - b1) * g
            vf[j] = b2 * vf[j] + (1.0 - b2) * g * g
            pf[j] -= rate * (mf[j] / c1) / (sqrt(vf[j] / c2) + e)
