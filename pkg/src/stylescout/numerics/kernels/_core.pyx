# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot numeric kernels.

Signature-compatible with ``pure``; the package picks whichever imports.
All inputs are coerced to C-contiguous float64. ``adam_update`` mutates
its parameter and moment arrays in place, same as the reference.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, INFINITY

cnp.import_array()

cdef double _SQRT_2_OVER_PI = 0.7978845608028654
cdef double _GELU_C = 0.044715


cdef cnp.ndarray _as2d(object x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError("kernel expects a 1-D or 2-D array")
    return a


def layer_norm_forward(x, gamma, beta, double eps=1e-5):
    """Normalize each row of ``x`` (R, D) to zero mean / unit variance.

    Returns (y, xhat, inv_std); the latter two feed the backward pass.
    """
    cdef cnp.ndarray xa = _as2d(x)
    cdef const double[:, ::1] xv = xa
    cdef const double[::1] g = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t R = xv.shape[0], D = xv.shape[1], i, j
    y = np.empty((R, D), dtype=np.float64)
    xhat = np.empty((R, D), dtype=np.float64)
    inv_std = np.empty(R, dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef double[:, ::1] hv = xhat
    cdef double[::1] sv = inv_std
    cdef double mu, var, d, istd
    for i in range(R):
        mu = 0.0
        for j in range(D):
            mu += xv[i, j]
        mu /= D
        var = 0.0
        for j in range(D):
            d = xv[i, j] - mu
            var += d * d
        var /= D
        istd = 1.0 / sqrt(var + eps)
        sv[i] = istd
        for j in range(D):
            d = (xv[i, j] - mu) * istd
            hv[i, j] = d
            yv[i, j] = d * g[j] + b[j]
    if np.asarray(x).ndim == 1:
        return y[0], xhat[0], inv_std
    return y, xhat, inv_std


def layer_norm_backward(dy, xhat, inv_std, gamma):
    """Gradients of layer_norm_forward. Returns (dx, dgamma, dbeta)."""
    cdef const double[:, ::1] dyv = _as2d(dy)
    cdef const double[:, ::1] hv = _as2d(xhat)
    cdef const double[::1] sv = np.ascontiguousarray(inv_std, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t R = dyv.shape[0], D = dyv.shape[1], i, j
    dx = np.empty((R, D), dtype=np.float64)
    dgamma = np.zeros(D, dtype=np.float64)
    dbeta = np.zeros(D, dtype=np.float64)
    cdef double[:, ::1] dxv = dx
    cdef double[::1] dgv = dgamma
    cdef double[::1] dbv = dbeta
    cdef double m1, m2, ghat
    for i in range(R):
        m1 = 0.0
        m2 = 0.0
        for j in range(D):
            ghat = dyv[i, j] * g[j]
            m1 += ghat
            m2 += ghat * hv[i, j]
        m1 /= D
        m2 /= D
        for j in range(D):
            ghat = dyv[i, j] * g[j]
            dxv[i, j] = (ghat - m1 - hv[i, j] * m2) * sv[i]
            dgv[j] += dyv[i, j] * hv[i, j]
            dbv[j] += dyv[i, j]
    return dx, dgamma, dbeta


def masked_softmax_forward(logits, mask):
    """Row-wise softmax over the last axis with masked entries forced to 0.

    ``logits`` is (R, N) and ``mask`` a shared vector of length N. Raises
    if the mask has no true entry.
    """
    cdef const double[:, ::1] z = _as2d(logits)
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const unsigned char[::1] mv = m
    cdef Py_ssize_t R = z.shape[0], N = z.shape[1], i, j
    cdef bint any_valid = False
    for j in range(N):
        if mv[j]:
            any_valid = True
            break
    if not any_valid:
        raise ValueError("masked_softmax over an all-masked axis")
    out = np.zeros((R, N), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double zmax, total, e
    for i in range(R):
        zmax = -INFINITY
        for j in range(N):
            if mv[j] and z[i, j] > zmax:
                zmax = z[i, j]
        total = 0.0
        for j in range(N):
            if mv[j]:
                e = exp(z[i, j] - zmax)
                ov[i, j] = e
                total += e
        for j in range(N):
            if mv[j]:
                ov[i, j] /= total
    return out


def softmax_backward(dp, p):
    """Backward of a row-wise softmax: ds = p * (dp - sum(dp * p))."""
    cdef const double[:, ::1] dpv = _as2d(dp)
    cdef const double[:, ::1] pv = _as2d(p)
    cdef Py_ssize_t R = dpv.shape[0], N = dpv.shape[1], i, j
    out = np.empty((R, N), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double inner
    for i in range(R):
        inner = 0.0
        for j in range(N):
            inner += dpv[i, j] * pv[i, j]
        for j in range(N):
            ov[i, j] = pv[i, j] * (dpv[i, j] - inner)
    return out


def gelu_forward(x):
    """tanh-approximation GELU."""
    xa = np.ascontiguousarray(x, dtype=np.float64)
    flat = xa.reshape(-1)
    cdef const double[::1] xv = flat
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    cdef double v, u
    for i in range(xv.shape[0]):
        v = xv[i]
        u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
        ov[i] = 0.5 * v * (1.0 + tanh(u))
    return out.reshape(xa.shape)


def gelu_backward(dy, x):
    dya = np.ascontiguousarray(dy, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    dflat = dya.reshape(-1)
    xflat = xa.reshape(-1)
    cdef const double[::1] dv = dflat
    cdef const double[::1] xv = xflat
    out = np.empty(xflat.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    cdef double v, u, t, du
    for i in range(xv.shape[0]):
        v = xv[i]
        u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
        t = tanh(u)
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v * v)
        ov[i] = dv[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return out.reshape(xa.shape)


def sigmoid_forward(x):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    flat = xa.reshape(-1)
    cdef const double[::1] xv = flat
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    cdef double v, e
    for i in range(xv.shape[0]):
        v = xv[i]
        if v >= 0.0:
            ov[i] = 1.0 / (1.0 + exp(-v))
        else:
            e = exp(v)
            ov[i] = e / (1.0 + e)
    return out.reshape(xa.shape)


def sigmoid_backward(dy, y):
    dya = np.ascontiguousarray(dy, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    dflat = dya.reshape(-1)
    yflat = ya.reshape(-1)
    cdef const double[::1] dv = dflat
    cdef const double[::1] yv = yflat
    out = np.empty(yflat.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i
    for i in range(yv.shape[0]):
        ov[i] = dv[i] * yv[i] * (1.0 - yv[i])
    return out.reshape(ya.shape)


def masked_mean_forward(x, mask):
    """Mean of the unmasked rows of ``x`` (T, D) or (T,). Returns (mean, count)."""
    xa = np.ascontiguousarray(x, dtype=np.float64)
    one_d = xa.ndim == 1
    cdef const double[:, ::1] xv = _as2d(xa if not one_d else xa.reshape(-1, 1))
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const unsigned char[::1] mv = m
    cdef Py_ssize_t T = xv.shape[0], D = xv.shape[1], i, j
    cdef int count = 0
    for i in range(T):
        if mv[i]:
            count += 1
    if count == 0:
        raise ValueError("mean_over_mask with an all-false mask")
    mean = np.zeros(D, dtype=np.float64)
    cdef double[::1] av = mean
    for i in range(T):
        if mv[i]:
            for j in range(D):
                av[j] += xv[i, j]
    for j in range(D):
        av[j] /= count
    if one_d:
        return mean[0], count
    return mean, count


def masked_mean_backward(dmean, mask, count, out_shape):
    da = np.ascontiguousarray(dmean, dtype=np.float64).reshape(-1)
    cdef const double[::1] dv = da
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const unsigned char[::1] mv = m
    dx = np.zeros(out_shape, dtype=np.float64)
    one_d = dx.ndim == 1
    view = dx.reshape(-1, 1) if one_d else dx
    cdef double[:, ::1] ov = view
    cdef Py_ssize_t T = ov.shape[0], D = ov.shape[1], i, j
    cdef double c = <double> count
    for i in range(T):
        if mv[i]:
            for j in range(D):
                ov[i, j] = dv[j] / c
    return dx


def adam_update(p, g, m, v, t, double lr, double beta1, double beta2, double eps):
    """One bias-corrected adaptive-moment update, in place on p/m/v."""
    if not (p.flags["C_CONTIGUOUS"] and m.flags["C_CONTIGUOUS"] and v.flags["C_CONTIGUOUS"]):
        raise ValueError("adam_update needs contiguous parameter/moment arrays")
    cdef double[::1] pv = p.reshape(-1)
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64).reshape(-1)
    cdef double[::1] mv = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double bc1 = 1.0, bc2 = 1.0, mhat, vhat
    cdef long step = <long> t
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for i in range(n):
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i]
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i]
        mhat = mv[i] / bc1
        vhat = vv[i] / bc2
        pv[i] -= lr * mhat / (sqrt(vhat) + eps)
