"""Numpy reference implementations of the hot numeric kernels.

Signature-compatible with the compiled extension in ``_core``; the package
selects one backend at import time. Everything is float64.
"""

from __future__ import annotations

import numpy as np

_SQRT_2_OVER_PI = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def layer_norm_forward(x, gamma, beta, eps=1e-5):
    """Normalize each row of ``x`` (R, D) to zero mean / unit variance.

    Returns (y, xhat, inv_std); the latter two feed the backward pass.
    """
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gamma + beta, xhat, inv_std[..., 0]


def layer_norm_backward(dy, xhat, inv_std, gamma):
    """Gradients of layer_norm_forward. Returns (dx, dgamma, dbeta)."""
    ghat = dy * gamma
    m1 = ghat.mean(axis=-1, keepdims=True)
    m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
    dx = (ghat - m1 - xhat * m2) * inv_std[..., None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return dx, dgamma, dbeta


def masked_softmax_forward(logits, mask):
    """Row-wise softmax over the last axis with masked entries forced to 0.

    ``logits`` is (R, N) and ``mask`` a uint8/bool vector of length N shared
    by all rows. Raises if the mask has no true entry.
    """
    valid = mask.astype(bool)
    if not valid.any():
        raise ValueError("masked_softmax over an all-masked axis")
    z = np.where(valid, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    e = np.where(valid, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dp, p):
    """Backward of a row-wise softmax: ds = p * (dp - sum(dp * p))."""
    inner = (dp * p).sum(axis=-1, keepdims=True)
    return p * (dp - inner)


def gelu_forward(x):
    """tanh-approximation GELU."""
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(dy, x):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)


def masked_mean_forward(x, mask):
    """Mean of the unmasked rows of ``x`` (T, D) or (T,). Returns (mean, count)."""
    valid = mask.astype(bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("mean_over_mask with an all-false mask")
    return x[valid].sum(axis=0) / count, count


def masked_mean_backward(dmean, mask, count, out_shape):
    valid = mask.astype(bool)
    dx = np.zeros(out_shape, dtype=np.float64)
    dx[valid] = dmean / count
    return dx


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected adaptive-moment update, in place on p/m/v."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
