"""Reverse-mode automatic differentiation over float64 numpy arrays.

A forward pass dynamically records the operation graph in the tensors'
parent links; :func:`backward` walks it once in reverse topological order
and accumulates gradients. The tape is rebuilt for every forward pass, so
graphs for different clips are fully independent.

Masked operations give masked positions exactly zero weight, forward and
backward, which is what makes encoder outputs independent of padding.
"""

from __future__ import annotations

import numpy as np

from . import kernels as K


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=tuple(parents) if requires else (),
        _backward=backward_fn if requires else None,
    )


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every reachable node."""
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    # Iterative DFS; graphs can be deep for long event sequences.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss._accumulate(np.ones((), dtype=np.float64))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def back(g):
        a._accumulate(g * c)

    return _node(a.data * c, (a,), back)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def matmul(a, b) -> Tensor:
    """Matrix product; supports 2D and stacked 3D operands."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            ga = np.matmul(g, b.data.swapaxes(-1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(out_data, (a, b), back)


# ------------------------------------------------------------ nonlinearities


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = K.sigmoid_forward(a.data)

    def back(g):
        a._accumulate(K.sigmoid_backward(g, y))

    return _node(y, (a,), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def back(g):
        a._accumulate(g * (1.0 - y * y))

    return _node(y, (a,), back)


def relu(a) -> Tensor:
    a = as_tensor(a)
    y = np.maximum(a.data, 0.0)

    def back(g):
        a._accumulate(g * (a.data > 0))

    return _node(y, (a,), back)


def gelu(a) -> Tensor:
    a = as_tensor(a)
    y = K.gelu_forward(a.data)

    def back(g):
        a._accumulate(K.gelu_backward(g, a.data))

    return _node(y, (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)
    y = np.log(a.data)

    def back(g):
        a._accumulate(g / a.data)

    return _node(y, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def back(g):
        a._accumulate(g * y)

    return _node(y, (a,), back)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero where the clip binds."""
    a = as_tensor(a)
    y = np.clip(a.data, lo, hi)

    def back(g):
        inside = (a.data > lo) & (a.data < hi)
        a._accumulate(g * inside)

    return _node(y, (a,), back)


# ------------------------------------------------------- structural ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def back(g):
        a._accumulate(g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), back)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        a._accumulate(g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), back)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t._accumulate(g[tuple(idx)])

    return _node(out_data, tensors, back)


def take_rows(a, indices) -> Tensor:
    """Select rows along axis 0; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def back(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        a._accumulate(da)

    return _node(a.data[idx], (a,), back)


def embedding_lookup(table, indices) -> Tensor:
    """Gather embedding rows for integer ``indices``."""
    return take_rows(table, indices)


# ------------------------------------------------------------- reductions


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _node(out_data, (a,), back)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def back(g):
        a._accumulate(np.full(a.data.shape, float(g) / n))

    return _node(a.data.mean(), (a,), back)


def mean_over_mask(a, mask) -> Tensor:
    """Mean of the unmasked leading-axis entries of ``a`` ((T,) or (T, D))."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    out_data, count = K.masked_mean_forward(a.data, mask)

    def back(g):
        a._accumulate(K.masked_mean_backward(g, mask, count, a.data.shape))

    return _node(out_data, (a,), back)


def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis; masked entries get exactly zero weight.

    ``mask`` is a boolean vector over the last axis, shared by all rows.
    """
    a = as_tensor(logits)
    mask = np.asarray(mask, dtype=np.uint8)
    flat = np.ascontiguousarray(a.data.reshape(-1, a.data.shape[-1]))
    probs = K.masked_softmax_forward(flat, mask).reshape(a.data.shape)

    def back(g):
        gflat = np.ascontiguousarray(g.reshape(-1, g.shape[-1]))
        pflat = probs.reshape(-1, probs.shape[-1])
        a._accumulate(K.softmax_backward(gflat, pflat).reshape(a.data.shape))

    return _node(probs, (a,), back)


def layer_norm(a, gamma, beta, eps=1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis of a 2D input."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    y, xhat, inv_std = K.layer_norm_forward(
        np.ascontiguousarray(a.data), gamma.data, beta.data
    )

    def back(g):
        dx, dgamma, dbeta = K.layer_norm_backward(np.ascontiguousarray(g), xhat, inv_std, gamma.data)
        if a.requires_grad:
            a._accumulate(dx)
        if gamma.requires_grad:
            gamma._accumulate(dgamma)
        if beta.requires_grad:
            beta._accumulate(dbeta)

    return _node(y, (a, gamma, beta), back)


# ------------------------------------------------------------ verification


def gradient_check(build_loss, tensors, rng, coords_per_tensor=None, h=1e-4):
    """Compare analytic gradients against central differences.

    ``build_loss()`` must rebuild the graph from ``tensors`` (a dict of
    name -> Tensor leaves) and return the scalar loss. Returns the largest
    relative error |analytic - cd| / (|cd| + 1e-8) over the checked
    coordinates.
    """
    for t in tensors.values():
        t.grad = None
    loss = build_loss()
    backward(loss)
    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if coords_per_tensor is None or coords_per_tensor >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=coords_per_tensor, replace=False)
        analytic = np.zeros_like(flat) if t.grad is None else t.grad.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = build_loss().item()
            flat[c] = orig - h
            down = build_loss().item()
            flat[c] = orig
            cd = (up - down) / (2.0 * h)
            rel = abs(analytic[c] - cd) / (abs(cd) + 1e-8)
            worst = max(worst, rel)
    return worst
