"""Differentiable-computation kernel: tensors, reverse-mode gradients, optimizer."""

from .autodiff import (
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    embedding_lookup,
    exp,
    gelu,
    gradient_check,
    layer_norm,
    log,
    masked_softmax,
    matmul,
    mean_over_mask,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    take_rows,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .kernels import BACKEND
from .optim import Adam, NonFiniteGradientError, optimizer_step
from .store import FrozenStoreError, ParamStore

__all__ = [
    "Adam",
    "BACKEND",
    "FrozenStoreError",
    "NonFiniteGradientError",
    "ParamStore",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "clamp",
    "concat",
    "embedding_lookup",
    "exp",
    "gelu",
    "gradient_check",
    "layer_norm",
    "log",
    "masked_softmax",
    "matmul",
    "mean_over_mask",
    "mul",
    "neg",
    "optimizer_step",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "sub",
    "take_rows",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
]
