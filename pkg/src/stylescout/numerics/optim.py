"""First-order optimizer: per-parameter adaptive moments with bias correction."""

from __future__ import annotations

import numpy as np

from . import kernels as K
from .store import FrozenStoreError, ParamStore


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or inf; the step was rejected."""


class Adam:
    """Deterministic adaptive-moment updates over a :class:`ParamStore`.

    Moment state lives on the optimizer, keyed by parameter name; it is
    created lazily so parameters registered after construction are covered.
    """

    def __init__(self, store: ParamStore, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update from ``grads`` (default: each tensor's .grad).

        Parameters with no gradient are left untouched. Any non-finite
        gradient rejects the whole step.
        """
        if self.store.frozen:
            raise FrozenStoreError("cannot step a frozen store")
        updates = []
        for name, tensor in self.store.items():
            g = grads.get(name) if grads is not None else tensor.grad
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
            updates.append((name, tensor, g))
        if not updates:
            return
        self.t += 1
        for name, tensor, g in updates:
            if name not in self._m:
                self._m[name] = np.zeros_like(tensor.data)
                self._v[name] = np.zeros_like(tensor.data)
            K.adam_update(
                tensor.data, g, self._m[name], self._v[name],
                self.t, self.lr, self.beta1, self.beta2, self.eps,
            )


def optimizer_step(store: ParamStore, grads: dict[str, np.ndarray], *, optimizer: Adam | None = None, **hyper) -> Adam:
    """Functional wrapper: one update of ``store`` from explicit gradients.

    Returns the optimizer so callers can carry the moment state forward.
    """
    opt = optimizer or Adam(store, **hyper)
    opt.step(grads)
    return opt
