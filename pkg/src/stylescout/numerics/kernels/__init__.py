"""Kernel backend selection.

Prefers the compiled Cython extension ``_core`` when it built; otherwise
falls back to the numpy implementations in :mod:`pure`. Set
``STYLESCOUT_PURE=1`` to force the fallback (used by the benchmark and the
backend-equivalence tests).
"""

from __future__ import annotations

import os

from . import pure

BACKEND = "pure"
_impl = pure

if not os.environ.get("STYLESCOUT_PURE"):
    try:
        from . import _core as _compiled  # type: ignore[attr-defined]

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        pass

layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward
masked_softmax_forward = _impl.masked_softmax_forward
softmax_backward = _impl.softmax_backward
gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
sigmoid_forward = _impl.sigmoid_forward
sigmoid_backward = _impl.sigmoid_backward
masked_mean_forward = _impl.masked_mean_forward
masked_mean_backward = _impl.masked_mean_backward
adam_update = _impl.adam_update
