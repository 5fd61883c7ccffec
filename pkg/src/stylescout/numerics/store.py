"""Named parameter store with seeded initialization and JSON round-trip.

All randomness flows from the store's single seed; parameters are created
in a fixed code order, so two stores built the same way from the same seed
hold bit-identical values. The JSON form round-trips float64 exactly
(shortest-repr encoding).
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1


class FrozenStoreError(RuntimeError):
    """Raised on any attempt to mutate a frozen store."""


class ParamStore:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self.rng = np.random.default_rng(np.random.PCG64(self.seed))
        self._params: dict[str, Tensor] = {}
        self.frozen = False

    # -- creation -------------------------------------------------------

    def _register(self, name: str, values: np.ndarray) -> Tensor:
        if self.frozen:
            raise FrozenStoreError(f"cannot add parameter {name!r} to a frozen store")
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def dense(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        """Weight matrix, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        if self.frozen:
            raise FrozenStoreError(f"cannot add parameter {name!r} to a frozen store")
        bound = 1.0 / np.sqrt(fan_in)
        return self._register(name, self.rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def embedding(self, name: str, rows: int, dim: int) -> Tensor:
        """Embedding table, N(0, 0.02)."""
        if self.frozen:
            raise FrozenStoreError(f"cannot add parameter {name!r} to a frozen store")
        return self._register(name, self.rng.normal(0.0, 0.02, size=(rows, dim)))

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, *shape: int) -> Tensor:
        return self._register(name, np.ones(shape))

    def constant(self, name: str, values) -> Tensor:
        return self._register(name, np.array(values, dtype=np.float64))

    # -- access ---------------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    # -- freezing -------------------------------------------------------

    def freeze(self) -> "ParamStore":
        """Immutable read-only view sharing this store's arrays.

        The returned store rejects parameter registration and in-place
        writes (the arrays themselves are write-locked), and its tensors
        do not participate in gradient accumulation.
        """
        frozen = ParamStore.__new__(ParamStore)
        frozen.seed = self.seed
        frozen.rng = None
        frozen.frozen = True
        frozen._params = {}
        for name, t in self._params.items():
            view = t.data.view()
            view.setflags(write=False)
            frozen._params[name] = Tensor(view, requires_grad=False)
        return frozen

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "params": {
                name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
                for name, t in self._params.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamStore":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported param store format: {doc.get('format_version')!r}")
        store = cls(doc["seed"])
        for name, entry in doc["params"].items():
            values = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            store._register(name, values)
        return store

    @classmethod
    def from_json(cls, text: str) -> "ParamStore":
        return cls.from_dict(json.loads(text))
