"""Behavior-style encoder: event tokenization and the two-branch Transformer.

Each event becomes a bundle of categorical indices, multi-hot vectors, and
two continuous features (time delta, damage). The telemetry branch encodes
the continuous features, the commentary branch the categorical pools; each
branch is a small pre-norm Transformer with padded keys masked out, pooled
by a mask-aware mean into a style vector. In fused mode the per-timestep
branch outputs are concatenated and projected back to the model width, so
the pooled style vector is the masked mean of the fused contextual rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .numerics import ParamStore, Tensor
from .schema import Clip, TrajectoryEvent, ValuePools

DISCRETE_FIELDS = ("map", "team", "action", "location")
MULTIHOT_FIELDS = ("weapon", "outcome", "impact")

BRANCH_MODES = ("telemetry_only", "commentary_only", "fused")


class VocabError(KeyError):
    """A token was not present in the vocabulary."""


@dataclass(frozen=True)
class Vocab:
    """Per-field token index maps built from value pools.

    Discrete fields reserve index 0 for padding/unknown; multi-hot fields
    are dense vectors over the sorted pool. Token order is sorted, so the
    vocabulary is stable under serialization.
    """

    tokens: dict[str, tuple[str, ...]]

    @classmethod
    def from_pools(cls, pools: ValuePools) -> "Vocab":
        locations = sorted(set().union(*pools.locations_by_map.values()))
        return cls(
            tokens={
                "map": tuple(sorted(pools.maps)),
                "team": tuple(sorted(pools.teams)),
                "action": tuple(sorted(pools.actions)),
                "location": tuple(locations),
                "weapon": tuple(sorted(pools.weapons)),
                "outcome": tuple(sorted(pools.outcomes)),
                "impact": tuple(sorted(pools.impacts)),
            }
        )

    def size(self, field_name: str) -> int:
        return len(self.tokens[field_name])

    def index(self, field_name: str, token: str) -> int:
        """1-based index for discrete fields (0 is the padding slot)."""
        try:
            return self.tokens[field_name].index(token) + 1
        except ValueError:
            raise VocabError(f"token {token!r} absent from {field_name} vocab") from None

    def multihot(self, field_name: str, values) -> np.ndarray:
        vec = np.zeros(len(self.tokens[field_name]), dtype=np.float64)
        for v in values:
            try:
                vec[self.tokens[field_name].index(v)] = 1.0
            except ValueError:
                raise VocabError(f"token {v!r} absent from {field_name} vocab") from None
        return vec

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.tokens.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Vocab":
        return cls(tokens={k: tuple(v) for k, v in doc.items()})


@dataclass(frozen=True)
class EncoderConfig:
    d_embed: int = 16
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    ffn_multiplier: int = 2
    max_events: int = 64
    branch_mode: str = "fused"
    activation: str = "gelu"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_events < 1:
            raise ValueError("max_events must be >= 1")
        if self.branch_mode not in BRANCH_MODES:
            raise ValueError(f"branch_mode must be one of {BRANCH_MODES}")
        if self.activation not in ("relu", "gelu"):
            raise ValueError("activation must be 'relu' or 'gelu'")

    def to_dict(self) -> dict:
        return {
            "d_embed": self.d_embed,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "ffn_multiplier": self.ffn_multiplier,
            "max_events": self.max_events,
            "branch_mode": self.branch_mode,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderConfig":
        return cls(**doc)


def tokenize_event(
    event: TrajectoryEvent, prev_timestamp: float, vocab: Vocab, map_name: str
) -> dict:
    """Index/feature bundle for one event.

    Continuous features are (timestamp - prev_timestamp, damage / 100);
    pass the event's own timestamp as ``prev_timestamp`` for the first
    event of a clip so its time delta is zero.
    """
    return {
        "discrete": {
            "map": vocab.index("map", map_name),
            "team": vocab.index("team", event.team),
            "action": vocab.index("action", event.action),
            "location": vocab.index("location", event.location),
        },
        "multihot": {
            "weapon": vocab.multihot("weapon", event.weapon),
            "outcome": vocab.multihot("outcome", sorted(event.outcome)),
            "impact": vocab.multihot("impact", sorted(event.impact)),
        },
        "continuous": np.array(
            [event.timestamp - prev_timestamp, event.damage / 100.0], dtype=np.float64
        ),
    }


@dataclass
class TokenizedClip:
    """Per-clip feature arrays, cacheable across forward passes."""

    length: int
    truncated: bool
    discrete: dict[str, np.ndarray]  # field -> (L,) int indices
    multihot: dict[str, np.ndarray]  # field -> (L, K) 0/1
    continuous: np.ndarray  # (L, 2)


def tokenize_clip(clip: Clip, vocab: Vocab, max_events: int) -> TokenizedClip:
    events = clip.events[:max_events]
    truncated = len(clip.events) > max_events
    bundles = []
    prev = events[0].timestamp if events else 0.0
    for e in events:
        bundles.append(tokenize_event(e, prev, vocab, clip.map))
        prev = e.timestamp
    return TokenizedClip(
        length=len(events),
        truncated=truncated,
        discrete={
            f: np.array([b["discrete"][f] for b in bundles], dtype=np.intp)
            for f in DISCRETE_FIELDS
        },
        multihot={
            f: np.stack([b["multihot"][f] for b in bundles]) for f in MULTIHOT_FIELDS
        },
        continuous=np.stack([b["continuous"] for b in bundles]),
    )


_POS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    key = (n, d)
    if key not in _POS_CACHE:
        pos = np.arange(n)[:, None].astype(np.float64)
        i = np.arange(d)[None, :].astype(np.float64)
        angle = pos / np.power(10000.0, 2.0 * (i // 2) / d)
        pe = np.zeros((n, d))
        pe[:, 0::2] = np.sin(angle[:, 0::2])
        pe[:, 1::2] = np.cos(angle[:, 1::2])
        _POS_CACHE[key] = pe
    return _POS_CACHE[key]


# ------------------------------------------------------------- parameters


def _branch_names(mode: str) -> tuple[str, ...]:
    if mode == "fused":
        return ("tel", "com")
    return ("tel",) if mode == "telemetry_only" else ("com",)


def build_encoder_params(store: ParamStore, config: EncoderConfig, vocab: Vocab) -> None:
    """Register all encoder parameters in a deterministic order."""
    d_e, d_m = config.d_embed, config.d_model
    for branch in _branch_names(config.branch_mode):
        p = f"enc.{branch}"
        if branch == "com":
            for f in DISCRETE_FIELDS:
                store.embedding(f"{p}.emb.{f}", vocab.size(f) + 1, d_e)
            for f in MULTIHOT_FIELDS:
                store.embedding(f"{p}.emb.{f}", vocab.size(f), d_e)
            store.dense(f"{p}.in.W", 7 * d_e, d_m)
            store.zeros(f"{p}.in.b", d_m)
        else:
            store.dense(f"{p}.cont.W", 2, d_e)
            store.zeros(f"{p}.cont.b", d_e)
            store.dense(f"{p}.in.W", d_e, d_m)
            store.zeros(f"{p}.in.b", d_m)
        for layer in range(config.n_layers):
            q = f"{p}.l{layer}"
            store.ones(f"{q}.ln1.g", d_m)
            store.zeros(f"{q}.ln1.b", d_m)
            for proj in ("q", "k", "v", "o"):
                store.dense(f"{q}.attn.{proj}.W", d_m, d_m)
                store.zeros(f"{q}.attn.{proj}.b", d_m)
            store.ones(f"{q}.ln2.g", d_m)
            store.zeros(f"{q}.ln2.b", d_m)
            store.dense(f"{q}.ffn.W1", d_m, config.ffn_multiplier * d_m)
            store.zeros(f"{q}.ffn.b1", config.ffn_multiplier * d_m)
            store.dense(f"{q}.ffn.W2", config.ffn_multiplier * d_m, d_m)
            store.zeros(f"{q}.ffn.b2", d_m)
        store.ones(f"{p}.lnf.g", d_m)
        store.zeros(f"{p}.lnf.b", d_m)
    if config.branch_mode == "fused":
        store.dense("enc.fuse.W", 2 * d_m, d_m)
        store.zeros("enc.fuse.b", d_m)


# ------------------------------------------------------------- forward


def _transformer_stack(x: Tensor, mask: np.ndarray, store: ParamStore, prefix: str, config: EncoderConfig) -> Tensor:
    T, d_m = x.shape
    heads, d_h = config.n_heads, config.d_model // config.n_heads
    act = nm.gelu if config.activation == "gelu" else nm.relu
    for layer in range(config.n_layers):
        q = f"{prefix}.l{layer}"
        h = nm.layer_norm(x, store[f"{q}.ln1.g"], store[f"{q}.ln1.b"])

        def heads_view(t: Tensor) -> Tensor:
            return nm.transpose(nm.reshape(t, (T, heads, d_h)), (1, 0, 2))

        qh = heads_view(nm.add(nm.matmul(h, store[f"{q}.attn.q.W"]), store[f"{q}.attn.q.b"]))
        kh = heads_view(nm.add(nm.matmul(h, store[f"{q}.attn.k.W"]), store[f"{q}.attn.k.b"]))
        vh = heads_view(nm.add(nm.matmul(h, store[f"{q}.attn.v.W"]), store[f"{q}.attn.v.b"]))
        scores = nm.scale(nm.matmul(qh, nm.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(d_h))
        attn = nm.masked_softmax(scores, mask)
        mixed = nm.reshape(nm.transpose(nm.matmul(attn, vh), (1, 0, 2)), (T, d_m))
        x = nm.add(x, nm.add(nm.matmul(mixed, store[f"{q}.attn.o.W"]), store[f"{q}.attn.o.b"]))

        h2 = nm.layer_norm(x, store[f"{q}.ln2.g"], store[f"{q}.ln2.b"])
        f = act(nm.add(nm.matmul(h2, store[f"{q}.ffn.W1"]), store[f"{q}.ffn.b1"]))
        x = nm.add(x, nm.add(nm.matmul(f, store[f"{q}.ffn.W2"]), store[f"{q}.ffn.b2"]))
    return nm.layer_norm(x, store[f"{prefix}.lnf.g"], store[f"{prefix}.lnf.b"])


def _pad_tokens(tok: TokenizedClip, pad_to: int) -> TokenizedClip:
    if pad_to == tok.length:
        return tok
    extra = pad_to - tok.length
    return TokenizedClip(
        length=tok.length,
        truncated=tok.truncated,
        discrete={f: np.concatenate([v, np.zeros(extra, dtype=np.intp)]) for f, v in tok.discrete.items()},
        multihot={f: np.vstack([v, np.zeros((extra, v.shape[1]))]) for f, v in tok.multihot.items()},
        continuous=np.vstack([tok.continuous, np.zeros((extra, 2))]),
    )


def _branch_tokens(tok: TokenizedClip, branch: str, store: ParamStore, config: EncoderConfig) -> Tensor:
    p = f"enc.{branch}"
    T = tok.continuous.shape[0]
    if branch == "com":
        parts = [
            nm.embedding_lookup(store[f"{p}.emb.{f}"], tok.discrete[f]) for f in DISCRETE_FIELDS
        ]
        parts += [
            nm.matmul(nm.as_tensor(tok.multihot[f]), store[f"{p}.emb.{f}"])
            for f in MULTIHOT_FIELDS
        ]
        feats = nm.concat(parts, axis=1)
    else:
        feats = nm.add(nm.matmul(nm.as_tensor(tok.continuous), store[f"{p}.cont.W"]), store[f"{p}.cont.b"])
    tokens = nm.add(nm.matmul(feats, store[f"{p}.in.W"]), store[f"{p}.in.b"])
    return nm.add(tokens, nm.as_tensor(sinusoidal_positions(T, config.d_model)))


@dataclass
class EncodeResult:
    """Live-graph outputs of one encoder forward pass."""

    tokens: Tensor  # (T, d_model) input embeddings of the primary branch
    contextual: Tensor  # (T, d_model)
    style: Tensor  # (d_model,)
    mask: np.ndarray  # (T,) bool
    truncated: bool


@dataclass
class EncodedClip:
    """Detached encoder outputs for one clip."""

    token_tensor: np.ndarray
    contextual: np.ndarray
    style_vector: np.ndarray
    mask: np.ndarray
    truncated: bool

    @classmethod
    def from_result(cls, r: EncodeResult) -> "EncodedClip":
        return cls(
            token_tensor=r.tokens.detach(),
            contextual=r.contextual.detach(),
            style_vector=r.style.detach(),
            mask=r.mask.copy(),
            truncated=r.truncated,
        )


def encode_clip(
    clip: Clip,
    config: EncoderConfig,
    vocab: Vocab,
    store: ParamStore,
    pad_to: int | None = None,
    tokens: TokenizedClip | None = None,
) -> EncodeResult:
    """Run the encoder on one clip.

    Clips longer than ``config.max_events`` are truncated (flagged on the
    result). ``pad_to`` extends the buffer with masked slots; outputs are
    independent of it. Pass a cached :class:`TokenizedClip` to skip
    re-tokenization.
    """
    tok = tokens if tokens is not None else tokenize_clip(clip, vocab, config.max_events)
    if pad_to is not None:
        if pad_to < tok.length:
            raise ValueError(f"pad_to={pad_to} is smaller than the clip length {tok.length}")
        tok = _pad_tokens(tok, pad_to)
    T = tok.continuous.shape[0]
    mask = np.zeros(T, dtype=bool)
    mask[: tok.length] = True

    branches = _branch_names(config.branch_mode)
    token_tensors: dict[str, Tensor] = {}
    contextual: dict[str, Tensor] = {}
    for branch in branches:
        toks = _branch_tokens(tok, branch, store, config)
        token_tensors[branch] = toks
        contextual[branch] = _transformer_stack(toks, mask, store, f"enc.{branch}", config)

    if config.branch_mode == "fused":
        fused = nm.add(
            nm.matmul(nm.concat([contextual["tel"], contextual["com"]], axis=1), store["enc.fuse.W"]),
            store["enc.fuse.b"],
        )
        ctx = fused
        primary_tokens = token_tensors["com"]
    else:
        only = branches[0]
        ctx = contextual[only]
        primary_tokens = token_tensors[only]

    style = nm.mean_over_mask(ctx, mask)
    return EncodeResult(
        tokens=primary_tokens, contextual=ctx, style=style, mask=mask, truncated=tok.truncated
    )


def freeze(store: ParamStore) -> ParamStore:
    """Immutable handle over trained parameters; scoring uses it read-only."""
    return store.freeze()
