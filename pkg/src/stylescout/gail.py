"""Adversarial style learning.

A per-timestep discriminator is trained to tell one professional's clips
(label 1) from negatives (label 0). Negatives come either from other
players plus field-shuffled expert clips (``contrast_negatives``) or from
a small learned policy updated with score-function gradients
(``learned_generator``). The style reward at a timestep is -log(1 - D)
and a clip's fit score is the mean reward over its real timesteps.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np

from . import numerics as nm
from .encoder import (
    EncoderConfig,
    TokenizedClip,
    Vocab,
    build_encoder_params,
    encode_clip,
    tokenize_clip,
)
from .numerics import Adam, ParamStore, Tensor
from .schema import Clip, TrajectoryEvent, ValuePools, load_pools

REWARD_EPS = 1e-4
# -log(REWARD_EPS): reward saturates here as D approaches 1.
MAX_REWARD = -math.log(REWARD_EPS)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


# ------------------------------------------------------------ discriminator


def build_discriminator_params(store: ParamStore, d_model: int, hidden: int) -> None:
    store.dense("disc.W1", d_model, hidden)
    store.zeros("disc.b1", hidden)
    store.dense("disc.W2", hidden, 1)
    store.zeros("disc.b2", 1)


def discriminator_probs(contextual: Tensor, store: ParamStore) -> Tensor:
    """Per-timestep probability that each row is the expert's play. (T, 1)."""
    h = nm.gelu(nm.add(nm.matmul(contextual, store["disc.W1"]), store["disc.b1"]))
    return nm.sigmoid(nm.add(nm.matmul(h, store["disc.W2"]), store["disc.b2"]))


def _clip_nll(probs: Tensor, mask: np.ndarray, target_real: bool) -> Tensor:
    p = nm.clamp(probs, REWARD_EPS, 1.0 - REWARD_EPS)
    chosen = p if target_real else nm.sub(1.0, p)
    return nm.tsum(nm.neg(nm.mean_over_mask(nm.log(chosen), mask)))


def discriminator_loss(expert, negatives) -> Tensor:
    """Mean binary NLL; ``expert``/``negatives`` are (probs, mask) pairs.

    At D = 0.5 everywhere this is 2 ln 2.
    """
    if not expert or not negatives:
        raise ValueError("discriminator_loss needs at least one clip on each side")
    e = reduce(nm.add, [_clip_nll(p, m, True) for p, m in expert])
    n = reduce(nm.add, [_clip_nll(p, m, False) for p, m in negatives])
    return nm.add(nm.scale(e, 1.0 / len(expert)), nm.scale(n, 1.0 / len(negatives)))


def style_reward(probs: np.ndarray) -> np.ndarray:
    """-log(1 - D) per timestep, with D clamped away from 0 and 1.

    Capped at MAX_REWARD: 1 - (1 - eps) loses a bit to cancellation, which
    would otherwise push the saturated value a few ulp past the constant.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64).reshape(-1), REWARD_EPS, 1.0 - REWARD_EPS)
    return np.minimum(-np.log(1.0 - p), MAX_REWARD)


def fit_score(rewards: np.ndarray, mask: np.ndarray | None = None) -> float:
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if mask is not None:
        r = r[np.asarray(mask, dtype=bool).reshape(-1)]
    if r.size == 0:
        raise ValueError("fit_score over zero timesteps")
    return float(r.mean())


# --------------------------------------------------------------- negatives


def shuffled_negative(clip: Clip, rng: np.random.Generator) -> Clip:
    """Expert clip with action, location, weapon, outcome, impact, and
    damage each independently permuted across events. Marginal token
    frequencies survive; joint and temporal structure do not."""
    n = len(clip.events)
    perms = {f: rng.permutation(n) for f in ("action", "location", "weapon", "outcome", "impact", "damage")}
    events = tuple(
        dataclasses.replace(
            e,
            action=clip.events[perms["action"][i]].action,
            location=clip.events[perms["location"][i]].location,
            weapon=clip.events[perms["weapon"][i]].weapon,
            outcome=clip.events[perms["outcome"][i]].outcome,
            impact=clip.events[perms["impact"][i]].impact,
            damage=clip.events[perms["damage"][i]].damage,
        )
        for i, e in enumerate(clip.events)
    )
    return dataclasses.replace(clip, clip_id=f"{clip.clip_id}~shuffled", events=events)


def rank_auc(positive: list[float], negative: list[float]) -> float:
    """Probability a positive outranks a negative, ties counted half."""
    if not positive or not negative:
        raise ValueError("rank_auc needs scores on both sides")
    wins = 0.0
    for p in positive:
        for q in negative:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(positive) * len(negative))


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "contrast_negatives"
    epochs: int = 25
    lr: float = 3e-3
    batch_size: int = 8
    holdout_fraction: float = 0.2
    shuffle_negative_ratio: float = 0.25
    disc_hidden: int = 32
    seed: int = 0
    # learned_generator mode
    gen_hidden: int = 32
    gen_rollout_len: int = 24
    gen_rollouts_per_epoch: int = 8
    gen_updates_per_epoch: int = 2
    gen_lr: float = 1e-2
    baseline_decay: float = 0.9

    def __post_init__(self):
        if self.mode not in ("contrast_negatives", "learned_generator"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class TrainReport:
    mode: str
    epochs_run: int
    n_expert_train: int
    n_expert_holdout: int
    n_negatives_real: int
    n_negatives_shuffled: int
    final_loss: float
    final_holdout_auc: float | None
    final_holdout_mean_d_expert: float | None = None
    final_holdout_mean_d_negative: float | None = None
    history: list[dict] = field(default_factory=list)


@dataclass
class TrainResult:
    params: ParamStore  # frozen
    vocab: Vocab
    encoder_config: EncoderConfig
    train_config: TrainConfig
    report: TrainReport


def _token_cache(clips, vocab: Vocab, max_events: int) -> dict[int, TokenizedClip]:
    return {id(c): tokenize_clip(c, vocab, max_events) for c in clips}


def _forward_probs(clip, cache, config, vocab, store):
    res = encode_clip(clip, config, vocab, store, tokens=cache.get(id(clip)))
    return discriminator_probs(res.contextual, store), res.mask


def _detached_scores(clips, cache, config, vocab, store) -> list[float]:
    out = []
    for c in clips:
        probs, mask = _forward_probs(c, cache, config, vocab, store)
        out.append(fit_score(style_reward(probs.detach()), mask))
    return out


def _mean_prob(clips, cache, config, vocab, store) -> float | None:
    """Mean discriminator output over all valid timesteps of ``clips``."""
    total = 0.0
    count = 0
    for c in clips:
        probs, mask = _forward_probs(c, cache, config, vocab, store)
        vals = probs.detach().reshape(-1)[mask]
        total += float(vals.sum())
        count += int(vals.size)
    return total / count if count else None


def _holdout_split(items: list, fraction: float, rng: np.random.Generator):
    if len(items) < 2 or fraction <= 0.0:
        return list(items), []
    n_hold = min(len(items) - 1, max(1, round(fraction * len(items))))
    order = rng.permutation(len(items))
    hold = [items[i] for i in order[:n_hold]]
    train = [items[i] for i in order[n_hold:]]
    return train, hold


def train_style_model(
    expert_clips,
    negative_clips=(),
    *,
    pools: ValuePools | None = None,
    vocab: Vocab | None = None,
    encoder_config: EncoderConfig | None = None,
    train_config: TrainConfig | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Fit one professional's style model against negatives.

    Raises :class:`TrainingDiverged` when the loss or a gradient stops
    being finite; nothing is written to ``log_path`` after that point
    except the divergence record.
    """
    expert_clips = list(expert_clips)
    negative_clips = list(negative_clips)
    if not expert_clips:
        raise ValueError("no expert clips to train on")
    pools = pools if pools is not None else load_pools(None)
    vocab = vocab if vocab is not None else Vocab.from_pools(pools)
    cfg = encoder_config if encoder_config is not None else EncoderConfig()
    tc = train_config if train_config is not None else TrainConfig()

    rng = np.random.default_rng(np.random.PCG64(tc.seed))
    store = ParamStore(tc.seed)
    build_encoder_params(store, cfg, vocab)
    build_discriminator_params(store, cfg.d_model, tc.disc_hidden)
    optimizer = Adam(store, lr=tc.lr)

    train_e, hold_e = _holdout_split(expert_clips, tc.holdout_fraction, rng)
    train_n, hold_n = _holdout_split(negative_clips, tc.holdout_fraction, rng)

    n_shuffled = round(tc.shuffle_negative_ratio * len(train_e))
    shuffled = [shuffled_negative(train_e[i % len(train_e)], rng) for i in range(n_shuffled)]

    generator = None
    gen_opt = None
    baseline = 0.0
    if tc.mode == "learned_generator":
        generator = Generator(vocab, pools, GeneratorConfig(hidden=tc.gen_hidden), seed=tc.seed + 1)
        gen_opt = Adam(generator.store, lr=tc.gen_lr)
    elif not negative_clips and not shuffled:
        raise ValueError("contrast_negatives mode needs negative clips or a shuffle ratio > 0")

    pool_negatives = train_n + shuffled
    cache = _token_cache(expert_clips + negative_clips + shuffled, vocab, cfg.max_events)

    log_file = None
    if log_path is not None:
        log_file = Path(log_path)
        log_file.parent.mkdir(parents=True, exist_ok=True)

    def emit(record: dict) -> None:
        if log_file is not None:
            with log_file.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    history: list[dict] = []
    final_loss = math.nan
    epochs_run = 0
    try:
        for epoch in range(tc.epochs):
            t0 = time.perf_counter()
            if generator is not None:
                rollouts = [
                    generator.rollout(rng, tc.gen_rollout_len) for _ in range(tc.gen_rollouts_per_epoch)
                ]
                gen_clips = [r.clip for r in rollouts]
                for c in gen_clips:
                    cache[id(c)] = tokenize_clip(c, vocab, cfg.max_events)
                epoch_negatives = gen_clips + shuffled
            else:
                epoch_negatives = pool_negatives

            order = rng.permutation(len(train_e))
            losses = []
            for start in range(0, len(order), tc.batch_size):
                batch = [train_e[i] for i in order[start : start + tc.batch_size]]
                neg_idx = rng.choice(len(epoch_negatives), size=len(batch), replace=True)
                negs = [epoch_negatives[i] for i in neg_idx]
                store.zero_grad()
                loss = discriminator_loss(
                    [_forward_probs(c, cache, cfg, vocab, store) for c in batch],
                    [_forward_probs(c, cache, cfg, vocab, store) for c in negs],
                )
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}", epoch)
                nm.backward(loss)
                try:
                    optimizer.step()
                except nm.NonFiniteGradientError as exc:
                    raise TrainingDiverged(f"{exc} at epoch {epoch}", epoch) from exc
                losses.append(value)

            if generator is not None:
                for _ in range(tc.gen_updates_per_epoch):
                    batch = [generator.rollout(rng, tc.gen_rollout_len) for _ in range(4)]
                    rewarded = []
                    for r in batch:
                        cache[id(r.clip)] = tokenize_clip(r.clip, vocab, cfg.max_events)
                        probs, mask = _forward_probs(r.clip, cache, cfg, vocab, store)
                        rewarded.append((r, style_reward(probs.detach())[mask]))
                    _, baseline = generator_update(
                        generator, gen_opt, rewarded, baseline, tc.baseline_decay
                    )

            auc = None
            mean_d_e = None
            mean_d_n = None
            if hold_e:
                hold_neg = hold_n if hold_n else [shuffled_negative(c, rng) for c in hold_e]
                for c in hold_neg:
                    cache.setdefault(id(c), tokenize_clip(c, vocab, cfg.max_events))
                auc = rank_auc(
                    _detached_scores(hold_e, cache, cfg, vocab, store),
                    _detached_scores(hold_neg, cache, cfg, vocab, store),
                )
                mean_d_e = _mean_prob(hold_e, cache, cfg, vocab, store)
                mean_d_n = _mean_prob(hold_neg, cache, cfg, vocab, store)
            final_loss = float(np.mean(losses))
            epochs_run = epoch + 1
            entry = {
                "epoch": epoch,
                "loss": final_loss,
                "holdout_auc": auc,
                "holdout_mean_d_expert": mean_d_e,
                "holdout_mean_d_negative": mean_d_n,
                "n_batches": len(losses),
                "seconds": round(time.perf_counter() - t0, 4),
            }
            history.append(entry)
            emit(entry)
    except TrainingDiverged as exc:
        emit({"event": "diverged", "epoch": exc.epoch, "message": str(exc)})
        raise

    report = TrainReport(
        mode=tc.mode,
        epochs_run=epochs_run,
        n_expert_train=len(train_e),
        n_expert_holdout=len(hold_e),
        n_negatives_real=len(train_n),
        n_negatives_shuffled=len(shuffled),
        final_loss=final_loss,
        final_holdout_auc=history[-1]["holdout_auc"] if history else None,
        final_holdout_mean_d_expert=history[-1]["holdout_mean_d_expert"] if history else None,
        final_holdout_mean_d_negative=history[-1]["holdout_mean_d_negative"] if history else None,
    )
    report.history = history
    emit(
        {
            "event": "final",
            "loss": report.final_loss,
            "holdout_auc": report.final_holdout_auc,
            "holdout_mean_d_expert": report.final_holdout_mean_d_expert,
            "holdout_mean_d_negative": report.final_holdout_mean_d_negative,
        }
    )
    return TrainResult(
        params=store.freeze(), vocab=vocab, encoder_config=cfg, train_config=tc, report=report
    )


# ------------------------------------------------------- learned generator


@dataclass(frozen=True)
class GeneratorConfig:
    hidden: int = 32
    dt_bins: tuple[float, ...] = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    damage_bins: tuple[int, ...] = (0, 5, 15, 30, 60, 100)


@dataclass
class Rollout:
    clip: Clip
    logps: list[Tensor]  # one scalar per sampled event


class Generator:
    """Recurrent event policy trained with REINFORCE.

    Every head is categorical or Bernoulli over vocabulary tokens (time
    deltas and damage use fixed bins), so the per-event log-probability
    is an exact tape scalar and no gradient flows through sampling.
    """

    def __init__(self, vocab: Vocab, pools: ValuePools, config: GeneratorConfig | None = None, seed: int = 0):
        self.vocab = vocab
        self.pools = pools
        self.config = config if config is not None else GeneratorConfig()
        self.store = ParamStore(seed)
        h = self.config.hidden
        s = self.store
        s.embedding("gen.emb.action", vocab.size("action") + 1, h)
        s.dense("gen.rnn.Wh", h, h)
        s.dense("gen.rnn.Wx", h, h)
        s.zeros("gen.rnn.b", h)
        for name, width in (
            ("team", vocab.size("team")),
            ("action", vocab.size("action")),
            ("location", vocab.size("location")),
            ("weapon", vocab.size("weapon")),
            ("outcome", vocab.size("outcome")),
            ("impact", vocab.size("impact")),
            ("dt", len(self.config.dt_bins)),
            ("damage", len(self.config.damage_bins)),
        ):
            s.dense(f"gen.head.{name}.W", h, width)
            s.zeros(f"gen.head.{name}.b", width)
        # Which global location indices are legal on each map.
        self._location_masks = {
            m: np.array([t in locs for t in vocab.tokens["location"]], dtype=bool)
            for m, locs in pools.locations_by_map.items()
        }
        self._rollout_count = 0

    def _head(self, h: Tensor, name: str) -> Tensor:
        s = self.store
        return nm.add(nm.matmul(h, s[f"gen.head.{name}.W"]), s[f"gen.head.{name}.b"])

    def _categorical(self, h: Tensor, name: str, rng, mask: np.ndarray | None = None):
        logits = self._head(h, name)
        k = logits.shape[1]
        mask = np.ones(k, dtype=bool) if mask is None else mask
        probs = nm.masked_softmax(logits, mask)
        p = probs.detach().reshape(-1)
        idx = int(rng.choice(k, p=p / p.sum()))
        onehot = np.zeros((k, 1))
        onehot[idx, 0] = 1.0
        logp = nm.tsum(nm.log(nm.clamp(nm.matmul(probs, nm.as_tensor(onehot)), 1e-12, 1.0)))
        return idx, logp

    def _bernoulli(self, h: Tensor, name: str, rng):
        p = nm.sigmoid(self._head(h, name))
        draws = (rng.random(p.shape[1]) < p.detach().reshape(-1)).astype(np.float64)
        chosen = nm.add(nm.mul(p, draws), nm.mul(nm.sub(1.0, p), 1.0 - draws))
        logp = nm.tsum(nm.log(nm.clamp(chosen, 1e-12, 1.0)))
        return draws.astype(bool), logp

    def rollout(self, rng: np.random.Generator, length: int, map_name: str | None = None) -> Rollout:
        cfg, vocab = self.config, self.vocab
        if map_name is None:
            map_name = vocab.tokens["map"][int(rng.integers(len(vocab.tokens["map"])))]
        loc_mask = self._location_masks[map_name]
        s = self.store
        h = nm.as_tensor(np.zeros((1, cfg.hidden)))
        prev_action = 0
        now = 0.0
        events = []
        logps = []
        self._rollout_count += 1
        for step in range(length):
            x = nm.embedding_lookup(s["gen.emb.action"], np.array([prev_action], dtype=np.intp))
            h = nm.tanh(nm.add(nm.add(nm.matmul(h, s["gen.rnn.Wh"]), nm.matmul(x, s["gen.rnn.Wx"])), s["gen.rnn.b"]))
            team_i, lp_team = self._categorical(h, "team", rng)
            act_i, lp_act = self._categorical(h, "action", rng)
            loc_i, lp_loc = self._categorical(h, "location", rng, loc_mask)
            wpn, lp_wpn = self._bernoulli(h, "weapon", rng)
            out_b, lp_out = self._bernoulli(h, "outcome", rng)
            imp_b, lp_imp = self._bernoulli(h, "impact", rng)
            dt_i, lp_dt = self._categorical(h, "dt", rng)
            dmg_i, lp_dmg = self._categorical(h, "damage", rng)
            now += cfg.dt_bins[dt_i]
            events.append(
                TrajectoryEvent(
                    timestamp=round(now, 3),
                    player_id="generator",
                    team=vocab.tokens["team"][team_i],
                    action=vocab.tokens["action"][act_i],
                    location=vocab.tokens["location"][loc_i],
                    weapon=tuple(t for t, keep in zip(vocab.tokens["weapon"], wpn) if keep),
                    outcome=frozenset(t for t, keep in zip(vocab.tokens["outcome"], out_b) if keep),
                    impact=frozenset(t for t, keep in zip(vocab.tokens["impact"], imp_b) if keep),
                    targets=(),
                    damage=cfg.damage_bins[dmg_i],
                )
            )
            logps.append(
                reduce(nm.add, (lp_team, lp_act, lp_loc, lp_wpn, lp_out, lp_imp, lp_dt, lp_dmg))
            )
            prev_action = act_i + 1
        clip = Clip(
            clip_id=f"gen_{self._rollout_count:06d}",
            map=map_name,
            player_id="generator",
            archetype_label=None,
            events=tuple(events),
        )
        return Rollout(clip=clip, logps=logps)


def generator_update(
    generator: Generator,
    optimizer: Adam,
    rollouts: list[tuple[Rollout, np.ndarray]],
    baseline: float,
    decay: float = 0.9,
) -> tuple[float, float]:
    """One REINFORCE step: loss = -mean over timesteps of (r - b) log pi.

    ``rollouts`` pairs each rollout with its per-timestep rewards; the
    baseline is an EMA of mean reward, updated after the step.
    """
    if not rollouts:
        raise ValueError("generator_update needs at least one rollout")
    terms = []
    all_rewards = []
    for rollout, rewards in rollouts:
        rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
        if rewards.shape[0] != len(rollout.logps):
            raise ValueError("reward/timestep length mismatch")
        denom = len(rollout.logps) * len(rollouts)
        for lp, r in zip(rollout.logps, rewards):
            terms.append(nm.scale(lp, -(float(r) - baseline) / denom))
        all_rewards.append(rewards.mean())
    loss = reduce(nm.add, terms)
    generator.store.zero_grad()
    nm.backward(loss)
    optimizer.step()
    new_baseline = decay * baseline + (1.0 - decay) * float(np.mean(all_rewards))
    return loss.item(), new_baseline
