"""Synthetic style families and the exact Bayes oracle over them.

Five role-flavored profiles (entry rusher, anchor, lurker, AWP picker,
utility support) share one event rate and damage model but differ in
their categorical distributions. Each profile is blended with a common
uniform base by its separation alpha: at alpha 1 the families are far
apart, at alpha 0 they are indistinguishable. Events are conditionally
independent given the profile (optionally first-order in the action),
so the oracle's clip log-likelihood is exact and provides the accuracy
ceiling any learned scorer is measured against.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .schema import (
    Clip,
    TrajectoryEvent,
    ValuePools,
    load_pools,
    parse_clip,
    sanitize_clip,
    serialize_clip,
)

BIN_SECONDS = 2.0  # temporal sampling grid for event generation

CATEGORICAL_FIELDS = ("action", "location", "weapon", "outcome", "impact")


def _check_dist(name: str, dist: Mapping[str, float]) -> None:
    if not dist:
        raise ValueError(f"{name}: empty distribution")
    if any(p < 0 for p in dist.values()):
        raise ValueError(f"{name}: negative probability")
    total = sum(dist.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"{name}: probabilities sum to {total}, not 1")


@dataclass(frozen=True)
class StyleProfile:
    """One synthetic professional's generative behavior on a map."""

    name: str
    alpha: float
    action: dict[str, float]
    location: dict[str, float]
    weapon: dict[str, float]
    outcome: dict[str, float]
    impact: dict[str, float]
    rate: float = 0.5  # events per second
    damage_zero_prob: float = 0.45
    damage_mean: float = 28.0
    action_transitions: dict[str, dict[str, float]] | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        for f in CATEGORICAL_FIELDS:
            _check_dist(f"{self.name}.{f}", getattr(self, f))
        if self.action_transitions is not None:
            for a, row in self.action_transitions.items():
                _check_dist(f"{self.name}.action_transitions[{a}]", row)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "StyleProfile":
        return cls(**doc)


def _peaked(tokens: Iterable[str], peaks: dict[str, float]) -> dict[str, float]:
    """Distribution with named peaks; leftover mass spread uniformly."""
    tokens = sorted(tokens)
    missing = set(peaks) - set(tokens)
    if missing:
        raise ValueError(f"peak tokens not in pool: {sorted(missing)}")
    rest = [t for t in tokens if t not in peaks]
    leftover = 1.0 - sum(peaks.values())
    if leftover < -1e-12 or (rest and leftover < 0):
        raise ValueError("peak mass exceeds 1")
    out = dict(peaks)
    for t in rest:
        out[t] = leftover / len(rest)
    return {t: out[t] for t in tokens}


def uniform_base(pools: ValuePools, map_name: str) -> StyleProfile:
    """The common base every profile is blended toward as alpha drops."""
    return StyleProfile(
        name="base",
        alpha=0.0,
        action=_peaked(pools.actions, {}),
        location=_peaked(pools.locations(map_name), {}),
        weapon=_peaked(pools.weapons, {}),
        outcome=_peaked(pools.outcomes, {}),
        impact=_peaked(pools.impacts, {}),
    )


def default_profiles(pools: ValuePools, map_name: str = "de_mirage", alpha: float = 1.0) -> tuple[StyleProfile, ...]:
    """Five role archetypes over the built-in pools.

    All five share rate and damage parameters, so the categorical-only
    oracle stays the true ceiling.
    """
    acts, locs = pools.actions, pools.locations(map_name)
    wpns, outs, imps = pools.weapons, pools.outcomes, pools.impacts

    def prof(name, a, l, w, o, i):
        return StyleProfile(
            name=name,
            alpha=alpha,
            action=_peaked(acts, a),
            location=_peaked(locs, l),
            weapon=_peaked(wpns, w),
            outcome=_peaked(outs, o),
            impact=_peaked(imps, i),
        )

    return (
        prof(
            "entry_rusher",
            {"peek": 0.45, "fire_weapon": 0.30},
            {"palace": 0.35, "A_site": 0.30},
            {"ak47": 0.40, "glock": 0.20, "flash": 0.15},
            {"EnemySpotted": 0.35, "Death": 0.25},
            {"T_Advantage": 0.40, "LossControl": 0.20},
        ),
        prof(
            "anchor_holder",
            {"hold_angle": 0.50, "fire_weapon": 0.20},
            {"B_apps": 0.40, "connector": 0.20},
            {"m4a4": 0.45, "usp-s": 0.15},
            {"EnemyDamaged": 0.30, "Assist": 0.20},
            {"CT_Depletion": 0.35, "MapInformation": 0.25},
        ),
        prof(
            "lurker",
            {"peek": 0.30, "hold_angle": 0.30},
            {"catwalk": 0.40, "mid": 0.25},
            {"usp-s": 0.35, "smoke": 0.15},
            {"EnemySpotted": 0.40, "Death": 0.15},
            {"MapInformation": 0.45, "LossControl": 0.15},
        ),
        prof(
            "awp_picker",
            {"fire_weapon": 0.45, "hold_angle": 0.25},
            {"mid": 0.45, "connector": 0.20},
            {"awp": 0.60},
            {"EnemyDamaged": 0.35, "Death": 0.20},
            {"CT_Depletion": 0.30, "T_Advantage": 0.25},
        ),
        prof(
            "util_support",
            {"throw_grenade": 0.55},
            {"connector": 0.30, "B_apps": 0.25},
            {"smoke": 0.30, "flash": 0.25, "molly": 0.20, "grenade": 0.15},
            {"Assist": 0.30, "FriendDamaged": 0.20},
            {"ProjectileLoss": 0.40, "MapInformation": 0.25},
        ),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Full recipe for a synthetic identification experiment."""

    profiles: tuple[StyleProfile, ...]
    pools: ValuePools
    train_per_profile: int = 12
    test_per_profile: int = 30
    duration: float = 40.0
    map_name: str = "de_mirage"
    seed: int = 0

    def __post_init__(self):
        if len(self.profiles) < 2:
            raise ValueError("need at least 2 profiles to identify")
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ValueError("profile names must be unique")
        if self.train_per_profile < 1 or self.test_per_profile < 1:
            raise ValueError("clip counts must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.map_name not in self.pools.maps:
            raise ValueError(f"map {self.map_name!r} not in pools")
        locs = self.pools.locations(self.map_name)
        for p in self.profiles:
            for f in CATEGORICAL_FIELDS:
                pool = locs if f == "location" else getattr(self.pools, f + "s")
                extra = set(getattr(p, f)) - set(pool)
                if extra:
                    raise ValueError(f"{p.name}.{f}: tokens outside pools: {sorted(extra)}")

    @classmethod
    def default(cls, seed: int = 0, alpha: float = 1.0, **overrides) -> "SynthSpec":
        pools = overrides.pop("pools", None) or load_pools(None)
        map_name = overrides.pop("map_name", "de_mirage")
        profiles = overrides.pop("profiles", None) or default_profiles(pools, map_name, alpha)
        return cls(profiles=tuple(profiles), pools=pools, map_name=map_name, seed=seed, **overrides)

    def with_alpha(self, alpha: float) -> "SynthSpec":
        return dataclasses.replace(
            self, profiles=tuple(dataclasses.replace(p, alpha=alpha) for p in self.profiles)
        )

    def to_dict(self) -> dict:
        return {
            "profiles": [p.to_dict() for p in self.profiles],
            "pools": self.pools.to_document(),
            "train_per_profile": self.train_per_profile,
            "test_per_profile": self.test_per_profile,
            "duration": self.duration,
            "map_name": self.map_name,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        return cls(
            profiles=tuple(StyleProfile.from_dict(p) for p in doc["profiles"]),
            pools=load_pools(doc["pools"]),
            train_per_profile=doc.get("train_per_profile", 12),
            test_per_profile=doc.get("test_per_profile", 30),
            duration=doc.get("duration", 40.0),
            map_name=doc.get("map_name", "de_mirage"),
            seed=doc.get("seed", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- sampling


def _blend(profile_dist: Mapping[str, float], base_dist: Mapping[str, float], alpha: float) -> dict[str, float]:
    return {t: alpha * profile_dist.get(t, 0.0) + (1.0 - alpha) * b for t, b in base_dist.items()}


def blended_distributions(spec: SynthSpec, profile: StyleProfile) -> dict[str, dict[str, float]]:
    """Profile distributions after alpha-blending with the uniform base."""
    base = uniform_base(spec.pools, spec.map_name)
    out = {
        f: _blend(getattr(profile, f), getattr(base, f), profile.alpha)
        for f in CATEGORICAL_FIELDS
    }
    if profile.action_transitions is not None:
        out["action_transitions"] = {
            a: _blend(row, base.action, profile.alpha)
            for a, row in profile.action_transitions.items()
        }
    return out


def _draw(rng: np.random.Generator, dist: Mapping[str, float]) -> str:
    tokens = sorted(dist)
    probs = np.array([dist[t] for t in tokens], dtype=np.float64)
    return tokens[int(rng.choice(len(tokens), p=probs / probs.sum()))]


def sample_clip(spec: SynthSpec, profile: StyleProfile, clip_id: str, rng: np.random.Generator) -> Clip:
    """One labeled clip: Poisson event counts on a 2 s grid, categorical
    fields from the blended distributions, all i.i.d. unless the profile
    carries action transitions."""
    dists = blended_distributions(spec, profile)
    teams = sorted(spec.pools.teams)
    n_bins = max(1, math.ceil(spec.duration / BIN_SECONDS))
    times: list[float] = []
    for b in range(n_bins):
        width = min(BIN_SECONDS, spec.duration - b * BIN_SECONDS)
        count = rng.poisson(profile.rate * width)
        times.extend(b * BIN_SECONDS + np.sort(rng.uniform(0.0, width, size=count)))
    if not times:
        times = [spec.duration / 2.0]
    team = teams[int(rng.integers(len(teams)))]
    events = []
    prev_action: str | None = None
    for t in times:
        if prev_action is not None and "action_transitions" in dists:
            action = _draw(rng, dists["action_transitions"][prev_action])
        else:
            action = _draw(rng, dists["action"])
        prev_action = action
        damage = 0
        if rng.random() >= profile.damage_zero_prob:
            damage = int(min(100, rng.poisson(profile.damage_mean)))
        events.append(
            TrajectoryEvent(
                timestamp=round(float(t), 3),
                player_id=profile.name,
                team=team,
                action=action,
                location=_draw(rng, dists["location"]),
                weapon=(_draw(rng, dists["weapon"]),),
                outcome=frozenset({_draw(rng, dists["outcome"])}),
                impact=frozenset({_draw(rng, dists["impact"])}),
                targets=(),
                damage=damage,
            )
        )
    return Clip(
        clip_id=clip_id,
        map=spec.map_name,
        player_id=profile.name,
        archetype_label=profile.name,
        events=tuple(events),
    )


@dataclass
class SynthCorpus:
    spec: SynthSpec
    train: dict[str, list[Clip]]  # profile name -> labeled clips
    test: list[Clip]  # sanitized, neutral ids
    truth: dict[str, str]  # test clip_id -> profile name


def _clip_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def sample_corpus(spec: SynthSpec) -> SynthCorpus:
    """Labeled train clips plus a shuffled, sanitized held-out test pool.

    Per-clip derived seeds make the corpus reproducible and the clips
    independently samplable. Test clip ids are neutral (``test_0001``)
    and assigned after shuffling so the id order leaks nothing; the
    hidden truth table carries the labels.
    """
    train: dict[str, list[Clip]] = {}
    for pi, profile in enumerate(spec.profiles):
        train[profile.name] = [
            sample_clip(spec, profile, f"{profile.name}_train_{ci:03d}", _clip_rng(spec.seed, 0, pi, ci))
            for ci in range(spec.train_per_profile)
        ]
    raw_test: list[tuple[str, Clip]] = []
    for pi, profile in enumerate(spec.profiles):
        for ci in range(spec.test_per_profile):
            clip = sample_clip(spec, profile, "pending", _clip_rng(spec.seed, 1, pi, ci))
            raw_test.append((profile.name, clip))
    order = _clip_rng(spec.seed, 2).permutation(len(raw_test))
    test: list[Clip] = []
    truth: dict[str, str] = {}
    for k, idx in enumerate(order):
        name, clip = raw_test[idx]
        cid = f"test_{k + 1:04d}"
        test.append(sanitize_clip(dataclasses.replace(clip, clip_id=cid)))
        truth[cid] = name
    return SynthCorpus(spec=spec, train=train, test=test, truth=truth)


def emit_corpus(corpus: SynthCorpus, outdir: str | Path) -> dict[str, Path]:
    """Write clips, train/test manifests, the truth CSV, and the spec.

    Every emitted clip re-parses against the spec's pools before it is
    written; the truth table never touches the clip files.
    """
    outdir = Path(outdir)
    clips_dir = outdir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)

    def write_clip(clip: Clip) -> str:
        text = serialize_clip(clip)
        parse_clip(json.loads(text), corpus.spec.pools)
        rel = f"clips/{clip.clip_id}.json"
        (outdir / rel).write_text(text, encoding="utf-8")
        return rel

    train_entries = []
    for name in sorted(corpus.train):
        for clip in corpus.train[name]:
            train_entries.append(
                {"clip_id": clip.clip_id, "path": write_clip(clip), "label": name}
            )
    test_entries = [
        {"clip_id": clip.clip_id, "path": write_clip(clip)} for clip in corpus.test
    ]
    paths = {
        "train_manifest": outdir / "train_manifest.json",
        "test_manifest": outdir / "test_manifest.json",
        "truth": outdir / "truth.csv",
        "spec": outdir / "synth_spec.json",
    }
    version = corpus.spec.pools.version
    paths["train_manifest"].write_text(
        json.dumps({"pools_version": version, "clips": train_entries}, indent=1), "utf-8"
    )
    paths["test_manifest"].write_text(
        json.dumps({"pools_version": version, "clips": test_entries}, indent=1), "utf-8"
    )
    with paths["truth"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "true_pro"])
        for cid in sorted(corpus.truth):
            w.writerow([cid, corpus.truth[cid]])
    paths["spec"].write_text(corpus.spec.to_json(), "utf-8")
    return paths


def load_truth(path: str | Path) -> dict[str, str]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {row["clip_id"]: row["true_pro"] for row in csv.DictReader(fh)}


# ------------------------------------------------------------------ oracle


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def bayes_loglikelihoods(spec: SynthSpec, clip: Clip) -> dict[str, float]:
    """Exact clip log-likelihood under each profile's known generator."""
    out: dict[str, float] = {}
    for profile in spec.profiles:
        dists = blended_distributions(spec, profile)
        ll = 0.0
        prev_action: str | None = None
        for e in clip.events:
            if prev_action is not None and "action_transitions" in dists:
                ll += _log(dists["action_transitions"][prev_action].get(e.action, 0.0))
            else:
                ll += _log(dists["action"].get(e.action, 0.0))
            prev_action = e.action
            ll += _log(dists["location"].get(e.location, 0.0))
            for w in e.weapon:
                ll += _log(dists["weapon"].get(w, 0.0))
            for o in sorted(e.outcome):
                ll += _log(dists["outcome"].get(o, 0.0))
            for i in sorted(e.impact):
                ll += _log(dists["impact"].get(i, 0.0))
        out[profile.name] = ll
    return out


def bayes_oracle(spec: SynthSpec, clip: Clip) -> str | None:
    """Most likely profile for a clip; exact ties abstain (None)."""
    ll = bayes_loglikelihoods(spec, clip)
    best = max(ll.values())
    leaders = sorted(name for name, v in ll.items() if v == best)
    return leaders[0] if len(leaders) == 1 else None


def oracle_accuracy(
    spec: SynthSpec,
    clips: Iterable[Clip],
    truth: Mapping[str, str],
    tie_break_seed: int | None = None,
) -> float:
    """Oracle identification accuracy over a test pool.

    With a tie-break seed, tied clips pick uniformly among the leaders
    (chance level when profiles coincide); without one, ties abstain
    and count incorrect.
    """
    rng = None if tie_break_seed is None else np.random.default_rng(tie_break_seed)
    total = 0
    correct = 0
    for clip in clips:
        ll = bayes_loglikelihoods(spec, clip)
        best = max(ll.values())
        leaders = sorted(name for name, v in ll.items() if v == best)
        if len(leaders) == 1:
            pred = leaders[0]
        elif rng is not None:
            pred = leaders[int(rng.integers(len(leaders)))]
        else:
            pred = None
        total += 1
        correct += int(pred == truth[clip.clip_id])
    if total == 0:
        raise ValueError("no clips to score")
    return correct / total
