"""Scoring and ranking of anonymous candidate clips against style models.

A trained model is persisted as a ``.esir.json`` document (expert style
imitation reward). Raw fit scores are masked-mean per-timestep rewards;
presentation scores map each professional's column onto 1..100 across the
evaluated batch. Identification always argmaxes raw scores, since the
per-professional normalization is not order-preserving within a clip.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .encoder import EncoderConfig, Vocab, encode_clip
from .gail import TrainConfig, TrainResult, discriminator_probs, fit_score, style_reward
from .numerics import ParamStore
from .schema import Clip

MODEL_FORMAT_VERSION = 1
MODEL_SUFFIX = ".esir.json"

NORM_LO = 1.0
NORM_HI = 100.0
NORM_MID = 50.5  # batch with no spread


@dataclass
class StyleModel:
    """Frozen discriminator-as-reward bundle for one professional."""

    player_id: str
    params: ParamStore
    vocab: Vocab
    encoder_config: EncoderConfig
    train_config: TrainConfig
    pools_version: str
    train_summary: dict = field(default_factory=dict)

    @classmethod
    def from_training(cls, player_id: str, result: TrainResult, pools_version: str) -> "StyleModel":
        r = result.report
        return cls(
            player_id=player_id,
            params=result.params,
            vocab=result.vocab,
            encoder_config=result.encoder_config,
            train_config=result.train_config,
            pools_version=pools_version,
            train_summary={
                "mode": r.mode,
                "epochs_run": r.epochs_run,
                "final_loss": r.final_loss,
                "final_holdout_auc": r.final_holdout_auc,
                "final_holdout_mean_d_expert": r.final_holdout_mean_d_expert,
                "final_holdout_mean_d_negative": r.final_holdout_mean_d_negative,
                "n_expert_train": r.n_expert_train,
                "n_expert_holdout": r.n_expert_holdout,
            },
        )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "esir-style-model",
            "player_id": self.player_id,
            "pools_version": self.pools_version,
            "encoder_config": self.encoder_config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "vocab": self.vocab.to_dict(),
            "train_summary": self.train_summary,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StyleModel":
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
        if doc.get("kind") != "esir-style-model":
            raise ValueError("not a style model document")
        return cls(
            player_id=doc["player_id"],
            params=ParamStore.from_dict(doc["params"]).freeze(),
            vocab=Vocab.from_dict(doc["vocab"]),
            encoder_config=EncoderConfig.from_dict(doc["encoder_config"]),
            train_config=TrainConfig.from_dict(doc["train_config"]),
            pools_version=doc["pools_version"],
            train_summary=doc.get("train_summary", {}),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.name.endswith(MODEL_SUFFIX):
            path = path.with_name(path.name + MODEL_SUFFIX)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "StyleModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class Registry:
    """Style models keyed by professional."""

    def __init__(self):
        self._models: dict[str, StyleModel] = {}

    def register(self, model: StyleModel) -> None:
        if model.player_id in self._models:
            raise ValueError(f"duplicate model for player {model.player_id!r}")
        self._models[model.player_id] = model

    def get(self, player_id: str) -> StyleModel:
        return self._models[player_id]

    def players(self) -> list[str]:
        return sorted(self._models)

    def models(self) -> list[StyleModel]:
        return [self._models[p] for p in self.players()]

    def __len__(self) -> int:
        return len(self._models)

    def __contains__(self, player_id: str) -> bool:
        return player_id in self._models

    def save_dir(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        return [m.save(directory / m.player_id) for m in self.models()]

    @classmethod
    def load_dir(cls, directory: str | Path) -> "Registry":
        reg = cls()
        paths = sorted(Path(directory).glob(f"*{MODEL_SUFFIX}"))
        if not paths:
            raise FileNotFoundError(f"no {MODEL_SUFFIX} files under {directory}")
        for p in paths:
            reg.register(StyleModel.load(p))
        return reg


@dataclass
class ClipScore:
    """One model's view of one clip."""

    clip_id: str
    player_id: str
    raw_score: float
    rewards: tuple[float, ...]  # one per scored (unpadded, untruncated) event
    timestamps: tuple[float, ...]
    truncated: bool

    @property
    def n_events(self) -> int:
        return len(self.rewards)


def score_clip(model: StyleModel, clip: Clip) -> ClipScore:
    res = encode_clip(clip, model.encoder_config, model.vocab, model.params)
    probs = discriminator_probs(res.contextual, model.params).detach()
    rewards = style_reward(probs)[res.mask]
    events = clip.events[: model.encoder_config.max_events]
    return ClipScore(
        clip_id=clip.clip_id,
        player_id=model.player_id,
        raw_score=fit_score(rewards),
        rewards=tuple(float(r) for r in rewards),
        timestamps=tuple(e.timestamp for e in events),
        truncated=res.truncated,
    )


@dataclass
class FitReport:
    """Per-clip scoring outcome across every registered professional.

    ``rewards`` explain the clip under the argmax model; they are empty
    when an exact raw-score tie forces an abstention.
    """

    clip_id: str
    raw: dict[str, float]
    normalized: dict[str, float]  # each value in [1, 100]
    predicted: str | None
    rewards: tuple[float, ...]
    timestamps: tuple[float, ...]
    truncated: bool


def score_clips(registry: Registry, clips: Sequence[Clip]) -> list[FitReport]:
    """Score every clip under every model, in clip order.

    Normalization is computed over this batch; predictions come from
    raw scores because per-professional rescaling is not order-preserving
    within a clip.
    """
    if not len(registry):
        raise ValueError("registry holds no models")
    scores = {m.player_id: [score_clip(m, c) for c in clips] for m in registry.models()}
    norm = normalize_scores({p: [s.raw_score for s in ss] for p, ss in scores.items()})
    reports = []
    for i, clip in enumerate(clips):
        raw = {p: scores[p][i].raw_score for p in scores}
        best = max(raw.values())
        leaders = sorted(p for p, v in raw.items() if v == best)
        predicted = leaders[0] if len(leaders) == 1 else None
        detail = scores[predicted][i] if predicted is not None else scores[leaders[0]][i]
        reports.append(
            FitReport(
                clip_id=clip.clip_id,
                raw=raw,
                normalized={p: norm[p][i] for p in norm},
                predicted=predicted,
                rewards=detail.rewards if predicted is not None else (),
                timestamps=detail.timestamps,
                truncated=detail.truncated,
            )
        )
    return reports


def normalize_scores(raw_by_player: Mapping[str, Sequence[float]]) -> dict[str, list[float]]:
    """Affine map of each professional's raw scores onto 1..100.

    The column minimum lands on 1 and the maximum on 100 across the
    evaluated batch; a column with no spread maps everywhere to 50.5.
    """
    out: dict[str, list[float]] = {}
    for player, raw in raw_by_player.items():
        arr = np.asarray(list(raw), dtype=np.float64)
        lo, hi = float(arr.min()), float(arr.max())
        if hi == lo:
            out[player] = [NORM_MID] * arr.size
        else:
            # ratio first: endpoints land exactly on 1 and 100
            out[player] = [
                float(NORM_LO + (NORM_HI - NORM_LO) * ((x - lo) / (hi - lo))) for x in arr
            ]
    return out


def rank_candidates(registry: Registry, clips: Sequence[Clip], target: str) -> list[FitReport]:
    """Candidates ordered by fit to one professional.

    Descending by the target model's raw score, exact ties broken by
    clip_id ascending so output order is stable.
    """
    if target not in registry:
        raise ValueError(f"unknown target professional {target!r}")
    reports = score_clips(registry, clips)
    reports.sort(key=lambda r: (-r.raw[target], r.clip_id))
    return reports


def write_fit_reports_csv(reports: Sequence[FitReport], path: str | Path) -> Path:
    """Long-form CSV, one row per (clip, professional).

    Scores are repr-formatted so reading the file back reproduces the
    exact floats; ``predicted`` flags the argmax professional (all rows
    0 on an abstention).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "pro", "raw_score", "norm_score", "predicted"])
        for r in reports:
            for pro in sorted(r.raw):
                w.writerow(
                    [
                        r.clip_id,
                        pro,
                        repr(r.raw[pro]),
                        repr(r.normalized[pro]),
                        int(pro == r.predicted),
                    ]
                )
    return path


def read_fit_reports_csv(path: str | Path) -> list[FitReport]:
    """Inverse of ``write_fit_reports_csv`` (rewards are not persisted)."""
    by_clip: dict[str, FitReport] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rep = by_clip.get(row["clip_id"])
            if rep is None:
                rep = FitReport(
                    clip_id=row["clip_id"],
                    raw={},
                    normalized={},
                    predicted=None,
                    rewards=(),
                    timestamps=(),
                    truncated=False,
                )
                by_clip[row["clip_id"]] = rep
            rep.raw[row["pro"]] = float(row["raw_score"])
            rep.normalized[row["pro"]] = float(row["norm_score"])
            if row["predicted"] == "1":
                rep.predicted = row["pro"]
    return list(by_clip.values())


def temporal_heatmap(model: StyleModel, clip: Clip) -> list[dict]:
    """Per-timestep reward rows explaining where a clip matches the style.

    ``reward_norm`` rescales rewards to 0..1 within the clip (0.5 when
    flat), so downstream rendering needs no knowledge of the reward range.
    """
    detail = score_clip(model, clip)
    r = np.asarray(detail.rewards)
    spread = r.max() - r.min()
    norm = np.full_like(r, 0.5) if spread == 0 else (r - r.min()) / spread
    return [
        {
            "clip_id": clip.clip_id,
            "t": t,
            "timestamp_s": detail.timestamps[t],
            "reward": float(r[t]),
            "reward_norm": float(norm[t]),
        }
        for t in range(r.size)
    ]


def write_heatmap_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["clip_id", "t", "timestamp_s", "reward", "reward_norm"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([row["clip_id"], row["t"]] + [repr(row[c]) for c in cols[2:]])
    return path


@dataclass
class IdentifyResult:
    clip_id: str
    predicted: str | None  # None means abstention on an exact tie
    raw: dict[str, float]


def identify(registry: Registry, clip: Clip) -> IdentifyResult:
    """Attribute a clip to the professional whose model scores it highest.

    Raw scores only; an exact tie at the top abstains rather than guess.
    """
    raw = {m.player_id: score_clip(m, clip).raw_score for m in registry.models()}
    best = max(raw.values())
    leaders = sorted(p for p, v in raw.items() if v == best)
    return IdentifyResult(
        clip_id=clip.clip_id, predicted=leaders[0] if len(leaders) == 1 else None, raw=raw
    )
