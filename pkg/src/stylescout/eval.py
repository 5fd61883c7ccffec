"""Rating-study statistics: agreement between raters and the scout.

Ratings live in a rater x item matrix where an item is one
(clip, anchor professional) pair scored 1..100. All correlation and
error metrics run in z-space (per-rater z-scores, sample std), each
rater compared to the leave-one-out consensus of the others. Accuracy
and the correctness grid always come from raw scores, because the
per-anchor presentation normalization is not order-preserving within
a clip. Missing ratings stay missing, never imputed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scout import FitReport

MODEL_RATER = "model"


class DegenerateSeriesWarning(UserWarning):
    """A statistic fell back (constant series, too few points)."""


def _warn(message: str) -> None:
    warnings.warn(message, DegenerateSeriesWarning, stacklevel=3)


# ------------------------------------------------------------ rating matrix


@dataclass(frozen=True)
class RatingMatrix:
    """Rater x item grid; items are (clip_id, anchor) pairs, NaN = missing."""

    raters: tuple[str, ...]
    items: tuple[tuple[str, str], ...]
    values: np.ndarray  # (n_raters, n_items) float64

    def __post_init__(self):
        if self.values.shape != (len(self.raters), len(self.items)):
            raise ValueError("values grid does not match raters x items")
        present = self.values[np.isfinite(self.values)]
        if present.size and (present.min() < -1e9 or present.max() > 1e9):
            raise ValueError("implausible rating values")

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, str, float]]) -> "RatingMatrix":
        """Long-form (rater, clip, anchor, score) records; the last record
        for a cell wins, matching resubmission semantics upstream."""
        cells: dict[tuple[str, str, str], float] = {}
        raters: list[str] = []
        items: list[tuple[str, str]] = []
        for rater, clip, anchor, score in records:
            score = float(score)
            key = (rater, clip, anchor)
            if rater not in raters:
                raters.append(rater)
            if (clip, anchor) not in items:
                items.append((clip, anchor))
            cells[key] = score
        values = np.full((len(raters), len(items)), np.nan)
        item_pos = {it: j for j, it in enumerate(items)}
        rater_pos = {r: i for i, r in enumerate(raters)}
        for (rater, clip, anchor), score in cells.items():
            values[rater_pos[rater], item_pos[(clip, anchor)]] = score
        return cls(raters=tuple(raters), items=tuple(items), values=values)

    @classmethod
    def from_csv(cls, path: str | Path) -> "RatingMatrix":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = set(reader.fieldnames or ())
            rater_col = "participant_id" if "participant_id" in fields else "rater"
            score_col = "score" if "score" in fields else "rating"
            needed = {rater_col, "clip_id", "anchor", score_col}
            if not needed <= fields:
                raise ValueError(f"ratings CSV must have columns {sorted(needed)}")
            records = [
                (row[rater_col], row["clip_id"], row["anchor"], float(row[score_col]))
                for row in reader
            ]
        if not records:
            raise ValueError(f"no rating rows in {path}")
        return cls.from_records(records)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["participant_id", "clip_id", "anchor", "score"])
            for i, rater in enumerate(self.raters):
                for j, (clip, anchor) in enumerate(self.items):
                    v = self.values[i, j]
                    if math.isfinite(v):
                        w.writerow([rater, clip, anchor, f"{v:g}"])
        return path

    def row(self, rater: str) -> np.ndarray:
        return self.values[self.raters.index(rater)]

    def clip_ids(self) -> list[str]:
        seen: list[str] = []
        for clip, _ in self.items:
            if clip not in seen:
                seen.append(clip)
        return seen

    def anchors(self) -> list[str]:
        return sorted({anchor for _, anchor in self.items})

    def with_row(self, rater: str, cells: Mapping[tuple[str, str], float]) -> "RatingMatrix":
        """New matrix with one extra rater; unknown items are appended."""
        if rater in self.raters:
            raise ValueError(f"rater {rater!r} already present")
        items = list(self.items)
        for it in cells:
            if it not in items:
                items.append(it)
        values = np.full((len(self.raters) + 1, len(items)), np.nan)
        values[: len(self.raters), : len(self.items)] = self.values
        pos = {it: j for j, it in enumerate(items)}
        for it, v in cells.items():
            values[-1, pos[it]] = float(v)
        return RatingMatrix(
            raters=self.raters + (rater,), items=tuple(items), values=values
        )


def znormalize_per_rater(m: RatingMatrix) -> RatingMatrix:
    """Each rater's present entries become (x - mean)/s with sample std.

    A rater with constant or fewer than two entries z-scores to zeros,
    with a warning; positive affine rescaling of a row leaves its
    z-scores unchanged.
    """
    out = m.values.copy()
    for i, rater in enumerate(m.raters):
        row = out[i]
        present = np.isfinite(row)
        vals = row[present]
        if vals.size < 2 or np.all(vals == vals[0]):
            _warn(f"rater {rater!r} has constant or <2 ratings; z-scores set to 0")
            row[present] = 0.0
            continue
        row[present] = (vals - vals.mean()) / vals.std(ddof=1)
    return RatingMatrix(raters=m.raters, items=m.items, values=out)


# ----------------------------------------------------------------- metrics


def _pairwise_complete(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("series length mismatch")
    keep = np.isfinite(x) & np.isfinite(y)
    return x[keep], y[keep]


def pearson(x, y) -> float:
    """Product-moment correlation over pairwise-complete entries; NaN
    (with a warning) when fewer than two pairs or either side constant."""
    a, b = _pairwise_complete(x, y)
    if a.size < 2:
        _warn("pearson: fewer than 2 complete pairs")
        return math.nan
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        _warn("pearson: constant series")
        return math.nan
    return float(da @ db) / denom


def average_ranks(x) -> np.ndarray:
    """1-based ranks; ties get the mean of their rank positions."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    a, b = _pairwise_complete(x, y)
    if a.size < 2:
        _warn("spearman: fewer than 2 complete pairs")
        return math.nan
    return pearson(average_ranks(a), average_ranks(b))


def mae_z(rater_z, consensus_z) -> float:
    a, b = _pairwise_complete(rater_z, consensus_z)
    if a.size == 0:
        raise ValueError("mae_z: empty overlap")
    return float(np.abs(a - b).mean())


def icc_two_way_mixed(grid) -> tuple[float, float]:
    """Consistency ICC from the two-way ANOVA of a complete rater x item
    grid: single-rater (BMS - EMS)/(BMS + (k-1) EMS) and average-of-k
    (BMS - EMS)/BMS."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("grid must be 2-D (raters x items)")
    k, n = grid.shape
    if k < 2 or n < 2:
        raise ValueError("icc needs at least 2 raters and 2 items")
    missing = np.argwhere(~np.isfinite(grid))
    if missing.size:
        cells = ", ".join(f"({i},{j})" for i, j in missing[:8])
        raise ValueError(f"incomplete grid; missing cells {cells}")
    grand = grid.mean()
    item_means = grid.mean(axis=0)
    rater_means = grid.mean(axis=1)
    bms = k * float(((item_means - grand) ** 2).sum()) / (n - 1)
    resid = grid - item_means[None, :] - rater_means[:, None] + grand
    ems = float((resid**2).sum()) / ((n - 1) * (k - 1))
    if bms == 0.0:
        raise ValueError("zero between-item variance; icc undefined")
    icc_single = (bms - ems) / (bms + (k - 1) * ems)
    icc_average = (bms - ems) / bms
    return float(icc_single), float(icc_average)


def complete_subgrid(m: RatingMatrix) -> tuple[np.ndarray, list[tuple[str, str]]]:
    """Maximal item subset every rater scored, as (grid, kept items)."""
    keep = np.all(np.isfinite(m.values), axis=0)
    return m.values[:, keep], [it for it, k in zip(m.items, keep) if k]


def argmax_anchor(scores: Mapping[str, float]) -> str | None:
    """Anchor with the strictly highest score; ties abstain (None)."""
    finite = {a: v for a, v in scores.items() if math.isfinite(v)}
    if not finite:
        return None
    best = max(finite.values())
    leaders = [a for a, v in finite.items() if v == best]
    return leaders[0] if len(leaders) == 1 else None


def top1_accuracy(
    scores_by_clip: Mapping[str, Mapping[str, float]], truth: Mapping[str, str]
) -> float:
    """Fraction of clips whose top-scored anchor matches truth.

    Abstentions (tied top scores) count incorrect; a strictly increasing
    transform applied uniformly to one clip's scores cannot change it.
    """
    if not scores_by_clip:
        raise ValueError("top1_accuracy: no clips")
    correct = 0
    for clip, scores in scores_by_clip.items():
        if clip not in truth:
            raise ValueError(f"truth missing for clip {clip!r}")
        if argmax_anchor(scores) == truth[clip]:
            correct += 1
    return correct / len(scores_by_clip)


# --------------------------------------------------------------- consensus


def build_consensus(m_z: RatingMatrix, exclude: str | None = None) -> np.ndarray:
    """Per-item mean of the other raters' z-scores (leave-one-out when
    ``exclude`` is set); items nobody else rated come back NaN."""
    keep = [i for i, r in enumerate(m_z.raters) if r != exclude]
    if exclude is not None and len(keep) == len(m_z.raters):
        raise ValueError(f"rater {exclude!r} not in matrix")
    if len(keep) < 2:
        _warn("consensus built from fewer than 2 raters")
    if not keep:
        return np.full(len(m_z.items), np.nan)
    sub = m_z.values[keep]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(sub, axis=0)


def _rater_scores_by_clip(m: RatingMatrix, rater: str) -> dict[str, dict[str, float]]:
    row = m.row(rater)
    out: dict[str, dict[str, float]] = {}
    for j, (clip, anchor) in enumerate(m.items):
        if math.isfinite(row[j]):
            out.setdefault(clip, {})[anchor] = float(row[j])
    return out


def rater_accuracy(m: RatingMatrix, rater: str, truth: Mapping[str, str]) -> float:
    """Identification accuracy of one rater's raw scores against truth,
    over the clips that rater scored and truth covers."""
    by_clip = {
        c: s for c, s in _rater_scores_by_clip(m, rater).items() if c in truth
    }
    if not by_clip:
        return math.nan
    return top1_accuracy(by_clip, truth)


# ------------------------------------------------------------- summary


@dataclass
class RaterSummary:
    rater: str
    n_items: int
    pearson_r: float
    spearman_rho: float
    mae_z: float
    accuracy: float  # NaN when no truth available


@dataclass
class ICCBlock:
    n_raters: int
    n_items: int
    icc_single: float
    icc_average: float


@dataclass
class EvalSummary:
    rows: list[RaterSummary]
    icc: ICCBlock
    consensus: str  # "leave_one_out" or "all_raters"
    n_items: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "consensus": self.consensus,
            "n_items": self.n_items,
            "rows": [vars(r).copy() for r in self.rows],
            "icc": vars(self.icc).copy(),
            "notes": list(self.notes),
        }

    def to_csv(self, path: str | Path) -> Path:
        """Table-1 style export: per-rater rows then an icc block."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rater", "pearson_r", "spearman_rho", "mae_z", "accuracy"])
            for r in self.rows:
                w.writerow(
                    [r.rater]
                    + [_fmt3(v) for v in (r.pearson_r, r.spearman_rho, r.mae_z, r.accuracy)]
                )
            w.writerow([])
            w.writerow(["icc_block", "n_raters", "n_items", "icc_single", "icc_average"])
            w.writerow(
                ["icc", self.icc.n_raters, self.icc.n_items]
                + [_fmt3(v) for v in (self.icc.icc_single, self.icc.icc_average)]
            )
        return path


def _fmt3(v: float) -> str:
    return "" if not math.isfinite(v) else f"{v:.3f}"


def evaluate(
    m: RatingMatrix,
    truth: Mapping[str, str] | None = None,
    consensus: str = "leave_one_out",
) -> EvalSummary:
    """Per-rater agreement against consensus plus the ICC block.

    Correlations and MAE run on z-scores; accuracy runs on raw scores.
    ICC runs on the raw maximal complete sub-grid and degrades to NaN
    (with a note) rather than failing the whole summary.
    """
    if consensus not in ("leave_one_out", "all_raters"):
        raise ValueError("consensus must be 'leave_one_out' or 'all_raters'")
    notes: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateSeriesWarning)
        m_z = znormalize_per_rater(m)
        rows = []
        for rater in m.raters:
            exclude = rater if consensus == "leave_one_out" else None
            cons = build_consensus(m_z, exclude=exclude)
            z_row = m_z.row(rater)
            overlap = np.isfinite(z_row) & np.isfinite(cons)
            acc = rater_accuracy(m, rater, truth) if truth else math.nan
            if overlap.sum() == 0:
                rows.append(RaterSummary(rater, 0, math.nan, math.nan, math.nan, acc))
                notes.append(f"rater {rater!r}: no overlap with consensus")
                continue
            rows.append(
                RaterSummary(
                    rater=rater,
                    n_items=int(overlap.sum()),
                    pearson_r=pearson(z_row, cons),
                    spearman_rho=spearman(z_row, cons),
                    mae_z=mae_z(z_row[overlap], cons[overlap]),
                    accuracy=acc,
                )
            )
        grid, kept = complete_subgrid(m)
        try:
            icc_single, icc_average = icc_two_way_mixed(grid)
            icc = ICCBlock(len(m.raters), len(kept), icc_single, icc_average)
        except ValueError as exc:
            notes.append(f"icc unavailable: {exc}")
            icc = ICCBlock(len(m.raters), len(kept), math.nan, math.nan)
    notes.extend(str(w.message) for w in caught if issubclass(w.category, DegenerateSeriesWarning))
    return EvalSummary(rows=rows, icc=icc, consensus=consensus, n_items=len(m.items), notes=notes)


# ------------------------------------------------------- model as a rater


def model_rating_cells(
    reports: Sequence[FitReport],
) -> dict[tuple[str, str], float]:
    """The scout's 1..100 cells for the rating matrix, keyed (clip, anchor)."""
    return {
        (r.clip_id, anchor): value
        for r in reports
        for anchor, value in r.normalized.items()
    }


def attach_model_row(
    m: RatingMatrix, reports: Sequence[FitReport]
) -> tuple["RatingMatrix", dict[str, str | None]]:
    """Rating matrix with the scout as one more rater, plus its raw-score
    identification predictions (ties abstain)."""
    predictions = {r.clip_id: r.predicted for r in reports}
    return m.with_row(MODEL_RATER, model_rating_cells(reports)), predictions


# ------------------------------------------------------ agreement matrices


@dataclass
class AgreementMatrices:
    raters: list[str]
    items: list[tuple[str, str]]
    similarity: np.ndarray  # raters x items raw 1..100, NaN missing
    clip_ids: list[str]
    correctness: list[list[bool | None]]  # raters x clips; None = unrated

    def write_similarity_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rater"] + [f"{c}|{a}" for c, a in self.items])
            for i, rater in enumerate(self.raters):
                w.writerow(
                    [rater]
                    + ["" if not math.isfinite(v) else f"{v:.3f}" for v in self.similarity[i]]
                )
        return path

    def write_correctness_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rater"] + self.clip_ids)
            for i, rater in enumerate(self.raters):
                w.writerow(
                    [rater]
                    + ["" if v is None else str(int(v)) for v in self.correctness[i]]
                )
        return path


def agreement_matrices(
    m: RatingMatrix,
    model_reports: Sequence[FitReport] | None,
    truth: Mapping[str, str],
) -> AgreementMatrices:
    """Raw similarity grid plus per-clip correctness booleans.

    The model row's similarity cells are its normalized scores; its
    correctness comes from raw-score identification, so it agrees with
    the scout's own predictions cell for cell.
    """
    grid = m
    predictions: dict[str, str | None] = {}
    if model_reports is not None and MODEL_RATER not in m.raters:
        grid, predictions = attach_model_row(m, model_reports)
    clip_ids = grid.clip_ids()
    correctness: list[list[bool | None]] = []
    for rater in grid.raters:
        if rater == MODEL_RATER and predictions:
            row = [
                None if c not in predictions or c not in truth else predictions[c] == truth[c]
                for c in clip_ids
            ]
        else:
            by_clip = _rater_scores_by_clip(grid, rater)
            row = [
                None if c not in by_clip or c not in truth else argmax_anchor(by_clip[c]) == truth[c]
                for c in clip_ids
            ]
        correctness.append(row)
    return AgreementMatrices(
        raters=list(grid.raters),
        items=list(grid.items),
        similarity=grid.values.copy(),
        clip_ids=clip_ids,
        correctness=correctness,
    )
