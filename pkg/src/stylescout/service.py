"""Rating-study HTTP service and the vision-language annotation adapter.

Participants get a deterministic without-replacement sample of the study
pool (seeded by study seed and participant id), rate each clip against
five anchor professionals on 1..100 sliders, and can resubmit a clip;
the last write wins and progress never advances twice. Ratings persist
in an append-only JSONL log, so a restarted service reconstructs every
session and cursor from the log alone. Served clip payloads are always
sanitized.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import (
    FileResponse,
    HTMLResponse,
    JSONResponse,
    PlainTextResponse,
    RedirectResponse,
)
from fastapi.staticfiles import StaticFiles

from .schema import (
    Clip,
    SchemaError,
    ValuePools,
    clip_to_dict,
    parse_clip,
    sanitize_clip,
)

SCORE_MIN, SCORE_MAX = 1, 100


class StudyError(ValueError):
    """Request-level failure; ``status`` maps it onto HTTP."""

    status = 400


class UnknownParticipant(StudyError):
    status = 404


class UnknownClip(StudyError):
    status = 404


class InvalidRating(StudyError):
    status = 422


@dataclass(frozen=True)
class StudyConfig:
    anchors: tuple[str, ...]
    seed: int = 0
    session_size: int = 50
    log_path: Path = Path("ratings.jsonl")
    media_root: Path | None = None
    ui_dir: Path | None = None


@dataclass
class Session:
    participant_id: str
    assigned: tuple[str, ...]  # ordered clip ids
    anchors: tuple[str, ...]
    created_at: str
    cursor: int = 0  # index of the first unrated assigned clip

    def to_dict(self, done: int) -> dict:
        return {
            "participant_id": self.participant_id,
            "assigned": list(self.assigned),
            "anchors": list(self.anchors),
            "created_at": self.created_at,
            "cursor": self.cursor,
            "done": done,
            "total": len(self.assigned),
        }


@dataclass(frozen=True)
class RatingRecord:
    participant_id: str
    clip_id: str
    scores: dict[str, int]  # anchor -> 1..100
    submitted_at: str

    def to_dict(self) -> dict:
        return {
            "participant_id": self.participant_id,
            "clip_id": self.clip_id,
            "scores": dict(sorted(self.scores.items())),
            "submitted_at": self.submitted_at,
        }


class RatingStore:
    """Append-only JSONL of rating records with a last-write-wins index.

    The log is never rewritten; restarting re-reads it and reproduces
    the same effective state and export byte for byte.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[tuple[str, str], RatingRecord] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._remember(self._parse(line))

    @staticmethod
    def _parse(line: str) -> RatingRecord:
        doc = json.loads(line)
        return RatingRecord(
            participant_id=doc["participant_id"],
            clip_id=doc["clip_id"],
            scores={a: int(v) for a, v in doc["scores"].items()},
            submitted_at=doc["submitted_at"],
        )

    def _remember(self, record: RatingRecord) -> None:
        self._index[(record.participant_id, record.clip_id)] = record

    def append(self, record: RatingRecord) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            self._remember(record)

    def effective(self) -> list[RatingRecord]:
        return [self._index[k] for k in sorted(self._index)]

    def rated_clips(self, participant_id: str) -> set[str]:
        return {c for (p, c) in self._index if p == participant_id}

    def __len__(self) -> int:
        return len(self._index)


def export_ratings(store: RatingStore) -> str:
    """Long-form CSV, one row per effective (participant, clip, anchor),
    ordered by that triple; header only when the store is empty."""
    lines = ["participant_id,clip_id,anchor,score"]
    for record in store.effective():
        for anchor in sorted(record.scores):
            lines.append(f"{record.participant_id},{record.clip_id},{anchor},{record.scores[anchor]}")
    return "\n".join(lines) + "\n"


class Study:
    """All study state behind the HTTP surface; usable headlessly."""

    def __init__(self, config: StudyConfig, clips: list[Clip], media_urls: dict[str, str] | None = None):
        if len(config.anchors) < 2:
            raise ValueError("need at least 2 anchor professionals")
        if len(clips) < config.session_size:
            raise ValueError(
                f"study pool of {len(clips)} is smaller than the session size {config.session_size}"
            )
        self.config = config
        self.pool: dict[str, Clip] = {}
        for clip in clips:
            if clip.clip_id in self.pool:
                raise ValueError(f"duplicate clip_id {clip.clip_id!r} in study pool")
            self.pool[clip.clip_id] = sanitize_clip(clip)
        self.pool_order = [c.clip_id for c in clips]
        self.media_urls = dict(media_urls or {})
        self.store = RatingStore(config.log_path)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _assignment(self, participant_id: str) -> tuple[str, ...]:
        digest = hashlib.sha256(participant_id.encode("utf-8")).digest()
        entropy = int.from_bytes(digest[:8], "big")
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, entropy]))
        order = rng.permutation(len(self.pool_order))
        return tuple(self.pool_order[i] for i in order[: self.config.session_size])

    def start_session(self, participant_id: str) -> Session:
        participant_id = participant_id.strip()
        if not participant_id:
            raise InvalidRating("participant id must be non-empty")
        with self._lock:
            session = self._sessions.get(participant_id)
            if session is None:
                session = Session(
                    participant_id=participant_id,
                    assigned=self._assignment(participant_id),
                    anchors=self.config.anchors,
                    created_at=dt.datetime.now(dt.timezone.utc).isoformat(),
                )
                self._sessions[participant_id] = session
            self._sync_cursor(session)
            return session

    def _sync_cursor(self, session: Session) -> None:
        rated = self.store.rated_clips(session.participant_id)
        session.cursor = next(
            (i for i, cid in enumerate(session.assigned) if cid not in rated),
            len(session.assigned),
        )

    def progress(self, participant_id: str) -> tuple[int, int, int]:
        session = self._sessions.get(participant_id)
        if session is None:
            raise UnknownParticipant(f"no session for participant {participant_id!r}")
        rated = self.store.rated_clips(participant_id)
        done = sum(1 for cid in session.assigned if cid in rated)
        self._sync_cursor(session)
        return done, len(session.assigned), session.cursor

    def get_clip(self, clip_id: str) -> dict:
        clip = self.pool.get(clip_id)
        if clip is None:
            raise UnknownClip(f"unknown clip {clip_id!r}")
        doc = clip_to_dict(clip)
        doc["media_url"] = self.media_urls.get(clip_id)
        return doc

    def submit(self, participant_id: str, clip_id: str, scores: dict) -> tuple[int, int, int]:
        session = self._sessions.get(participant_id)
        if session is None:
            raise UnknownParticipant(f"no session for participant {participant_id!r}")
        if clip_id not in session.assigned:
            raise UnknownClip(f"clip {clip_id!r} is not in this session")
        if not isinstance(scores, dict):
            raise InvalidRating("scores must be an object of anchor -> integer")
        if set(scores) != set(session.anchors):
            raise InvalidRating(
                f"scores must cover exactly the anchors {sorted(session.anchors)}"
            )
        clean: dict[str, int] = {}
        for anchor, value in scores.items():
            if isinstance(value, bool) or not isinstance(value, int):
                raise InvalidRating(f"score for {anchor!r} must be an integer")
            if not SCORE_MIN <= value <= SCORE_MAX:
                raise InvalidRating(
                    f"score for {anchor!r} must be in [{SCORE_MIN}, {SCORE_MAX}]"
                )
            clean[anchor] = value
        self.store.append(
            RatingRecord(
                participant_id=participant_id,
                clip_id=clip_id,
                scores=clean,
                submitted_at=dt.datetime.now(dt.timezone.utc).isoformat(),
            )
        )
        return self.progress(participant_id)


# ------------------------------------------------------------------ HTTP


def create_app(study: Study):
    app = FastAPI(title="style rating study")
    app.state.study = study

    @app.exception_handler(StudyError)
    async def study_error(request: Request, exc: StudyError):
        return JSONResponse(status_code=exc.status, content={"detail": str(exc)})

    @app.get("/api/session")
    def api_session(participant: str):
        session = study.start_session(participant)
        done, _, _ = study.progress(session.participant_id)
        return session.to_dict(done)

    @app.get("/api/clip/{clip_id}")
    def api_clip(clip_id: str):
        return study.get_clip(clip_id)

    @app.post("/api/rating")
    async def api_rating(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise InvalidRating("request body must be JSON")
        if not isinstance(body, dict):
            raise InvalidRating("request body must be a JSON object")
        for key in ("participant_id", "clip_id", "scores"):
            if key not in body:
                raise InvalidRating(f"missing field {key!r}")
        done, total, cursor = study.submit(
            str(body["participant_id"]), str(body["clip_id"]), body["scores"]
        )
        return {"done": done, "total": total, "cursor": cursor}

    @app.get("/api/progress")
    def api_progress(participant: str):
        done, total, cursor = study.progress(participant)
        return {"done": done, "total": total, "cursor": cursor}

    @app.get("/api/export")
    def api_export():
        return PlainTextResponse(export_ratings(study.store), media_type="text/csv")

    @app.get("/media/{clip_id}")
    def media(clip_id: str):
        root = study.config.media_root
        if root is not None:
            for candidate in sorted(Path(root).glob(f"{clip_id}.*")):
                return FileResponse(candidate)
        url = study.media_urls.get(clip_id)
        if url:
            return RedirectResponse(url, status_code=307)
        raise UnknownClip(f"no media for clip {clip_id!r}")

    ui = study.config.ui_dir
    if ui is not None and Path(ui).is_dir():
        app.mount("/", StaticFiles(directory=str(ui), html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index():
            return (
                "<!doctype html><title>style rating study</title>"
                "<h1>style rating study</h1>"
                "<p>No UI bundle is installed. The JSON API lives under /api/.</p>"
            )

    return app


# ------------------------------------------------------------- VLM adapter


class VlmError(RuntimeError):
    """Annotation failed; ``archive`` points at the saved raw responses."""

    def __init__(self, message: str, archive: Path | None = None):
        super().__init__(message)
        self.archive = archive


PROMPT_HEADER = """You are annotating one esports gameplay clip. Watch the clip and emit the key actions of the focus player as a single JSON object, and nothing else: no prose, no markdown, no code fences.

The JSON object must have this shape:
{
  "clip_id": "<string identifier for this clip>",
  "map": "<one value from MAP_POOL>",
  "player_id": "<string, may be empty>",
  "events": [
    {
      "timestamp": <seconds from clip start, non-decreasing>,
      "team": "<one value from TEAM_POOL>",
      "action": "<one value from ACTION_POOL>",
      "location": "<one value from LOCATION_POOL for the clip's map>",
      "weapon": ["<zero or more values from WEAPON_POOL>"],
      "outcome": ["<zero or more distinct values from OUTCOME_POOL>"],
      "impact": ["<zero or more distinct values from IMPACT_POOL>"],
      "damage": <integer 0-100>
    }
  ]
}

Rules:
1. Sample roughly one event every 2 seconds of play; skip dead time.
2. Timestamps are seconds from the start of the clip and never decrease.
3. Every categorical value must be copied exactly from the pools below; never invent new values.
4. The location must be legal for the clip's map.
5. Damage is the integer amount dealt at that event, 0 when none.
6. Omit weapon, outcome, or impact rather than guessing.

Value pools:
"""


def build_prompt(pools: ValuePools, violations: list[str] | None = None) -> str:
    prompt = PROMPT_HEADER + json.dumps(pools.to_document(), indent=2, sort_keys=True)
    if violations:
        prompt += (
            "\n\nYour previous response violated the rules:\n"
            + "\n".join(f"- {v}" for v in violations)
            + "\nRe-emit the full corrected JSON object."
        )
    return prompt


_FENCE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n(.*?)\n?\s*```\s*$", re.DOTALL)


def strip_fences(text: str) -> str:
    m = _FENCE.match(text)
    return m.group(1) if m else text


class FileStubProvider:
    """Canned provider: returns prepared responses in order."""

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self.prompts: list[str] = []

    def complete(self, prompt: str, media_ref: str) -> str:
        self.prompts.append(prompt)
        if not self._responses:
            raise VlmError("stub provider ran out of responses")
        return self._responses.pop(0)


class HttpJsonProvider:
    """Generic JSON-over-HTTP completion endpoint.

    POSTs ``{"prompt", "media_url"}`` with an optional bearer token and
    reads the first of ``output``/``text``/``completion`` from the JSON
    response (raw body as a fallback).
    """

    def __init__(self, url: str, token: str | None = None, timeout: float = 60.0):
        self.url = url
        self.token = token
        self.timeout = timeout

    def complete(self, prompt: str, media_ref: str) -> str:
        import httpx

        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            resp = httpx.post(
                self.url,
                json={"prompt": prompt, "media_url": media_ref},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise VlmError(f"transport failure: {exc}") from exc
        try:
            doc = resp.json()
        except json.JSONDecodeError:
            return resp.text
        if isinstance(doc, dict):
            for key in ("output", "text", "completion"):
                if isinstance(doc.get(key), str):
                    return doc[key]
        return resp.text


def _archive_responses(archive_dir: Path | None, media_ref: str, responses: list[str]) -> Path | None:
    if archive_dir is None:
        return None
    archive_dir.mkdir(parents=True, exist_ok=True)
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    slug = re.sub(r"[^A-Za-z0-9_.-]", "_", media_ref)[-40:]
    path = archive_dir / f"vlm_{stamp}_{slug}.txt"
    sep = "\n" + "-" * 60 + "\n"
    path.write_text(sep.join(responses), encoding="utf-8")
    return path


def vlm_annotate(
    media_ref: str,
    pools: ValuePools,
    provider,
    archive_dir: str | Path | None = None,
) -> Clip:
    """Clip from one constrained vision-language annotation call.

    The response must validate under the strict clip schema; a single
    retry carries the violation list back to the provider, after which
    both raw responses are archived and the failure raised.
    """
    archive_dir = Path(archive_dir) if archive_dir is not None else None
    responses: list[str] = []
    violations: list[str] | None = None
    for attempt in range(2):
        raw = provider.complete(build_prompt(pools, violations), media_ref)
        responses.append(raw)
        text = strip_fences(raw)
        try:
            return parse_clip(text, pools)
        except SchemaError as exc:
            violations = [str(exc)]
    archive = _archive_responses(archive_dir, media_ref, responses)
    where = f" (responses archived at {archive})" if archive else ""
    raise VlmError(f"annotation failed after retry: {violations[0]}{where}", archive)
