"""Trajectory data model: value pools, clip parsing, sanitization, corpus ingest.

Clips are exchanged as JSON (one object per file, or one per line in a
``.jsonl``). Every categorical field must come from a closed vocabulary
("value pool"); parsing is strict and rejects rather than repairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

POOL_KEYS = (
    "MAP_POOL",
    "TEAM_POOL",
    "ACTION_POOL",
    "WEAPON_POOL",
    "LOCATION_POOL",
    "OUTCOME_POOL",
    "IMPACT_POOL",
)

# Built-in default vocabularies for the supported maps.
DEFAULT_POOLS_DOC: dict[str, Any] = {
    "MAP_POOL": ["de_mirage", "de_inferno"],
    "TEAM_POOL": ["CT", "T"],
    "ACTION_POOL": [
        "peek",
        "throw_grenade",
        "fire_weapon",
        "plant_bomb",
        "defuse_kit",
        "hold_angle",
    ],
    "WEAPON_POOL": [
        "ak47",
        "m4a4",
        "awp",
        "usp-s",
        "glock",
        "grenade",
        "smoke",
        "flash",
        "molly",
    ],
    "LOCATION_POOL": {
        "de_mirage": ["mid", "A_site", "palace", "connector", "B_apps", "catwalk"],
        "de_inferno": ["banana", "B_site", "A_site", "long", "short", "apartments"],
    },
    "OUTCOME_POOL": ["EnemySpotted", "Death", "EnemyDamaged", "FriendDamaged", "Assist"],
    "IMPACT_POOL": [
        "LossControl",
        "MapInformation",
        "CT_Depletion",
        "T_Advantage",
        "ProjectileLoss",
    ],
}


class SchemaError(ValueError):
    """A document violated the clip schema.

    ``path`` locates the offending field, e.g. ``events[3].location``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        self.reason = message
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class ValuePools:
    """Closed vocabularies every trajectory event must draw from."""

    maps: frozenset[str]
    teams: frozenset[str]
    actions: frozenset[str]
    weapons: frozenset[str]
    locations_by_map: dict[str, frozenset[str]]
    outcomes: frozenset[str]
    impacts: frozenset[str]
    version: str = ""

    def locations(self, map_name: str) -> frozenset[str]:
        return self.locations_by_map[map_name]

    def to_document(self) -> dict[str, Any]:
        return {
            "MAP_POOL": sorted(self.maps),
            "TEAM_POOL": sorted(self.teams),
            "ACTION_POOL": sorted(self.actions),
            "WEAPON_POOL": sorted(self.weapons),
            "LOCATION_POOL": {m: sorted(v) for m, v in sorted(self.locations_by_map.items())},
            "OUTCOME_POOL": sorted(self.outcomes),
            "IMPACT_POOL": sorted(self.impacts),
        }


@dataclass(frozen=True)
class TrajectoryEvent:
    """One timestamped state-action record for a single player."""

    timestamp: float
    player_id: str
    team: str
    action: str
    location: str
    weapon: tuple[str, ...] = ()
    outcome: frozenset[str] = frozenset()
    impact: frozenset[str] = frozenset()
    targets: tuple[str, ...] = ()
    damage: int = 0


@dataclass(frozen=True)
class Clip:
    """An ordered, single-map sequence of trajectory events."""

    clip_id: str
    map: str
    player_id: str = ""
    archetype_label: str | None = None
    events: tuple[TrajectoryEvent, ...] = ()


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    label: str | None = None
    media_url: str | None = None


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    pools_version: str = ""


@dataclass
class IngestReport:
    """Per-clip failures collected while loading a corpus."""

    errors: list[tuple[str, str]] = field(default_factory=list)  # (clip_id, message)

    def add(self, clip_id: str, message: str) -> None:
        self.errors.append((clip_id, message))

    @property
    def ok(self) -> bool:
        return not self.errors


def _pools_version(doc: dict[str, Any]) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def load_pools(source: dict[str, Any] | str | Path | None = None) -> ValuePools:
    """Build :class:`ValuePools` from a pool-definition document.

    ``source`` may be a dict, a JSON string, a path to a JSON file, or None
    for the built-in defaults. The document must define all seven pools and
    every LOCATION_POOL key must appear in MAP_POOL.
    """
    if source is None:
        doc = DEFAULT_POOLS_DOC
    elif isinstance(source, dict):
        doc = source
    else:
        text = Path(source).read_text("utf-8") if isinstance(source, Path) else str(source)
        if isinstance(source, str) and not text.lstrip().startswith("{"):
            text = Path(source).read_text("utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed pools JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("pools document must be a JSON object")

    for key in POOL_KEYS:
        if key not in doc:
            raise SchemaError(f"missing pool section {key}")

    def _tokens(key: str) -> frozenset[str]:
        values = doc[key]
        if not isinstance(values, list) or not values or not all(isinstance(v, str) for v in values):
            raise SchemaError(f"{key} must be a non-empty list of strings", key)
        return frozenset(values)

    maps = _tokens("MAP_POOL")
    loc_doc = doc["LOCATION_POOL"]
    if not isinstance(loc_doc, dict) or not loc_doc:
        raise SchemaError("LOCATION_POOL must be a non-empty object", "LOCATION_POOL")
    locations: dict[str, frozenset[str]] = {}
    for map_name, locs in loc_doc.items():
        if map_name not in maps:
            raise SchemaError(
                f"location map key {map_name!r} is not in MAP_POOL", f"LOCATION_POOL.{map_name}"
            )
        if not isinstance(locs, list) or not locs or not all(isinstance(v, str) for v in locs):
            raise SchemaError("must be a non-empty list of strings", f"LOCATION_POOL.{map_name}")
        locations[map_name] = frozenset(locs)

    canonical_doc = {
        "MAP_POOL": sorted(maps),
        "TEAM_POOL": sorted(_tokens("TEAM_POOL")),
        "ACTION_POOL": sorted(_tokens("ACTION_POOL")),
        "WEAPON_POOL": sorted(_tokens("WEAPON_POOL")),
        "LOCATION_POOL": {m: sorted(v) for m, v in sorted(locations.items())},
        "OUTCOME_POOL": sorted(_tokens("OUTCOME_POOL")),
        "IMPACT_POOL": sorted(_tokens("IMPACT_POOL")),
    }
    return ValuePools(
        maps=maps,
        teams=_tokens("TEAM_POOL"),
        actions=_tokens("ACTION_POOL"),
        weapons=_tokens("WEAPON_POOL"),
        locations_by_map=locations,
        outcomes=_tokens("OUTCOME_POOL"),
        impacts=_tokens("IMPACT_POOL"),
        version=_pools_version(canonical_doc),
    )


_CLIP_KEYS = {"clip_id", "match_id", "map", "player_id", "archetype_label", "events"}
_EVENT_KEYS = {
    "timestamp",
    "player_id",
    "team",
    "action",
    "location",
    "weapon",
    "outcome",
    "impact",
    "targets",
    "damage",
}


def _require_str(obj: dict, key: str, path: str) -> str:
    if key not in obj:
        raise SchemaError(f"missing required key {key!r}", path)
    value = obj[key]
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{key} must be a non-empty string", f"{path}.{key}" if path else key)
    return value


def _string_list(value: Any, path: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError("must be a list of strings", path)
    return value


def _token_set(value: Any, pool: frozenset[str], pool_name: str, path: str) -> frozenset[str]:
    items = _string_list(value, path)
    seen = set()
    for item in items:
        if item in seen:
            raise SchemaError(f"duplicate token {item!r}", path)
        seen.add(item)
        if item not in pool:
            raise SchemaError(f"token {item!r} not in {pool_name}", path)
    return frozenset(items)


def _parse_event(
    raw: Any, index: int, pools: ValuePools, map_name: str, prev_ts: float, clip_player: str
) -> TrajectoryEvent:
    path = f"events[{index}]"
    if not isinstance(raw, dict):
        raise SchemaError("event must be a JSON object", path)
    for key in raw:
        if key not in _EVENT_KEYS:
            raise SchemaError(f"unknown event key {key!r}", path)

    ts = raw.get("timestamp")
    if not isinstance(ts, (int, float)) or isinstance(ts, bool):
        raise SchemaError("timestamp must be a number", f"{path}.timestamp")
    ts = float(ts)
    if ts < 0:
        raise SchemaError("timestamp must be non-negative", f"{path}.timestamp")
    if ts < prev_ts:
        raise SchemaError(
            f"timestamps must be non-decreasing ({ts} after {prev_ts})", f"{path}.timestamp"
        )

    team = _require_str(raw, "team", path)
    if team not in pools.teams:
        raise SchemaError(f"token {team!r} not in TEAM_POOL", f"{path}.team")
    action = _require_str(raw, "action", path)
    if action not in pools.actions:
        raise SchemaError(f"token {action!r} not in ACTION_POOL", f"{path}.action")
    location = _require_str(raw, "location", path)
    if location not in pools.locations_by_map[map_name]:
        raise SchemaError(
            f"location {location!r} not in LOCATION_POOL[{map_name!r}]", f"{path}.location"
        )

    weapon = _string_list(raw.get("weapon", []), f"{path}.weapon")
    for w in weapon:
        if w not in pools.weapons:
            raise SchemaError(f"token {w!r} not in WEAPON_POOL", f"{path}.weapon")
    outcome = _token_set(raw.get("outcome", []), pools.outcomes, "OUTCOME_POOL", f"{path}.outcome")
    impact = _token_set(raw.get("impact", []), pools.impacts, "IMPACT_POOL", f"{path}.impact")
    targets = _string_list(raw.get("targets", []), f"{path}.targets")

    damage = raw.get("damage", 0)
    if not isinstance(damage, int) or isinstance(damage, bool):
        raise SchemaError("damage must be an integer", f"{path}.damage")
    if not 0 <= damage <= 100:
        raise SchemaError(f"damage {damage} out of range 0-100", f"{path}.damage")

    player_id = raw.get("player_id", clip_player)
    if not isinstance(player_id, str):
        raise SchemaError("player_id must be a string", f"{path}.player_id")

    return TrajectoryEvent(
        timestamp=ts,
        player_id=player_id,
        team=team,
        action=action,
        location=location,
        weapon=tuple(weapon),
        outcome=outcome,
        impact=impact,
        targets=tuple(targets),
        damage=damage,
    )


def parse_clip(document: str | dict[str, Any], pools: ValuePools) -> Clip:
    """Parse and validate one clip document against ``pools``.

    Accepts a JSON string or an already-decoded object. Rejects unknown
    top-level keys, out-of-pool tokens, decreasing timestamps, and empty
    event lists; never re-sorts or repairs.
    """
    if isinstance(document, str):
        try:
            obj = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc}") from exc
    else:
        obj = document
    if not isinstance(obj, dict):
        raise SchemaError("clip document must be a JSON object")

    for key in obj:
        if key not in _CLIP_KEYS:
            raise SchemaError(f"unknown top-level key {key!r}")

    clip_id = obj.get("clip_id") or obj.get("match_id")
    if not isinstance(clip_id, str) or not clip_id:
        raise SchemaError("clip_id (or match_id) must be a non-empty string", "clip_id")

    map_name = _require_str(obj, "map", "")
    if map_name not in pools.maps:
        raise SchemaError(f"token {map_name!r} not in MAP_POOL", "map")

    player_id = obj.get("player_id", "")
    if not isinstance(player_id, str):
        raise SchemaError("player_id must be a string", "player_id")
    label = obj.get("archetype_label")
    if label is not None and not isinstance(label, str):
        raise SchemaError("archetype_label must be a string", "archetype_label")

    raw_events = obj.get("events")
    if not isinstance(raw_events, list):
        raise SchemaError("events must be a list", "events")
    if not raw_events:
        raise SchemaError("events must be non-empty", "events")

    events = []
    prev_ts = 0.0
    for i, raw in enumerate(raw_events):
        event = _parse_event(raw, i, pools, map_name, prev_ts, player_id)
        prev_ts = event.timestamp
        events.append(event)

    return Clip(
        clip_id=clip_id,
        map=map_name,
        player_id=player_id,
        archetype_label=label,
        events=tuple(events),
    )


def clip_to_dict(clip: Clip) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "clip_id": clip.clip_id,
        "map": clip.map,
        "player_id": clip.player_id,
        "events": [
            {
                "timestamp": e.timestamp,
                "player_id": e.player_id,
                "team": e.team,
                "action": e.action,
                "location": e.location,
                "weapon": list(e.weapon),
                "outcome": sorted(e.outcome),
                "impact": sorted(e.impact),
                "targets": list(e.targets),
                "damage": e.damage,
            }
            for e in clip.events
        ],
    }
    if clip.archetype_label is not None:
        doc["archetype_label"] = clip.archetype_label
    return doc


def serialize_clip(clip: Clip) -> str:
    """Canonical JSON for a clip; parse_clip round-trips it exactly."""
    return json.dumps(clip_to_dict(clip), sort_keys=True, separators=(",", ":"))


def sanitize_clip(clip: Clip) -> Clip:
    """Strip identity metadata, keeping gameplay content bit-identical.

    Player ids (clip-level, per-event, and targets) are remapped to stable
    synthetic ids ``player_1``, ``player_2``, ... in first-appearance order,
    and the archetype label is dropped. Idempotent.
    """
    mapping: dict[str, str] = {}

    def synth(pid: str) -> str:
        if pid == "":
            return ""
        if pid not in mapping:
            mapping[pid] = f"player_{len(mapping) + 1}"
        return mapping[pid]

    new_player = synth(clip.player_id)
    new_events = tuple(
        replace(
            e,
            player_id=synth(e.player_id),
            targets=tuple(synth(t) for t in e.targets),
        )
        for e in clip.events
    )
    return Clip(
        clip_id=clip.clip_id,
        map=clip.map,
        player_id=new_player,
        archetype_label=None,
        events=new_events,
    )


def load_manifest(source: str | Path | list | dict) -> CorpusManifest:
    """Read a corpus manifest.

    The canonical format is a JSON list of ``{clip_id, path, label?,
    media_url?}``; a wrapped ``{"pools_version": ..., "clips": [...]}``
    object is also accepted.
    """
    if isinstance(source, (str, Path)):
        try:
            obj = json.loads(Path(source).read_text("utf-8"))
        except OSError as exc:
            raise SchemaError(f"unreadable manifest: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed manifest JSON: {exc}") from exc
    else:
        obj = source

    pools_version = ""
    if isinstance(obj, dict):
        pools_version = obj.get("pools_version", "")
        obj = obj.get("clips")
    if not isinstance(obj, list):
        raise SchemaError("manifest must be a JSON list of clip entries")

    entries = []
    seen: set[str] = set()
    for i, raw in enumerate(obj):
        path = f"[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError("manifest entry must be an object", path)
        clip_id = _require_str(raw, "clip_id", path)
        if clip_id in seen:
            raise SchemaError(f"duplicate clip_id {clip_id!r}", path)
        seen.add(clip_id)
        entries.append(
            ManifestEntry(
                clip_id=clip_id,
                path=_require_str(raw, "path", path),
                label=raw.get("label"),
                media_url=raw.get("media_url"),
            )
        )
    return CorpusManifest(entries=tuple(entries), pools_version=pools_version)


def ingest_corpus(
    manifest: CorpusManifest,
    pools: ValuePools,
    base_dir: str | Path = ".",
) -> tuple[list[Clip], IngestReport]:
    """Load every manifest clip; invalid clips are reported, not fatal.

    Relative entry paths resolve against ``base_dir``. Valid clips come
    back in manifest order with manifest labels attached.
    """
    if manifest.pools_version and manifest.pools_version != pools.version:
        raise SchemaError(
            f"manifest pools_version {manifest.pools_version!r} does not match "
            f"loaded pools {pools.version!r}"
        )
    base = Path(base_dir)
    clips: list[Clip] = []
    report = IngestReport()
    for entry in manifest.entries:
        path = Path(entry.path)
        if not path.is_absolute():
            path = base / path
        try:
            clip = parse_clip(path.read_text("utf-8"), pools)
        except OSError as exc:
            report.add(entry.clip_id, f"unreadable clip file: {exc}")
            continue
        except SchemaError as exc:
            report.add(entry.clip_id, str(exc))
            continue
        if clip.clip_id != entry.clip_id:
            report.add(
                entry.clip_id,
                f"clip_id mismatch: manifest says {entry.clip_id!r}, file says {clip.clip_id!r}",
            )
            continue
        if entry.label is not None:
            clip = replace(clip, archetype_label=entry.label)
        clips.append(clip)
    return clips, report


def parse_clips_jsonl(source: str | Path, pools: ValuePools) -> tuple[list[Clip], IngestReport]:
    """Parse a one-clip-per-line JSONL document."""
    text = Path(source).read_text("utf-8") if isinstance(source, Path) else source
    clips: list[Clip] = []
    report = IngestReport()
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            clips.append(parse_clip(line, pools))
        except SchemaError as exc:
            report.add(f"line {i + 1}", str(exc))
    return clips, report


def iter_events(clips: Iterable[Clip]) -> Iterable[TrajectoryEvent]:
    for clip in clips:
        yield from clip.events
