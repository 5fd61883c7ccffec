"""Style-based scouting: learned per-professional rewards over gameplay clips."""

__version__ = "0.1.0"

from .schema import (
    Clip,
    SchemaError,
    TrajectoryEvent,
    ValuePools,
    ingest_corpus,
    load_manifest,
    load_pools,
    parse_clip,
    sanitize_clip,
    serialize_clip,
)

__all__ = [
    "__version__",
    "Clip",
    "SchemaError",
    "TrajectoryEvent",
    "ValuePools",
    "ingest_corpus",
    "load_manifest",
    "load_pools",
    "parse_clip",
    "sanitize_clip",
    "serialize_clip",
]
