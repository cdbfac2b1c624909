"""Core record types and their JSON-lines encodings.

JSONL field order is fixed so that repeated runs produce byte-identical
output files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .errors import DataError


@dataclass(frozen=True, slots=True)
class WatchEvent:
    """One viewer's watch of one video."""

    video_id: str
    watch_time_s: float
    liked: bool | None = None

    def validate(self) -> None:
        if not self.video_id:
            raise DataError("watch event has empty video_id")
        if not math.isfinite(self.watch_time_s) or self.watch_time_s < 0:
            raise DataError(
                f"watch event for {self.video_id!r} has invalid watch_time_s "
                f"{self.watch_time_s!r}"
            )


@dataclass(frozen=True, slots=True)
class VideoMeta:
    """Static per-video properties."""

    video_id: str
    duration_s: float
    frame_rate: float

    def validate(self) -> None:
        if not self.video_id:
            raise DataError("video meta has empty video_id")
        if not math.isfinite(self.duration_s) or self.duration_s <= 0:
            raise DataError(f"video {self.video_id!r}: duration_s must be positive")
        if not math.isfinite(self.frame_rate) or self.frame_rate <= 0:
            raise DataError(f"video {self.video_id!r}: frame_rate must be positive")


@dataclass(frozen=True, slots=True)
class VideoRecord:
    """Per-video engagement aggregate.

    ``awp`` may exceed 1 when viewers rewatch; ``ecr`` is the fraction of
    views strictly longer than the configured threshold and always lies in
    [0, 1]. ``like_rate`` and ``nawp`` are optional until computed.
    """

    video_id: str
    duration_s: float
    views: int
    awt_s: float
    awp: float
    ecr: float
    like_rate: float | None = None
    nawp: float | None = None


# Fixed key order for diff-stable JSONL output.
_RECORD_KEYS = ("video_id", "duration_s", "views", "awt_s", "awp", "ecr", "like_rate", "nawp")


def record_to_json(record: VideoRecord) -> str:
    payload = {key: getattr(record, key) for key in _RECORD_KEYS}
    return json.dumps(payload, separators=(",", ":"))


def record_from_json(line: str) -> VideoRecord:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid record JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataError("record line is not a JSON object")
    try:
        return VideoRecord(
            video_id=str(payload["video_id"]),
            duration_s=float(payload["duration_s"]),
            views=int(payload["views"]),
            awt_s=float(payload["awt_s"]),
            awp=float(payload["awp"]),
            ecr=float(payload["ecr"]),
            like_rate=None if payload.get("like_rate") is None else float(payload["like_rate"]),
            nawp=None if payload.get("nawp") is None else float(payload["nawp"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid record fields: {exc}") from exc


def write_records(f: IO[str], records: Iterable[VideoRecord]) -> None:
    for record in records:
        f.write(record_to_json(record))
        f.write("\n")


def read_records(f: IO[str]) -> list[VideoRecord]:
    return [record_from_json(line) for line in f if line.strip()]


def meta_to_json(meta: VideoMeta) -> str:
    payload = {
        "video_id": meta.video_id,
        "duration_s": meta.duration_s,
        "frame_rate": meta.frame_rate,
    }
    return json.dumps(payload, separators=(",", ":"))


def read_metas(f: IO[str]) -> dict[str, VideoMeta]:
    """Load a meta table keyed by video_id; duplicate ids are an error."""
    metas: dict[str, VideoMeta] = {}
    for line_no, line in enumerate(f, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            meta = VideoMeta(
                video_id=str(payload["video_id"]),
                duration_s=float(payload["duration_s"]),
                frame_rate=float(payload["frame_rate"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"meta line {line_no}: {exc}") from exc
        meta.validate()
        if meta.video_id in metas:
            raise DataError(f"meta line {line_no}: duplicate video_id {meta.video_id!r}")
        metas[meta.video_id] = meta
    return metas


def event_to_json(event: WatchEvent) -> str:
    payload: dict[str, object] = {
        "video_id": event.video_id,
        "watch_time_s": event.watch_time_s,
    }
    if event.liked is not None:
        payload["liked"] = event.liked
    return json.dumps(payload, separators=(",", ":"))


def write_events(f: IO[str], events: Iterable[WatchEvent]) -> None:
    for event in events:
        f.write(event_to_json(event))
        f.write("\n")


def iter_lines(f: IO[str] | IO[bytes]) -> Iterator[str]:
    """Yield text lines from a text or binary stream (UTF-8)."""
    for line in f:
        if isinstance(line, bytes):
            yield line.decode("utf-8", errors="replace")
        else:
            yield line
