"""Event ingestion: raw user event records, fixed-width activity binning, and
the coarse workload context that keys the parameter memory.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyInput, InvalidWindow, ParseError

logger = logging.getLogger(__name__)

ACTION_TYPES = ("post", "retweet", "mention", "reply", "other")

CSV_HEADER = ["user_id", "timestamp", "action_type", "hashtags", "sentiment", "target_user"]


@dataclass(frozen=True)
class EventRecord:
    user_id: str
    timestamp: int
    action_type: str = "other"
    hashtags: tuple[str, ...] = ()
    sentiment: Optional[float] = None
    target_user: Optional[str] = None

    def __post_init__(self):
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if self.action_type not in ACTION_TYPES:
            raise ValueError(f"unknown action_type {self.action_type!r}")
        if self.sentiment is not None and not -1.0 <= self.sentiment <= 1.0:
            raise ValueError("sentiment must lie in [-1, 1]")


@dataclass(frozen=True)
class ActivitySeries:
    """Per-user event counts over equal-width bins of [window_start, window_end)."""

    user_id: str
    window_start: int
    window_end: int
    bin_width: int
    values: np.ndarray

    def __post_init__(self):
        expected = n_bins(self.window_start, self.window_end, self.bin_width)
        if len(self.values) != expected:
            raise ValueError(f"expected {expected} bins, got {len(self.values)}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PipelineContext:
    user_count: int
    mean_activity: float
    window_span: int
    bucket_key: str = field(default="")

    def __post_init__(self):
        if self.user_count < 1:
            raise ValueError("user_count must be >= 1")
        if self.window_span <= 0:
            raise ValueError("window_span must be > 0")
        if not self.bucket_key:
            object.__setattr__(self, "bucket_key", make_bucket_key(self.user_count, self.mean_activity, self.window_span))


def n_bins(start: int, end: int, bin_width: int) -> int:
    return math.ceil((end - start) / bin_width)


def make_bucket_key(user_count: int, mean_activity: float, window_span: float) -> str:
    """Quantize a workload into a coarse log2 bucket so nearby workloads share history."""
    u = math.floor(math.log2(user_count)) if user_count >= 1 else 0
    a = math.floor(math.log2(1.0 + max(0.0, mean_activity)))
    span_hours = window_span / 3600.0
    s = math.floor(math.log2(span_hours + 1.0))
    return f"u{u}-a{a}-s{s}"


def _parse_sentiment(raw) -> Optional[float]:
    if raw is None or raw == "":
        return None
    return float(raw)


def _parse_hashtags_json(raw) -> tuple[str, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ValueError("hashtags must be a list")
    return tuple(str(h) for h in raw)


def _record_from_dict(obj: dict) -> EventRecord:
    return EventRecord(
        user_id=str(obj["user_id"]),
        timestamp=int(obj["timestamp"]),
        action_type=obj.get("action_type", "other"),
        hashtags=_parse_hashtags_json(obj.get("hashtags", [])),
        sentiment=_parse_sentiment(obj.get("sentiment")),
        target_user=obj.get("target_user") or None,
    )


def load_events(path: str | Path, format: str = "jsonl") -> list[EventRecord]:
    """Read EventRecords from a jsonl or csv file, in file order.

    Raises ParseError naming the 1-based row index for any malformed row.
    """
    path = Path(path)
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unsupported format {format!r}")
    if not path.exists():
        raise IOError(f"no such file: {path}")

    records: list[EventRecord] = []
    if format == "jsonl":
        with path.open() as fh:
            for i, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(_record_from_dict(json.loads(line)))
                except (KeyError, ValueError, TypeError) as exc:
                    raise ParseError(i, str(exc)) from exc
    else:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or list(reader.fieldnames) != CSV_HEADER:
                raise ParseError(1, f"csv header must be {','.join(CSV_HEADER)}")
            for i, row in enumerate(reader, start=2):
                try:
                    hashtags = tuple(h for h in (row.get("hashtags") or "").split("|") if h)
                    records.append(
                        EventRecord(
                            user_id=row["user_id"],
                            timestamp=int(row["timestamp"]),
                            action_type=row["action_type"] or "other",
                            hashtags=hashtags,
                            sentiment=_parse_sentiment(row.get("sentiment")),
                            target_user=row.get("target_user") or None,
                        )
                    )
                except (KeyError, ValueError, TypeError) as exc:
                    raise ParseError(i, str(exc)) from exc
    return records


def bin_activity(
    events: Iterable[EventRecord],
    window: tuple[int, int],
    bin_width: int = 300,
    min_bins_hint: Optional[int] = None,
) -> dict[str, ActivitySeries]:
    """Bin each user's events into equal-width counts over [start, end).

    Events on or after window_end are dropped (half-open interval) and the
    dropped total is logged. Returned map is keyed and ordered by user_id.
    """
    start, end = window
    if end <= start:
        raise InvalidWindow(f"window end {end} must exceed start {start}")
    if bin_width <= 0:
        raise InvalidWindow(f"bin_width must be > 0, got {bin_width}")

    bins = n_bins(start, end, bin_width)
    if min_bins_hint is not None and bins < min_bins_hint:
        logger.warning("window yields %d bins; fewer than the %d needed for the embedding grid", bins, min_bins_hint)

    per_user: dict[str, np.ndarray] = {}
    dropped = 0
    for ev in events:
        if not start <= ev.timestamp < end:
            dropped += 1
            continue
        vals = per_user.get(ev.user_id)
        if vals is None:
            vals = np.zeros(bins, dtype=np.float64)
            per_user[ev.user_id] = vals
        vals[(ev.timestamp - start) // bin_width] += 1.0

    if dropped:
        logger.info("dropped %d events outside window [%d, %d)", dropped, start, end)

    return {
        uid: ActivitySeries(uid, start, end, bin_width, per_user[uid])
        for uid in sorted(per_user)
    }


def extract_context(series: dict[str, ActivitySeries]) -> PipelineContext:
    """Coarse workload descriptor: user count, mean per-user activity, window span."""
    if not series:
        raise EmptyInput("cannot extract context from an empty series map")
    totals = [float(s.values.sum()) for s in series.values()]
    first = next(iter(series.values()))
    span = first.window_end - first.window_start
    return PipelineContext(
        user_count=len(series),
        mean_activity=float(np.mean(totals)),
        window_span=span,
    )


def dump_series(series: dict[str, ActivitySeries], path: str | Path) -> None:
    """Debug dump: one ActivitySeries object per line."""
    with Path(path).open("w") as fh:
        for uid in sorted(series):
            s = series[uid]
            fh.write(
                json.dumps(
                    {
                        "user_id": s.user_id,
                        "window": [s.window_start, s.window_end],
                        "bin_width": s.bin_width,
                        "values": [float(v) for v in s.values],
                    }
                )
                + "\n"
            )


def load_series_dump(path: str | Path) -> dict[str, ActivitySeries]:
    out: dict[str, ActivitySeries] = {}
    with Path(path).open() as fh:
        for line in fh:
            obj = json.loads(line)
            out[obj["user_id"]] = ActivitySeries(
                obj["user_id"],
                obj["window"][0],
                obj["window"][1],
                obj["bin_width"],
                np.asarray(obj["values"], dtype=np.float64),
            )
    return out
