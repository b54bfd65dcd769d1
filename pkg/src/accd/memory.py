"""Long-term memory for detection experience.

Two record families share one append-only journal:
  * parameter feedback — precision history per (E, tau) within a context
    bucket plus a global usage count per (E, tau)
  * causal cases — per-validation outcomes keyed by a dataset profile,
    tagged ``kind: "causal_case"``

Selection scores each candidate pair by
``alpha * precision_hist + (1 - alpha) * exp(-beta * usage_count)`` and takes
the argmax, breaking ties toward the smaller (E, tau). Durability comes from
the journal; a compacted snapshot with a trailing CRC32 bounds replay time.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import CorruptSnapshot, StoreError

JOURNAL_NAME = "journal.jsonl"
SNAPSHOT_NAME = "snapshot.jsonl"

DEFAULT_GRID: tuple[tuple[int, int], ...] = tuple(
    (e, tau) for e in (2, 3, 4, 5, 6, 8) for tau in (1, 2, 4, 8)
)


@dataclass(frozen=True)
class ParamRecord:
    embedding_dim: int
    delay: int
    bucket_key: str
    precision_hist: float
    usage_count: int


@dataclass(frozen=True)
class SelectionPolicy:
    alpha: float = 0.8
    beta: float = 0.1
    candidate_grid: tuple[tuple[int, int], ...] = DEFAULT_GRID

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta <= 0.0:
            raise ValueError("beta must be > 0")
        if not self.candidate_grid:
            raise ValueError("candidate_grid must be non-empty")
        for e, tau in self.candidate_grid:
            if e < 2 or tau < 1:
                raise ValueError(f"invalid grid entry ({e}, {tau})")


@dataclass(frozen=True)
class CausalCase:
    profile_key: str
    estimator_name: str
    precision: float
    timestamp: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.precision <= 1.0:
            raise ValueError(f"case precision must lie in [0, 1], got {self.precision}")


@dataclass
class _PrecisionCell:
    correct: int = 0
    total: int = 0

    @property
    def ratio(self) -> float:
        return self.correct / self.total if self.total > 0 else 0.0


class ParamMemory:
    """Single-writer, multi-reader store backed by a journal directory."""

    def __init__(self, root: str | Path | None = None):
        self._root = Path(root) if root is not None else None
        self._lock = threading.Lock()
        self._precision: dict[tuple[str, int, int], _PrecisionCell] = {}
        self._usage: dict[tuple[int, int], int] = {}
        self._cases: dict[str, list[CausalCase]] = {}
        if self._root is not None:
            self._root.mkdir(parents=True, exist_ok=True)
            self._replay_disk()

    # -- state access ------------------------------------------------------

    def precision_hist(self, bucket_key: str, pair: tuple[int, int]) -> float:
        cell = self._precision.get((bucket_key, pair[0], pair[1]))
        return cell.ratio if cell else 0.0

    def usage_count(self, pair: tuple[int, int]) -> int:
        return self._usage.get(pair, 0)

    def records(self, bucket_key: str, grid: Iterable[tuple[int, int]]) -> list[ParamRecord]:
        return [
            ParamRecord(e, tau, bucket_key, self.precision_hist(bucket_key, (e, tau)), self.usage_count((e, tau)))
            for e, tau in grid
        ]

    def cases_for(self, profile_key: str) -> list[CausalCase]:
        return list(self._cases.get(profile_key, ()))

    def state_dict(self) -> dict:
        return {
            "precision": {
                f"{b}|{e}|{t}": [c.correct, c.total] for (b, e, t), c in sorted(self._precision.items())
            },
            "usage": {f"{e}|{t}": n for (e, t), n in sorted(self._usage.items())},
            "cases": {
                k: [[c.estimator_name, c.precision, c.timestamp] for c in v]
                for k, v in sorted(self._cases.items())
            },
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamMemory) and self.state_dict() == other.state_dict()

    # -- updates -----------------------------------------------------------

    def update_precision(self, bucket_key: str, pair: tuple[int, int], correct: int, total: int) -> None:
        """Fold a (correct, total) observation into the running precision ratio.

        usage_count increments once per call even when total == 0.
        """
        if not 0 <= correct <= total:
            raise ValueError(f"need 0 <= correct <= total, got ({correct}, {total})")
        e, tau = pair
        entry = {"bucket": bucket_key, "E": e, "tau": tau, "correct": correct, "total": total, "ts": time.time()}
        with self._lock:
            self._apply_param(entry)
            self._append_journal(entry)

    def add_case(self, case: CausalCase) -> None:
        entry = {
            "kind": "causal_case",
            "profile": case.profile_key,
            "estimator": case.estimator_name,
            "precision": case.precision,
            "ts": case.timestamp or time.time(),
        }
        with self._lock:
            self._apply_case(entry)
            self._append_journal(entry)

    # -- persistence -------------------------------------------------------

    def _apply_param(self, entry: dict) -> None:
        key = (entry["bucket"], entry["E"], entry["tau"])
        cell = self._precision.setdefault(key, _PrecisionCell())
        cell.correct += entry["correct"]
        cell.total += entry["total"]
        pair = (entry["E"], entry["tau"])
        self._usage[pair] = self._usage.get(pair, 0) + 1

    def _apply_case(self, entry: dict) -> None:
        case = CausalCase(entry["profile"], entry["estimator"], entry["precision"], entry.get("ts", 0.0))
        self._cases.setdefault(case.profile_key, []).append(case)

    def _apply(self, entry: dict) -> None:
        if entry.get("kind") == "causal_case":
            self._apply_case(entry)
        else:
            self._apply_param(entry)

    def _append_journal(self, entry: dict) -> None:
        if self._root is None:
            return
        try:
            with (self._root / JOURNAL_NAME).open("a") as fh:
                fh.write(json.dumps(entry) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreError(f"journal append failed: {exc}") from exc

    def _replay_disk(self) -> None:
        snap = self._root / SNAPSHOT_NAME
        if snap.exists():
            self._load_snapshot_into(snap)
        journal = self._root / JOURNAL_NAME
        if journal.exists():
            with journal.open() as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line))

    def _snapshot_lines(self) -> list[str]:
        lines = []
        for (b, e, t), cell in sorted(self._precision.items()):
            lines.append(json.dumps({"kind": "param", "bucket": b, "E": e, "tau": t, "correct": cell.correct, "total": cell.total}))
        for (e, t), n in sorted(self._usage.items()):
            lines.append(json.dumps({"kind": "usage", "E": e, "tau": t, "count": n}))
        for k in sorted(self._cases):
            for c in self._cases[k]:
                lines.append(json.dumps({"kind": "causal_case", "profile": k, "estimator": c.estimator_name, "precision": c.precision, "ts": c.timestamp}))
        return lines

    def snapshot(self, path: str | Path | None = None) -> Path:
        """Write a compacted snapshot with a trailing CRC32 line.

        When writing into the store's own directory the journal is truncated,
        since the snapshot now covers its contents.
        """
        if path is None:
            if self._root is None:
                raise StoreError("in-memory store requires an explicit snapshot path")
            path = self._root / SNAPSHOT_NAME
        path = Path(path)
        with self._lock:
            payload = "".join(line + "\n" for line in self._snapshot_lines()).encode()
            crc = zlib.crc32(payload)
            tmp = path.with_suffix(".tmp")
            with tmp.open("wb") as fh:
                fh.write(payload)
                fh.write(json.dumps({"crc32": crc}).encode() + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
            tmp.replace(path)
            if self._root is not None and path == self._root / SNAPSHOT_NAME:
                (self._root / JOURNAL_NAME).write_text("")
        return path

    def _load_snapshot_into(self, path: Path) -> None:
        raw = path.read_bytes()
        idx = raw.rstrip(b"\n").rfind(b"\n")
        payload, trailer = (raw[: idx + 1], raw[idx + 1 :]) if idx >= 0 else (b"", raw)
        try:
            expected = json.loads(trailer)["crc32"]
        except (ValueError, KeyError) as exc:
            raise CorruptSnapshot(f"{path}: missing CRC trailer") from exc
        if zlib.crc32(payload) != expected:
            raise CorruptSnapshot(f"{path}: checksum mismatch")
        for line in payload.decode().splitlines():
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "param":
                cell = self._precision.setdefault((obj["bucket"], obj["E"], obj["tau"]), _PrecisionCell())
                cell.correct += obj["correct"]
                cell.total += obj["total"]
            elif kind == "usage":
                self._usage[(obj["E"], obj["tau"])] = obj["count"]
            elif kind == "causal_case":
                self._apply_case(obj)
            else:
                raise CorruptSnapshot(f"{path}: unknown record kind {kind!r}")


def load_snapshot(path: str | Path) -> ParamMemory:
    """Rebuild an in-memory store from a snapshot file (round-trip of snapshot)."""
    store = ParamMemory(root=None)
    store._load_snapshot_into(Path(path))
    return store


def selection_score(policy: SelectionPolicy, precision_hist: float, usage_count: int) -> float:
    return policy.alpha * precision_hist + (1.0 - policy.alpha) * math.exp(-policy.beta * usage_count)


def select_params(bucket_key: str, policy: SelectionPolicy, store: ParamMemory) -> tuple[int, int]:
    """Argmax of the exploitation/exploration score over the candidate grid.

    Unseen pairs score with zero history; ties break toward smaller E, then
    smaller tau.
    """
    best_pair: Optional[tuple[int, int]] = None
    best_score = -math.inf
    for pair in sorted(policy.candidate_grid):
        score = selection_score(policy, store.precision_hist(bucket_key, pair), store.usage_count(pair))
        if score > best_score:
            best_score = score
            best_pair = pair
    assert best_pair is not None
    return best_pair
