"""State-space reconstruction from activity series.

A scalar series X is lifted to vectors [X(t), X(t-tau), ..., X(t-(E-1)tau)]
(newest coordinate first). The batch and incremental constructions emit
bit-identical vectors; the neighbor index answers exact k-nearest queries
under Euclidean distance with an optional temporal exclusion window.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NotEnoughPoints, SeriesTooShort


def _series_values(series) -> np.ndarray:
    values = getattr(series, "values", series)
    return np.ascontiguousarray(values, dtype=np.float64)


@dataclass(frozen=True)
class DelayEmbedding:
    user_id: str
    E: int
    tau: int
    time_indices: np.ndarray  # (n,) int64, sorted ascending
    vectors: np.ndarray  # (n, E) float64, row i is the state at time_indices[i]

    def __len__(self) -> int:
        return len(self.time_indices)

    @property
    def warmup(self) -> int:
        return (self.E - 1) * self.tau


def embed_series(series, E: int, tau: int, user_id: str = "") -> DelayEmbedding:
    """Construct all delay vectors of a series; first valid time is (E-1)*tau."""
    if E < 1 or tau < 1:
        raise ValueError(f"need E >= 1 and tau >= 1, got ({E}, {tau})")
    values = _series_values(series)
    warmup = (E - 1) * tau
    if len(values) < warmup + 1:
        raise SeriesTooShort(warmup + 1, len(values))
    n = len(values) - warmup
    vectors = np.empty((n, E), dtype=np.float64)
    for lag in range(E):
        start = warmup - lag * tau
        vectors[:, lag] = values[start : start + n]
    times = np.arange(warmup, warmup + n, dtype=np.int64)
    uid = user_id or str(getattr(series, "user_id", ""))
    return DelayEmbedding(uid, E, tau, times, vectors)


class RollingEmbedder:
    """Incremental counterpart of embed_series over a rolling value buffer.

    Emits the newest delay vector once (E-1)*tau + 1 values have been pushed;
    the emitted stream equals the batch embedding of the concatenated input.
    """

    def __init__(self, E: int, tau: int):
        if E < 1 or tau < 1:
            raise ValueError(f"need E >= 1 and tau >= 1, got ({E}, {tau})")
        self.E = E
        self.tau = tau
        self._buffer: deque[float] = deque(maxlen=(E - 1) * tau + 1)
        self._t = -1

    def push(self, value: float) -> Optional[np.ndarray]:
        self._buffer.append(float(value))
        self._t += 1
        if len(self._buffer) < self._buffer.maxlen:
            return None
        vec = np.empty(self.E, dtype=np.float64)
        newest = len(self._buffer) - 1
        for lag in range(self.E):
            vec[lag] = self._buffer[newest - lag * self.tau]
        return vec

    @property
    def time_index(self) -> int:
        return self._t


class NeighborIndex:
    """Exact k-nearest-neighbor lookup over embedding points.

    The contract is exact Euclidean k-NN with a temporal (Theiler-style)
    exclusion window, so at manifold sizes of a few hundred points a
    vectorized scan with a deterministic (distance, time) tie-break is both
    simplest and fastest; a tree index is the upgrade path for much larger
    manifolds.

    excluded_radius 0 disables the window: querying a stored point then
    returns that point itself at distance 0 first. Radius r >= 1 drops every
    stored time within r of the query time, the query's own time included.
    """

    def __init__(self, embedding: DelayEmbedding, excluded_radius: int = 0):
        if excluded_radius < 0:
            raise ValueError("excluded_radius must be >= 0")
        self.embedding = embedding
        self.excluded_radius = excluded_radius
        self._points = np.ascontiguousarray(embedding.vectors)
        self._times = embedding.time_indices

    def __len__(self) -> int:
        return len(self._times)

    def query(
        self,
        point: Sequence[float],
        k: int,
        exclude_time: Optional[int] = None,
        limit: Optional[int] = None,
    ) -> list[tuple[int, float]]:
        """k nearest stored points, optionally restricted to the first `limit`
        points and excluding times within excluded_radius of exclude_time.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        pts = self._points if limit is None else self._points[:limit]
        times = self._times if limit is None else self._times[:limit]
        query = np.asarray(point, dtype=np.float64)
        if query.shape != (pts.shape[1],):
            raise ValueError(f"query point must have dimension {pts.shape[1]}")

        diffs = pts - query
        dist2 = np.einsum("ij,ij->i", diffs, diffs)
        if exclude_time is not None and self.excluded_radius > 0:
            excluded = np.abs(times - exclude_time) <= self.excluded_radius
            dist2 = np.where(excluded, np.inf, dist2)
        available = int(np.isfinite(dist2).sum())
        if k > available:
            raise NotEnoughPoints(f"asked for k={k} but only {available} points remain after exclusion")
        order = np.lexsort((times, dist2))[:k]
        return [(int(times[i]), float(np.sqrt(dist2[i]))) for i in order]


def build_index(embedding: DelayEmbedding, excluded_radius: int = 0) -> NeighborIndex:
    return NeighborIndex(embedding, excluded_radius)


def query_knn(
    index: NeighborIndex, point: Sequence[float], k: int, exclude_time: Optional[int] = None
) -> list[tuple[int, float]]:
    return index.query(point, k, exclude_time=exclude_time)
