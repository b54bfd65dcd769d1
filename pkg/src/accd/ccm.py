"""Cross-mapping influence estimation between user pairs.

An edge source -> target is scored by how well the source's reconstructed
manifold predicts the target's activity values: predictions use the k nearest
library neighbors with weights exp(-d_j/d_1) normalized to sum 1, skill is
the Pearson correlation between actual and predicted values, and the edge
score is the maximum skill over a grid of library lengths.

Notes on conventions the cross-mapping literature leaves open here:
  * weights are normalized so predictions are convex combinations of the
    referenced target values (scale preservation requires it)
  * an exact state revisit (d_1 = 0) collapses the weight onto the
    zero-distance neighbors, equally
  * zero-variance inputs yield skill 0 with a degenerate flag instead of an
    error, since inactive users are routine
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .embed import DelayEmbedding, NeighborIndex, embed_series
from .errors import LengthMismatch, LibraryTooSmall, SeriesTooShort

DEGENERATE_RHO = 0.0


@dataclass(frozen=True)
class CrossMapConfig:
    l_min: int = 10
    l_max: int = 50
    l_step: int = 10
    k_neighbors: Optional[int] = None  # None -> E + 1
    exclusion_radius: Optional[int] = None  # None -> tau

    def __post_init__(self):
        if not 10 <= self.l_min <= self.l_max:
            raise ValueError(f"need 10 <= l_min <= l_max, got [{self.l_min}, {self.l_max}]")
        if self.l_step < 1:
            raise ValueError("l_step must be >= 1")

    @property
    def l_grid(self) -> tuple[int, ...]:
        return tuple(range(self.l_min, self.l_max + 1, self.l_step))

    def k_for(self, E: int) -> int:
        return self.k_neighbors if self.k_neighbors is not None else E + 1

    def exclusion_for(self, tau: int) -> int:
        return self.exclusion_radius if self.exclusion_radius is not None else tau


@dataclass(frozen=True)
class InfluenceEdge:
    source: str  # candidate influencer; owner of the manifold
    target: str  # the influenced; owner of the predicted values
    score: float
    curve: tuple[tuple[int, float], ...]
    params: tuple[int, int]
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "score": self.score,
            "curve": [[l, r] for l, r in self.curve],
            "E": self.params[0],
            "tau": self.params[1],
            "degenerate": self.degenerate,
        }


def pearson_with_flag(a: Sequence[float], b: Sequence[float]) -> tuple[float, bool]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise LengthMismatch("pearson needs at least 2 points")
    am = a - a.mean()
    bm = b - b.mean()
    va = float(am @ am)
    vb = float(bm @ bm)
    if va <= 0.0 or vb <= 0.0:
        return DEGENERATE_RHO, True
    rho = float(am @ bm) / float(np.sqrt(va * vb))
    return float(np.clip(rho, -1.0, 1.0)), False


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    rho, _ = pearson_with_flag(a, b)
    return rho


def cross_map_predict(
    target_values: Sequence[float],
    source_embedding: DelayEmbedding,
    index: NeighborIndex,
    L: int,
    k: int,
) -> list[tuple[int, float]]:
    """Predict target values at every manifold time from the first-L library.

    Reference path built on the public neighbor index; the kernel backends
    compute the same quantity in bulk. Queries with fewer than k usable
    library neighbors after temporal exclusion are skipped.
    """
    if L < k + 1:
        raise LibraryTooSmall(f"library L={L} must exceed k={k}")
    if L > len(source_embedding):
        raise LibraryTooSmall(f"library L={L} exceeds manifold size {len(source_embedding)}")
    target_values = np.asarray(target_values, dtype=np.float64)

    out: list[tuple[int, float]] = []
    for i in range(len(source_embedding)):
        t = int(source_embedding.time_indices[i])
        try:
            neighbors = index.query(source_embedding.vectors[i], k, exclude_time=t, limit=L)
        except Exception:
            continue
        d1 = neighbors[0][1]
        if d1 == 0.0:
            zero = [tj for tj, d in neighbors if d == 0.0]
            pred = float(np.mean([target_values[tj] for tj in zero]))
        else:
            u = np.array([np.exp(-d / d1) for _, d in neighbors])
            w = u / u.sum()
            pred = float(w @ np.array([target_values[tj] for tj, _ in neighbors]))
        out.append((t, pred))
    return out


class CcmEngine:
    """Influence scoring with per-(pair, params) caching and query counting.

    Safe for concurrent use: the cache is guarded by a lock and the kernels
    are pure functions.
    """

    def __init__(
        self,
        config: CrossMapConfig = CrossMapConfig(),
        kernel_backend: Optional[str] = None,
        cache_enabled: bool = True,
    ):
        self.config = config
        self._kernel = kernels.get_backend(kernel_backend)
        self._cache: dict[tuple, InfluenceEdge] = {}
        self._cache_enabled = cache_enabled
        self._lock = threading.Lock()
        self.knn_queries = 0
        self.cache_hits = 0

    def _cache_key(self, source_id: str, target_id: str, E: int, tau: int) -> tuple:
        return (source_id, target_id, E, tau, self.config.l_grid)

    def influence_from_arrays(
        self,
        target_values: np.ndarray,
        source_values: np.ndarray,
        E: int,
        tau: int,
        source_id: str = "",
        target_id: str = "",
    ) -> InfluenceEdge:
        warmup = (E - 1) * tau
        needed = self.config.l_max + warmup
        if len(source_values) < needed or len(target_values) < len(source_values):
            raise SeriesTooShort(needed, min(len(source_values), len(target_values)))
        key = self._cache_key(source_id, target_id, E, tau)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            with self._lock:
                self.cache_hits += 1
            return cached
        emb = embed_series(source_values, E, tau, user_id=source_id)
        return self.influence_edge(emb, target_values, source_id, target_id)

    def influence_edge(
        self, source_embedding: DelayEmbedding, target_values, source_id: str, target_id: str
    ) -> InfluenceEdge:
        """Score one edge from a precomputed source manifold (cached)."""
        E, tau = source_embedding.E, source_embedding.tau
        if len(source_embedding) < self.config.l_max:
            raise SeriesTooShort(self.config.l_max + source_embedding.warmup, len(source_embedding) + source_embedding.warmup)
        key = self._cache_key(source_id, target_id, E, tau)
        if self._cache_enabled:
            with self._lock:
                cached = self._cache.get(key)
            if cached is not None:
                with self._lock:
                    self.cache_hits += 1
                return cached
        edge = self._edge_from_embedding(
            source_embedding, np.asarray(target_values, dtype=np.float64), E, tau, source_id, target_id
        )
        if self._cache_enabled:
            with self._lock:
                self._cache[key] = edge
        return edge

    def _edge_from_embedding(
        self, emb: DelayEmbedding, target_values: np.ndarray, E: int, tau: int, source_id: str, target_id: str
    ) -> InfluenceEdge:
        k = self.config.k_for(E)
        exclusion = self.config.exclusion_for(tau)
        l_grid = np.asarray(self.config.l_grid, dtype=np.int64)
        rho, degen, queries = self._kernel.cross_map_curve(
            emb.vectors, emb.time_indices, target_values, l_grid, k, exclusion
        )
        with self._lock:
            self.knn_queries += int(queries)
        curve = tuple((int(l), float(r)) for l, r in zip(l_grid, rho))
        all_degenerate = bool(degen.all())
        score = DEGENERATE_RHO if all_degenerate else float(max(r for (_, r), d in zip(curve, degen) if not d))
        return InfluenceEdge(
            source=source_id,
            target=target_id,
            score=score,
            curve=curve,
            params=(E, tau),
            degenerate=all_degenerate,
        )

    def influence(self, u1_series, u2_series, E: int, tau: int) -> InfluenceEdge:
        """Edge u2 -> u1: how well u2's manifold cross-maps u1's values."""
        return self.influence_from_arrays(
            np.asarray(u1_series.values, dtype=np.float64),
            np.asarray(u2_series.values, dtype=np.float64),
            E,
            tau,
            source_id=u2_series.user_id,
            target_id=u1_series.user_id,
        )


def influence(u1_series, u2_series, config: CrossMapConfig = CrossMapConfig(), E: int = 3, tau: int = 1) -> InfluenceEdge:
    """One-shot convenience wrapper around CcmEngine."""
    return CcmEngine(config).influence(u1_series, u2_series, E, tau)
