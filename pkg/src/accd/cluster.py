"""User grouping on temporal statistics so pairwise cross-mapping only runs
within clusters (plus a sampled slice of cross-cluster pairs).

For k balanced clusters this cuts the ordered-pair workload from U(U-1) to
roughly U^2/k + sampled cross pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidK
from .ingest import ActivitySeries

logger = logging.getLogger(__name__)

NAIVE_AGGLOMERATION_LIMIT = 5000


@dataclass(frozen=True)
class ActivityStats:
    user_id: str
    mean: float
    variance: float
    burstiness: float
    entropy: float

    def vector(self) -> np.ndarray:
        return np.array([self.mean, self.variance, self.burstiness, self.entropy])


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    members: dict[int, list[str]]

    def cluster_of(self) -> dict[str, int]:
        return {u: cid for cid, users in self.members.items() for u in users}

    def sizes(self) -> list[int]:
        return [len(self.members[c]) for c in sorted(self.members)]


def burstiness_coefficient(timestamps) -> float:
    """Inter-event gap dispersion (sigma - mu)/(sigma + mu); 0 when fewer than
    2 events, -1 for perfectly periodic trains."""
    ts = np.sort(np.asarray(timestamps, dtype=np.float64))
    if len(ts) < 2:
        return 0.0
    gaps = np.diff(ts)
    mu = float(gaps.mean())
    sigma = float(gaps.std())
    if sigma + mu == 0.0:
        return 0.0
    return (sigma - mu) / (sigma + mu)


def shannon_entropy_bits(counts) -> float:
    """Entropy of the normalized count distribution, in bits; 0 when all mass
    sits in one bin or there is no mass at all."""
    values = np.asarray(counts, dtype=np.float64)
    total = values.sum()
    if total <= 0:
        return 0.0
    p = values[values > 0] / total
    return float(-(p * np.log2(p)).sum())


def compute_stats(series: ActivitySeries, raw_timestamps=()) -> ActivityStats:
    values = np.asarray(series.values, dtype=np.float64)
    return ActivityStats(
        user_id=series.user_id,
        mean=float(values.mean()),
        variance=float(values.var()),
        burstiness=burstiness_coefficient(raw_timestamps),
        entropy=shannon_entropy_bits(values),
    )


def _zscore(matrix: np.ndarray) -> np.ndarray:
    mu = matrix.mean(axis=0)
    sigma = matrix.std(axis=0)
    sigma = np.where(sigma == 0.0, 1.0, sigma)
    return (matrix - mu) / sigma


def agglomerate(stats: list[ActivityStats], k: int) -> ClusterAssignment:
    """Average-linkage agglomeration of z-scored 4-D stats vectors.

    Users enter as singleton clusters ordered by user_id; each step merges the
    closest active pair, breaking distance ties toward the lexicographically
    smallest (i, j) id pair, until k clusters remain.
    """
    n = len(stats)
    if not 1 <= k <= n:
        raise InvalidK(f"k must lie in [1, {n}], got {k}")
    if n > NAIVE_AGGLOMERATION_LIMIT:
        logger.warning("agglomerating %d users with the quadratic method; expect it to crawl", n)

    stats = sorted(stats, key=lambda s: s.user_id)
    if k == n:
        return ClusterAssignment(k, {i: [s.user_id] for i, s in enumerate(stats)})

    X = _zscore(np.stack([s.vector() for s in stats]))
    dist = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    dist[np.tril_indices(n)] = np.inf  # keep only i < j

    sizes = np.ones(n)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    active = n
    while active > k:
        flat = int(np.argmin(dist))  # row-major argmin = smallest i, then j, on ties
        i, j = divmod(flat, n)
        # average-linkage update: d(i+j, l) = (n_i d_il + n_j d_jl) / (n_i + n_j)
        for l in members:
            if l == i or l == j:
                continue
            d_il = dist[min(i, l), max(i, l)]
            d_jl = dist[min(j, l), max(j, l)]
            dist[min(i, l), max(i, l)] = (sizes[i] * d_il + sizes[j] * d_jl) / (sizes[i] + sizes[j])
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        sizes[i] += sizes[j]
        members[i].extend(members.pop(j))
        active -= 1

    ordered = sorted(members.values(), key=lambda idxs: min(idxs))
    return ClusterAssignment(
        k, {cid: sorted(stats[i].user_id for i in idxs) for cid, idxs in enumerate(ordered)}
    )


def default_k(user_count: int) -> int:
    return max(1, round(math.sqrt(user_count / 10)))


def schedule_pairs(
    assignment: ClusterAssignment, cross_fraction: float, seed: int = 0
) -> list[tuple[str, str]]:
    """All within-cluster ordered pairs plus a seeded uniform sample of
    cross-cluster ordered pairs of size cross_fraction * (total cross pairs).
    """
    if not 0.0 <= cross_fraction <= 1.0:
        raise ValueError("cross_fraction must lie in [0, 1]")

    users = sorted(u for members in assignment.members.values() for u in members)
    cluster_of = assignment.cluster_of()
    pairs: list[tuple[str, str]] = []
    for cid in sorted(assignment.members):
        group = sorted(assignment.members[cid])
        pairs.extend((a, b) for a in group for b in group if a != b)

    n = len(users)
    labels = np.array([cluster_of[u] for u in users])
    total_ordered = n * (n - 1)
    within_total = int(sum(m * (m - 1) for m in map(len, assignment.members.values())))
    cross_total = total_ordered - within_total
    sample_size = int(round(cross_fraction * cross_total))
    if sample_size > 0:
        # encode ordered pairs (i, j != i) as i*(n-1) + j' to sample without
        # materializing python tuples for the full cross set
        codes = np.arange(total_ordered, dtype=np.int64)
        src = codes // (n - 1)
        rest = codes % (n - 1)
        dst = np.where(rest >= src, rest + 1, rest)
        cross_codes = codes[labels[src] != labels[dst]]
        rng = np.random.default_rng(seed)
        chosen = rng.choice(cross_codes, size=sample_size, replace=False)
        chosen.sort()
        for code in chosen:
            i = int(code) // (n - 1)
            r = int(code) % (n - 1)
            j = r + 1 if r >= i else r
            pairs.append((users[i], users[j]))
    return pairs
