"""Efficiency studies: clustered pair scheduling vs the naive all-pairs scan,
and the compiled cross-map kernel vs the numpy fallback.

The workload is synthetic: users drawn from k distinct activity regimes so
the cluster step has real structure to find, with every arm running the same
embedding and scoring path.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from typing import Iterable, Iterator, Optional

import numpy as np

from . import cluster, kernels
from .ccm import CcmEngine, CrossMapConfig
from .embed import embed_series
from .ingest import ActivitySeries


def gen_bench_series(users: int, bins: int, regimes: int, seed: int) -> dict[str, ActivitySeries]:
    """Users drawn from `regimes` distinct activity regimes.

    Each regime pins a base level and an on/off modulation pattern, with only
    light noise on top, so the temporal statistics form clean blobs: the
    cluster step recovers the regimes as near-equal groups and the benchmark
    measures scheduling and scoring cost rather than cluster-recovery luck.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, ActivitySeries] = {}
    t = np.arange(bins)
    for i in range(users):
        uid = f"u{i:05d}"
        g = i % regimes
        level = 1.0 + 2.0 * (g % 5)
        period = 4 if g >= regimes // 2 else 1
        modulation = 1.0 + 0.6 * (((t // period) % 2) == 0) if period > 1 else np.ones(bins)
        values = level * modulation + rng.uniform(0.0, 0.2 * level, size=bins)
        out[uid] = ActivitySeries(uid, 0, bins * 300, 300, np.asarray(values, dtype=np.float64))
    return out


def _chunks(pairs: Iterable[tuple[str, str]], size: int) -> Iterator[list[tuple[str, str]]]:
    it = iter(pairs)
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield block


def fold_scores(
    engine: CcmEngine,
    embeddings,
    series,
    pairs: Iterable[tuple[str, str]],
    floor: float,
    workers: int = 2,
    chunk: int = 8192,
) -> tuple[int, int]:
    """Stream pairs through the engine, returning (scored, candidates) without
    retaining edges; submission stays bounded so naive-scale scans hold no
    more than a few chunks in memory."""

    def score_chunk(block: list[tuple[str, str]]) -> tuple[int, int]:
        n_cand = 0
        for src, dst in block:
            edge = engine.influence_edge(embeddings[src], series[dst].values, src, dst)
            if not edge.degenerate and edge.score >= floor:
                n_cand += 1
        return len(block), n_cand

    scored = candidates = 0
    if workers <= 1:
        for block in _chunks(pairs, chunk):
            n, c = score_chunk(block)
            scored += n
            candidates += c
        return scored, candidates

    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = set()
        for block in _chunks(pairs, chunk):
            pending.add(pool.submit(score_chunk, block))
            if len(pending) >= workers * 2:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    n, c = fut.result()
                    scored += n
                    candidates += c
        for fut in pending:
            n, c = fut.result()
            scored += n
            candidates += c
    return scored, candidates


def bench_stage1(
    users: int = 1000,
    clusters: int = 10,
    cross_fraction: float = 0.05,
    bins: int = 120,
    E: int = 3,
    tau: int = 1,
    seed: int = 0,
    influence_floor: float = 0.5,
    workers: int = 2,
    skip_naive: bool = False,
    kernel_backend: Optional[str] = None,
) -> dict:
    """Wall-time and pair-count comparison of clustered vs all-pairs scoring."""
    series = gen_bench_series(users, bins, clusters, seed)
    user_ids = sorted(series)
    config = CrossMapConfig()
    report: dict = {
        "users": users,
        "bins": bins,
        "clusters": clusters,
        "cross_fraction": cross_fraction,
        "params": [E, tau],
        "backend": kernel_backend or kernels.ACTIVE_BACKEND,
        "naive_pairs": users * (users - 1),
    }

    t0 = time.perf_counter()
    embeddings = {uid: embed_series(s, E, tau) for uid, s in series.items()}
    stats = [cluster.compute_stats(s) for s in series.values()]
    assignment = cluster.agglomerate(stats, clusters)
    pairs = cluster.schedule_pairs(assignment, cross_fraction, seed=seed)
    engine = CcmEngine(config, kernel_backend=kernel_backend, cache_enabled=False)
    scored, candidates = fold_scores(engine, embeddings, series, pairs, influence_floor, workers)
    report["clustered_seconds"] = time.perf_counter() - t0
    report["scheduled_pairs"] = scored
    report["clustered_candidates"] = candidates
    report["cluster_sizes"] = assignment.sizes()
    report["pair_ratio"] = scored / report["naive_pairs"]

    if not skip_naive:
        t0 = time.perf_counter()
        embeddings = {uid: embed_series(s, E, tau) for uid, s in series.items()}
        engine = CcmEngine(config, kernel_backend=kernel_backend, cache_enabled=False)
        all_pairs = itertools.permutations(user_ids, 2)
        scored_naive, cand_naive = fold_scores(engine, embeddings, series, all_pairs, influence_floor, workers)
        report["naive_seconds"] = time.perf_counter() - t0
        report["naive_candidates"] = cand_naive
        assert scored_naive == report["naive_pairs"]
        report["speedup"] = report["naive_seconds"] / report["clustered_seconds"]
    return report


def bench_kernels(pairs: int = 500, bins: int = 120, E: int = 3, tau: int = 1, seed: int = 0) -> dict:
    """Per-pair timing of each available kernel backend on identical inputs."""
    rng = np.random.default_rng(seed)
    l_grid = np.arange(10, 51, 10, dtype=np.int64)
    workload = []
    for _ in range(pairs):
        values = rng.poisson(2.0, size=bins).astype(np.float64)
        target = rng.poisson(2.0, size=bins).astype(np.float64)
        emb = embed_series(values, E, tau)
        workload.append((emb.vectors, emb.time_indices, target))

    out: dict = {"pairs": pairs, "bins": bins, "backends": {}}
    reference = None
    for name in kernels.available_backends():
        backend = kernels.get_backend(name)
        t0 = time.perf_counter()
        rhos = [backend.cross_map_curve(v, t, g, l_grid, E + 1, tau)[0] for v, t, g in workload]
        elapsed = time.perf_counter() - t0
        out["backends"][name] = {"seconds": elapsed, "us_per_pair": elapsed / pairs * 1e6}
        if reference is None:
            reference = rhos
        else:
            out["max_backend_diff"] = float(max(np.abs(a - b).max() for a, b in zip(reference, rhos)))
    names = list(out["backends"])
    if len(names) == 2:
        a, b = names
        out["speedup"] = out["backends"][b]["seconds"] / out["backends"][a]["seconds"]
    return out
