"""Pure-numpy cross-map scoring kernel.

Fallback for environments without the compiled extension; same contract as
``accd._ccm_kernel.cross_map_curve``. Neighbor selection breaks distance ties
toward the smaller library index in both implementations.
"""

from __future__ import annotations

import numpy as np


def _pearson(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    if len(a) < 2:
        return 0.0, True
    am = a - a.mean()
    bm = b - b.mean()
    va = float(am @ am)
    vb = float(bm @ bm)
    if va <= 0.0 or vb <= 0.0:
        return 0.0, True
    rho = float(am @ bm) / np.sqrt(va * vb)
    return float(np.clip(rho, -1.0, 1.0)), False


def cross_map_curve(
    vectors: np.ndarray,
    times: np.ndarray,
    target: np.ndarray,
    l_grid: np.ndarray,
    k: int,
    exclusion: int,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Cross-map skill of a source manifold against a target series.

    For each library length L: predict the target value at every manifold
    time from the k nearest of the first L manifold points (temporal
    exclusion honored), exponentially weighted by distance to the nearest
    neighbor; return Pearson correlation per L.

    Returns (rho per L, degenerate flag per L, number of knn queries).
    """
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    times = np.asarray(times, dtype=np.int64)
    target = np.asarray(target, dtype=np.float64)
    l_grid = np.asarray(l_grid, dtype=np.int64)

    n = len(vectors)
    l_max = int(l_grid.max())
    if l_max > n:
        raise ValueError(f"library length {l_max} exceeds manifold size {n}")
    lib = vectors[:l_max]

    diffs = vectors[:, None, :] - lib[None, :, :]
    d2_full = np.einsum("ijk,ijk->ij", diffs, diffs)
    if exclusion > 0:
        excluded = np.abs(times[:, None] - times[None, :l_max]) <= exclusion
    else:  # exclusion 0 disables the temporal window entirely
        excluded = np.zeros((n, l_max), dtype=bool)

    rho = np.zeros(len(l_grid), dtype=np.float64)
    degenerate = np.zeros(len(l_grid), dtype=np.uint8)
    queries = 0

    for li, L in enumerate(l_grid):
        d2 = np.where(excluded[:, :L], np.inf, d2_full[:, :L])
        valid = np.isfinite(d2).sum(axis=1) >= k
        rows = np.flatnonzero(valid)
        queries += len(rows)
        if len(rows) < 2:
            degenerate[li] = 1
            continue

        # stable argsort keeps ascending library index among distance ties
        order = np.argsort(d2[rows], axis=1, kind="stable")[:, :k]
        d_sel = np.sqrt(np.take_along_axis(d2[rows], order, axis=1))
        lib_times = times[order]
        referenced = target[lib_times]

        d1 = d_sel[:, :1]
        zero_rows = d1[:, 0] == 0.0
        weights = np.empty_like(d_sel)
        if zero_rows.any():
            w0 = (d_sel[zero_rows] == 0.0).astype(np.float64)
            weights[zero_rows] = w0 / w0.sum(axis=1, keepdims=True)
        if (~zero_rows).any():
            u = np.exp(-d_sel[~zero_rows] / d1[~zero_rows])
            weights[~zero_rows] = u / u.sum(axis=1, keepdims=True)

        predicted = np.einsum("ij,ij->i", weights, referenced)
        actual = target[times[rows]]
        rho[li], deg = _pearson(actual, predicted)
        degenerate[li] = 1 if deg else 0

    return rho, degenerate, queries
