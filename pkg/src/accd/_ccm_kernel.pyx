# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cross-map scoring kernel.

Same contract as accd._ccm_numpy.cross_map_curve; the inner loops run with
the GIL released so pair scoring can be fanned out across threads. Each query
point's distance row to the largest library prefix is computed once and
reused across the whole library-length grid.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, sqrt


cdef inline long long _llabs(long long x) nogil:
    return -x if x < 0 else x


def cross_map_curve(object vectors_in, object times_in, object target_in,
                    object l_grid_in, int k, int exclusion):
    """Cross-map skill per library length; see the numpy fallback for semantics.

    Returns (rho per L, degenerate flag per L, number of knn queries).
    """
    cdef double[:, ::1] vectors = np.ascontiguousarray(vectors_in, dtype=np.float64)
    cdef long long[::1] times = np.ascontiguousarray(times_in, dtype=np.int64)
    cdef double[::1] target = np.ascontiguousarray(target_in, dtype=np.float64)
    cdef long long[::1] l_grid = np.ascontiguousarray(l_grid_in, dtype=np.int64)

    cdef Py_ssize_t n = vectors.shape[0]
    cdef Py_ssize_t dim = vectors.shape[1]
    cdef Py_ssize_t m = l_grid.shape[0]
    cdef Py_ssize_t l_max = 0
    cdef Py_ssize_t li
    for li in range(m):
        if <Py_ssize_t> l_grid[li] > l_max:
            l_max = <Py_ssize_t> l_grid[li]
    if l_max > n:
        raise ValueError(f"library length {l_max} exceeds manifold size {n}")

    rho_arr = np.zeros(m, dtype=np.float64)
    degen_arr = np.zeros(m, dtype=np.uint8)
    cdef double[::1] rho = rho_arr
    cdef unsigned char[::1] degen = degen_arr

    cdef double[::1] d2row = np.empty(l_max, dtype=np.float64)
    cdef double[::1] best_d2 = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t[::1] best_j = np.empty(k, dtype=np.intp)
    cdef double[:, ::1] pred = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] actual = np.empty((m, n), dtype=np.float64)
    cdef Py_ssize_t[::1] count = np.zeros(m, dtype=np.intp)

    cdef long long queries = 0
    cdef Py_ssize_t i, j, e, p, q, filled, c, L
    cdef double d2, diff, d1, w, wsum, psum
    cdef double mean_a, mean_p, cov, var_a, var_p, da, dp, r

    with nogil:
        for i in range(n):
            for j in range(l_max):
                # exclusion 0 disables the temporal window entirely
                if exclusion > 0 and _llabs(times[j] - times[i]) <= exclusion:
                    d2row[j] = INFINITY
                    continue
                d2 = 0.0
                for e in range(dim):
                    diff = vectors[i, e] - vectors[j, e]
                    d2 += diff * diff
                d2row[j] = d2

            for li in range(m):
                L = <Py_ssize_t> l_grid[li]
                filled = 0
                for j in range(L):
                    d2 = d2row[j]
                    if d2 == INFINITY:
                        continue
                    if filled < k:
                        # insert keeping (d2, j) ascending; later j goes after ties
                        p = filled
                        while p > 0 and best_d2[p - 1] > d2:
                            best_d2[p] = best_d2[p - 1]
                            best_j[p] = best_j[p - 1]
                            p -= 1
                        best_d2[p] = d2
                        best_j[p] = j
                        filled += 1
                    elif d2 < best_d2[k - 1]:
                        p = k - 1
                        while p > 0 and best_d2[p - 1] > d2:
                            best_d2[p] = best_d2[p - 1]
                            best_j[p] = best_j[p - 1]
                            p -= 1
                        best_d2[p] = d2
                        best_j[p] = j
                if filled < k:
                    continue
                queries += 1
                d1 = sqrt(best_d2[0])
                psum = 0.0
                wsum = 0.0
                if d1 == 0.0:
                    for q in range(k):
                        if best_d2[q] == 0.0:
                            psum += target[times[best_j[q]]]
                            wsum += 1.0
                else:
                    for q in range(k):
                        w = exp(-sqrt(best_d2[q]) / d1)
                        psum += w * target[times[best_j[q]]]
                        wsum += w
                c = count[li]
                pred[li, c] = psum / wsum
                actual[li, c] = target[times[i]]
                count[li] = c + 1

        for li in range(m):
            c = count[li]
            if c < 2:
                rho[li] = 0.0
                degen[li] = 1
                continue
            mean_a = 0.0
            mean_p = 0.0
            for q in range(c):
                mean_a += actual[li, q]
                mean_p += pred[li, q]
            mean_a /= c
            mean_p /= c
            cov = 0.0
            var_a = 0.0
            var_p = 0.0
            for q in range(c):
                da = actual[li, q] - mean_a
                dp = pred[li, q] - mean_p
                cov += da * dp
                var_a += da * da
                var_p += dp * dp
            if var_a <= 0.0 or var_p <= 0.0:
                rho[li] = 0.0
                degen[li] = 1
            else:
                r = cov / sqrt(var_a * var_p)
                if r > 1.0:
                    r = 1.0
                elif r < -1.0:
                    r = -1.0
                rho[li] = r
                degen[li] = 0

    return rho_arr, degen_arr, int(queries)
