import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accd.embed import NeighborIndex, RollingEmbedder, build_index, embed_series, query_knn
from accd.errors import NotEnoughPoints, SeriesTooShort


def exhaustive_knn(points, times, query, k, exclude_time=None, radius=0):
    # oracle: full scan with (distance, time) ordering; radius 0 = no window
    rows = []
    for p, t in zip(points, times):
        if exclude_time is not None and radius > 0 and abs(t - exclude_time) <= radius:
            continue
        rows.append((float(np.linalg.norm(np.asarray(p) - np.asarray(query))), int(t)))
    rows.sort()
    return [(t, d) for d, t in rows[:k]]


class TestEmbedSeries:
    def test_direct_substitution(self):
        emb = embed_series(np.array([1.0, 2.0, 3.0, 4.0]), E=2, tau=1)
        assert list(emb.time_indices) == [1, 2, 3]
        assert emb.vectors.tolist() == [[2.0, 1.0], [3.0, 2.0], [4.0, 3.0]]

    def test_e1_degenerate(self):
        emb = embed_series(np.array([5.0]), E=1, tau=1)
        assert list(emb.time_indices) == [0]
        assert emb.vectors.tolist() == [[5.0]]

    def test_index_arithmetic_oracle(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=20)
        emb = embed_series(values, E=3, tau=4)
        assert len(emb) == 20 - 2 * 4
        for i, t in enumerate(emb.time_indices):
            for lag in range(3):
                assert emb.vectors[i, lag] == values[t - lag * 4]

    def test_too_short(self):
        with pytest.raises(SeriesTooShort) as err:
            embed_series(np.zeros(4), E=3, tau=2)
        assert err.value.needed == 5

    def test_point_count_arithmetic(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            E = int(rng.integers(1, 5))
            tau = int(rng.integers(1, 5))
            expected = n - (E - 1) * tau
            if expected < 1:
                with pytest.raises(SeriesTooShort):
                    embed_series(rng.normal(size=n), E, tau)
            else:
                assert len(embed_series(rng.normal(size=n), E, tau)) == expected


class TestRollingEmbedder:
    def test_first_emission(self):
        emb = RollingEmbedder(E=2, tau=1)
        assert emb.push(1.0) is None
        vec = emb.push(2.0)
        assert vec.tolist() == [2.0, 1.0]

    def test_warmup_silence(self):
        emb = RollingEmbedder(E=3, tau=2)
        for v in range(4):
            assert emb.push(float(v)) is None
        assert emb.push(4.0) is not None

    @given(
        st.integers(min_value=1, max_value=5),
        st.integers(min_value=1, max_value=5),
        st.lists(st.floats(allow_nan=False, allow_infinity=False, width=32), min_size=1, max_size=60),
    )
    @settings(max_examples=200, deadline=None)
    def test_incremental_equals_batch(self, E, tau, values):
        emb = RollingEmbedder(E, tau)
        emitted = [v for v in (emb.push(x) for x in values) if v is not None]
        warmup = (E - 1) * tau
        if len(values) < warmup + 1:
            assert emitted == []
            return
        batch = embed_series(np.array(values, dtype=np.float64), E, tau)
        assert len(emitted) == len(batch)
        for inc, bat in zip(emitted, batch.vectors):
            assert inc.tobytes() == bat.tobytes()  # bit-identical


class TestNeighborIndex:
    def test_hand_distances(self):
        emb = embed_series(np.array([0.0, 1.0, 5.0]), E=1, tau=1)
        idx = build_index(emb)
        result = query_knn(idx, [0.9], k=2)
        assert [t for t, _ in result] == [1, 0]
        assert result[0][1] == pytest.approx(0.1)
        assert result[1][1] == pytest.approx(0.9)

    def test_self_query_distance_zero(self):
        rng = np.random.default_rng(1)
        emb = embed_series(rng.normal(size=30), E=3, tau=2)
        idx = build_index(emb, excluded_radius=0)
        t5 = int(emb.time_indices[5])
        top = query_knn(idx, emb.vectors[5], k=1)
        assert top[0] == (t5, 0.0)

    def test_exclusion_removes_self(self):
        rng = np.random.default_rng(2)
        emb = embed_series(rng.normal(size=30), E=2, tau=1)
        idx = build_index(emb, excluded_radius=1)
        t = int(emb.time_indices[5])
        result = idx.query(emb.vectors[5], k=3, exclude_time=t)
        assert all(abs(tj - t) > 1 for tj, _ in result)

    def test_not_enough_points(self):
        emb = embed_series(np.array([1.0, 2.0, 3.0]), E=1, tau=1)
        idx = build_index(emb, excluded_radius=1)
        with pytest.raises(NotEnoughPoints):
            idx.query([1.0], k=3, exclude_time=1)

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            n = int(rng.integers(8, 60))
            values = rng.normal(size=n)
            E = int(rng.integers(1, 4))
            if n - (E - 1) < 5:
                continue
            emb = embed_series(values, E, 1)
            radius = int(rng.integers(0, 3))
            idx = build_index(emb, excluded_radius=radius)
            k = int(rng.integers(1, 4))
            q = rng.normal(size=E)
            expected = exhaustive_knn(emb.vectors, emb.time_indices, q, k)
            assert query_knn(idx, q, k) == [(t, pytest.approx(d)) for t, d in expected]
            t_ex = int(emb.time_indices[rng.integers(0, len(emb))])
            avail = sum(1 for t in emb.time_indices if abs(t - t_ex) > radius)
            if avail >= k:
                expected = exhaustive_knn(emb.vectors, emb.time_indices, q, k, t_ex, radius)
                assert idx.query(q, k, exclude_time=t_ex) == [(t, pytest.approx(d)) for t, d in expected]

    def test_limit_restricts_to_library_prefix(self):
        rng = np.random.default_rng(4)
        emb = embed_series(rng.normal(size=40), E=2, tau=1)
        idx = build_index(emb)
        result = idx.query(emb.vectors[30], k=3, limit=10)
        assert all(t <= int(emb.time_indices[9]) for t, _ in result)
