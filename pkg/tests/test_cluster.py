import numpy as np
import pytest

from accd.cluster import (
    ActivityStats,
    agglomerate,
    burstiness_coefficient,
    compute_stats,
    default_k,
    schedule_pairs,
    shannon_entropy_bits,
)
from accd.errors import InvalidK
from accd.ingest import ActivitySeries


def series(values, uid="u"):
    values = np.asarray(values, dtype=np.float64)
    return ActivitySeries(uid, 0, len(values) * 60, 60, values)


def stats_at(uid, point):
    return ActivityStats(uid, point[0], point[1], point[2], point[3])


class TestComputeStats:
    def test_uniform_bins(self):
        s = compute_stats(series([2, 2, 2, 2]))
        assert s.mean == 2.0
        assert s.variance == 0.0
        assert s.entropy == pytest.approx(2.0)  # log2(4) bits

    def test_single_event_burstiness_zero(self):
        assert burstiness_coefficient([100]) == 0.0
        assert burstiness_coefficient([]) == 0.0

    def test_periodic_burstiness_minus_one(self):
        assert burstiness_coefficient([0, 10, 20, 30, 40]) == pytest.approx(-1.0)

    def test_entropy_degenerate(self):
        assert shannon_entropy_bits([0, 0, 5, 0]) == 0.0
        assert shannon_entropy_bits([0, 0, 0]) == 0.0

    def test_poisson_burstiness_near_zero(self):
        rng = np.random.default_rng(0)
        ts = np.cumsum(rng.exponential(10.0, size=5000))
        assert abs(burstiness_coefficient(ts)) < 0.05


class TestAgglomerate:
    def test_k_equals_n_gives_singletons(self):
        stats = [stats_at(f"u{i}", (i, 0, 0, 0)) for i in range(5)]
        assignment = agglomerate(stats, 5)
        assert assignment.sizes() == [1, 1, 1, 1, 1]

    def test_k_one_gives_single_cluster(self):
        stats = [stats_at(f"u{i}", (i, 0, 0, 0)) for i in range(5)]
        assignment = agglomerate(stats, 1)
        assert assignment.sizes() == [5]
        assert sorted(assignment.members[0]) == [f"u{i}" for i in range(5)]

    def test_invalid_k(self):
        stats = [stats_at("a", (0, 0, 0, 0))]
        with pytest.raises(InvalidK):
            agglomerate(stats, 0)
        with pytest.raises(InvalidK):
            agglomerate(stats, 2)

    def test_two_separated_blobs_recovered(self):
        rng = np.random.default_rng(42)
        stats = []
        for i in range(20):
            stats.append(stats_at(f"a{i:02d}", tuple(rng.normal(0, 0.1, 4))))
        for i in range(20):
            stats.append(stats_at(f"b{i:02d}", tuple(rng.normal(10, 0.1, 4))))
        assignment = agglomerate(stats, 2)
        groups = [set(m) for m in assignment.members.values()]
        expected_a = {f"a{i:02d}" for i in range(20)}
        expected_b = {f"b{i:02d}" for i in range(20)}
        assert {frozenset(g) for g in groups} == {frozenset(expected_a), frozenset(expected_b)}

    def test_partition_property(self):
        rng = np.random.default_rng(3)
        stats = [stats_at(f"u{i:03d}", tuple(rng.normal(size=4))) for i in range(60)]
        for k in (1, 5, 17, 60):
            assignment = agglomerate(stats, k)
            users = [u for m in assignment.members.values() for u in m]
            assert len(users) == 60 and len(set(users)) == 60
            assert all(len(m) > 0 for m in assignment.members.values())

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        stats = [stats_at(f"u{i:03d}", tuple(rng.normal(size=4))) for i in range(40)]
        a = agglomerate(stats, 6)
        b = agglomerate(list(reversed(stats)), 6)
        assert a.members == b.members


class TestSchedulePairs:
    def make_assignment(self, sizes):
        members = {}
        n = 0
        for cid, size in enumerate(sizes):
            members[cid] = [f"u{n+i:04d}" for i in range(size)]
            n += size
        from accd.cluster import ClusterAssignment

        return ClusterAssignment(len(sizes), members)

    def test_within_pair_count(self):
        assignment = self.make_assignment([2, 3])
        pairs = schedule_pairs(assignment, 0.0, seed=1)
        assert len(pairs) == 2 * 1 + 3 * 2  # 8 ordered pairs

    def test_cross_fraction_zero(self):
        assignment = self.make_assignment([4, 4])
        pairs = schedule_pairs(assignment, 0.0, seed=1)
        cluster_of = assignment.cluster_of()
        assert all(cluster_of[a] == cluster_of[b] for a, b in pairs)

    def test_pair_arithmetic_at_scale(self):
        # 10 equal clusters of 100: 99,000 within + 45,000 sampled cross
        assignment = self.make_assignment([100] * 10)
        pairs = schedule_pairs(assignment, 0.05, seed=0)
        within = 10 * 100 * 99
        cross_total = 1000 * 999 - within
        assert len(pairs) == within + round(0.05 * cross_total)
        assert len(pairs) == 144_000
        assert len(pairs) / (1000 * 999) <= 0.15

    def test_no_duplicates_and_no_self_pairs(self):
        assignment = self.make_assignment([5, 7, 3])
        pairs = schedule_pairs(assignment, 0.5, seed=7)
        assert len(pairs) == len(set(pairs))
        assert all(a != b for a, b in pairs)

    def test_seeded_determinism(self):
        assignment = self.make_assignment([10, 10, 10])
        assert schedule_pairs(assignment, 0.2, seed=5) == schedule_pairs(assignment, 0.2, seed=5)
        assert schedule_pairs(assignment, 0.2, seed=5) != schedule_pairs(assignment, 0.2, seed=6)

    def test_balanced_within_bound(self):
        # within-cluster ordered pairs for balanced clusters stay near U^2/k
        for users, k in ((200, 4), (500, 10)):
            assignment = self.make_assignment([users // k] * k)
            pairs = schedule_pairs(assignment, 0.0, seed=0)
            assert len(pairs) <= 1.1 * users**2 / k

    def test_invalid_fraction(self):
        assignment = self.make_assignment([3, 3])
        with pytest.raises(ValueError):
            schedule_pairs(assignment, 1.5)


def test_default_k():
    assert default_k(1000) == 10
    assert default_k(210) == 5
    assert default_k(5) == 1
