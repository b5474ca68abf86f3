import numpy as np
import pytest
from scipy.stats import chisquare

from hrdmil.clustering import ClusterAssignment, cluster_sizes
from hrdmil.datamodel import PatchMatrix, PatientBag
from hrdmil.errors import ConfigError, TooFewSlotsError, UseAllSignal
from hrdmil.sampling import (
    SamplingStrategy,
    allocate_proportional,
    draw_instance,
    random_allocation,
    sample_all,
    sample_cluster_weighted,
    sample_clustered_random,
    sample_random,
)


def _bag(n, dim=3, seed=0, coords=True):
    rng = np.random.default_rng(seed)
    c = np.stack([np.arange(n), np.zeros(n)], axis=1).astype(np.int32) if coords else None
    return PatientBag("P", PatchMatrix(rng.normal(size=(n, dim)).astype(np.float32), c), 33.0)


def _assignment(labels, k):
    labels = np.asarray(labels)
    return ClusterAssignment(labels, cluster_sizes(labels, k))


class TestAllocateProportional:
    def test_exact_share(self):
        assert allocate_proportional([60, 40], 10).tolist() == [6, 4]

    def test_min_one_and_remainder(self):
        # floor [5,1,0] -> lift -> [5,1,1], one left; 0.6 vs 0.6 tie goes to index 0
        assert allocate_proportional([70, 20, 10], 8).tolist() == [6, 1, 1]

    def test_one_per_cluster(self):
        sizes = np.random.default_rng(0).integers(1, 20, size=50)
        assert allocate_proportional(sizes, 50).tolist() == [1] * 50

    def test_surplus_removed_from_largest(self):
        # floors [9,0,0,0] lifted to [9,1,1,1] = 12 > 10
        alloc = allocate_proportional([97, 1, 1, 1], 10)
        assert alloc.tolist() == [7, 1, 1, 1]

    def test_empty_clusters_get_nothing(self):
        assert allocate_proportional([10, 0, 10], 4).tolist() == [2, 0, 2]

    def test_errors(self):
        with pytest.raises(TooFewSlotsError):
            allocate_proportional([5, 5, 5], 2)
        with pytest.raises(UseAllSignal):
            allocate_proportional([2, 2], 5)


class TestClusterWeighted:
    def test_one_row_per_cluster(self):
        bag = _bag(500)
        labels = np.arange(500) % 50
        inst = sample_cluster_weighted(bag, _assignment(labels, 50), 50, seed=1)
        assert inst.n == 50
        assert sorted(labels[inst.indices].tolist()) == list(range(50))

    def test_full_bag_when_s_equals_b(self):
        bag = _bag(20)
        inst = sample_cluster_weighted(bag, _assignment(np.arange(20) % 3, 3), 20, seed=0)
        assert inst.indices.tolist() == list(range(20))
        assert np.array_equal(inst.features, bag.matrix.features)

    def test_rows_match_source(self):
        bag = _bag(60, seed=3)
        inst = sample_cluster_weighted(bag, _assignment(np.arange(60) % 4, 4), 12, seed=2)
        assert np.array_equal(inst.features, bag.matrix.features[inst.indices])
        assert np.array_equal(inst.coords, bag.matrix.coords[inst.indices])
        assert inst.target == 33.0 and inst.patient_id == "P"

    def test_deterministic(self):
        bag = _bag(80)
        a = _assignment(np.arange(80) % 5, 5)
        i1 = sample_cluster_weighted(bag, a, 17, seed=9)
        i2 = sample_cluster_weighted(bag, a, 17, seed=9)
        assert np.array_equal(i1.indices, i2.indices)


class TestClusteredRandom:
    def test_forced_one_per_cluster(self):
        bag = _bag(40)
        labels = np.arange(40) % 8
        inst = sample_clustered_random(bag, _assignment(labels, 8), 8, seed=4)
        assert sorted(labels[inst.indices].tolist()) == list(range(8))

    def test_all_rows(self):
        bag = _bag(10)
        inst = sample_clustered_random(bag, _assignment(np.arange(10) % 2, 2), 10, seed=0)
        assert inst.indices.tolist() == list(range(10))

    def test_bounds_over_many_seeds(self):
        sizes = np.array([5, 5])
        for s in range(10_000):
            alloc = random_allocation(sizes, 4, np.random.default_rng(s))
            assert alloc.sum() == 4
            assert np.all(alloc >= 1) and np.all(alloc <= sizes)


class TestRandom:
    def test_full_bag(self):
        assert sample_random(_bag(9), 9, seed=0).n == 9

    def test_uniform_single_draw(self):
        bag = _bag(4)
        counts = np.zeros(4)
        for s in range(10_000):
            counts[sample_random(bag, 1, seed=s).indices[0]] += 1
        assert chisquare(counts).pvalue > 1e-3
        # each frequency within 3 sigma of 2500
        sigma = np.sqrt(10_000 * 0.25 * 0.75)
        assert np.all(np.abs(counts - 2500) < 3 * sigma)

    def test_distinct(self):
        inst = sample_random(_bag(50), 30, seed=5)
        assert len(set(inst.indices.tolist())) == 30


class TestAllAndDispatch:
    def test_all(self):
        bag = _bag(37)
        inst = sample_all(bag)
        assert inst.n == 37
        assert np.array_equal(sample_all(bag).indices, inst.indices)

    def test_dispatch(self):
        bag = _bag(30)
        a = _assignment(np.arange(30) % 3, 3)
        for v in ("cluster-weighted", "clustered-random", "random"):
            inst = draw_instance(bag, SamplingStrategy(v, 6), seed=1, assignment=a)
            assert inst.n == 6
        assert draw_instance(bag, SamplingStrategy("all", None), seed=1).n == 30

    def test_dispatch_requires_assignment(self):
        with pytest.raises(ConfigError):
            draw_instance(_bag(10), SamplingStrategy("cluster-weighted", 3), seed=0)

    def test_bad_bagsize(self):
        with pytest.raises(ConfigError):
            SamplingStrategy("random", 0)
