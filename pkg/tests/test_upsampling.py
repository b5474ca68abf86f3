import logging

import numpy as np
import pytest

from hrdmil.datamodel import Instance, PatchMatrix, PatientBag
from hrdmil.errors import ConfigError
from hrdmil.sampling import sample_random
from hrdmil.upsampling import UpsampleParams, bin_index, bin_targets, compute_budgets, upsample


def _instance(pid, target, n=3, dim=2, value=None):
    v = float(target) if value is None else value
    return Instance(pid, np.full((n, dim), v, np.float32), float(target), np.arange(n))


def _const_sampler(targets):
    def sampler(pid, seed):
        return _instance(pid, targets[pid])
    return sampler


class TestBinTargets:
    def test_uniform_spread(self):
        layout = bin_targets({f"p{i}": float(i) for i in range(7)}, 7)
        assert layout.bin_counts.tolist() == [1] * 7

    def test_two_bins(self):
        layout = bin_targets([("a", 0.0), ("b", 10.0)], 2)
        assert layout.bin_counts.tolist() == [1, 1]
        assert layout.edges.tolist() == [0.0, 5.0, 10.0]
        assert layout.patient_bins == [["a"], ["b"]]

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0, 100, 1000)
        y[:3] = [y.min(), y.max(), 50.0]
        layout = bin_targets({f"p{i}": v for i, v in enumerate(y)}, 7)
        assert layout.bin_counts.sum() == 1000
        lo, hi = y.min(), y.max()
        width = (hi - lo) / 7
        np.testing.assert_allclose(layout.edges, [lo + j * width for j in range(8)], atol=1e-9)
        for i, v in enumerate(y):
            b = next((j for j in range(7) if layout.edges[j] <= v < layout.edges[j + 1]), 6)
            assert f"p{i}" in layout.patient_bins[b]

    def test_interior_edge_goes_right(self):
        edges = np.array([0.0, 5.0, 10.0])
        assert bin_index(edges, [0.0, 4.999, 5.0, 10.0]).tolist() == [0, 0, 1, 1]
        with pytest.raises(ValueError):
            bin_index(edges, [10.5])

    def test_identical_targets_single_bin(self):
        layout = bin_targets({"a": 3.0, "b": 3.0}, 7)
        assert layout.n_bins == 1
        assert layout.bin_counts.tolist() == [2]
        assert compute_budgets(layout.bin_counts, UpsampleParams()).tolist() == [0]


class TestComputeBudgets:
    def test_worked_example(self):
        assert compute_budgets([100, 20, 4], UpsampleParams(3, 0.65, 0.25)).tolist() == [0, 20, 24]

    def test_flat_histogram(self):
        assert compute_budgets([10, 10, 10], UpsampleParams(3)).tolist() == [0, 0, 0]

    def test_cap_binds(self):
        assert compute_budgets([100, 1], UpsampleParams(2, 0.1, 1.0)).tolist() == [0, 10]

    def test_half_rounds_up(self):
        # (10 - 8) * 0.25 = 0.5 -> 1; 10 * 0.65 = 6.5 -> cap 7
        assert compute_budgets([10, 8, 0], UpsampleParams(3, 0.65, 0.25)).tolist() == [0, 1, 3]
        assert compute_budgets([10, 0], UpsampleParams(2, 0.65, 1.0)).tolist() == [0, 7]

    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"beta": 1.5}, {"n_bins": 0}])
    def test_rejects_bad_params(self, kw):
        with pytest.raises(ConfigError):
            UpsampleParams(**kw)


class TestUpsample:
    def _cohort(self):
        targets = {}
        for i in range(100):
            targets[f"a{i}"] = 1.0 + i * 0.01
        for i in range(20):
            targets[f"b{i}"] = 50.0
        for i in range(4):
            targets[f"c{i}"] = 99.0
        targets["lo"], targets["hi"] = 0.0, 100.0
        return targets

    def test_zero_budgets_identity(self):
        targets = self._cohort()
        layout = bin_targets(targets, 3)
        inst = [_instance(p, t) for p, t in targets.items()]
        res = upsample(inst, layout, [0, 0, 0], _const_sampler(targets), seed=0)
        assert res.instances == inst
        assert res.instances is not inst

    def test_worked_example_size(self):
        targets = self._cohort()
        del targets["lo"], targets["hi"]
        targets["c3"] = 100.0
        targets["a0"] = 0.0
        layout = bin_targets(targets, 3)
        assert layout.bin_counts.tolist() == [100, 20, 4]
        budgets = compute_budgets(layout.bin_counts, UpsampleParams(3, 0.65, 0.25))
        inst = [_instance(p, t) for p, t in targets.items()]
        res = upsample(inst, layout, budgets, _const_sampler(targets), seed=1)
        assert len(res.instances) == 124 + 44
        assert res.added_per_bin.tolist() == [0, 20, 24]
        new = res.instances[124:]
        assert all(i.patient_id.startswith("b") for i in new[:20])
        assert all(i.patient_id.startswith("c") for i in new[20:])

    def test_single_patient_bin_draws_differ(self):
        targets = {"x0": 0.0, "x1": 1.0, "y": 10.0}
        layout = bin_targets(targets, 2)
        bags = {p: PatientBag(p, PatchMatrix(np.random.default_rng(j).normal(size=(40, 2))), t)
                for j, (p, t) in enumerate(targets.items())}
        res = upsample([], layout, [0, 2], lambda pid, s: sample_random(bags[pid], 10, s), seed=3)
        a, b = res.instances
        assert a.patient_id == b.patient_id == "y"
        assert not np.array_equal(a.indices, b.indices)

    def test_no_row_mixing(self):
        targets = self._cohort()
        layout = bin_targets(targets, 7)
        budgets = compute_budgets(layout.bin_counts, UpsampleParams())
        res = upsample([], layout, budgets, _const_sampler(targets), seed=0)
        for inst in res.instances:
            assert np.all(inst.features == np.float32(targets[inst.patient_id]))

    def test_histogram_flattens(self):
        targets = self._cohort()
        layout = bin_targets(targets, 7)
        budgets = compute_budgets(layout.bin_counts, UpsampleParams())
        after = layout.bin_counts + budgets
        spread = lambda c: c.max() / c[c > 0].min()
        assert spread(after) < spread(layout.bin_counts)

    def test_deterministic(self):
        targets = self._cohort()
        layout = bin_targets(targets, 7)
        budgets = compute_budgets(layout.bin_counts, UpsampleParams())
        ids = lambda r: [i.patient_id for i in r.instances]
        r1 = upsample([], layout, budgets, _const_sampler(targets), seed=5)
        r2 = upsample([], layout, budgets, _const_sampler(targets), seed=5)
        assert ids(r1) == ids(r2)

    def test_empty_bin_skipped_with_warning(self, caplog):
        targets = {"a": 0.0, "b": 10.0}
        layout = bin_targets(targets, 3)
        with caplog.at_level(logging.WARNING):
            res = upsample([], layout, [0, 4, 1], _const_sampler(targets), seed=0)
        assert res.skipped_bins == [1]
        assert res.skipped_budget == 4
        assert len(res.instances) == 1
        assert "skipped" in caplog.text
