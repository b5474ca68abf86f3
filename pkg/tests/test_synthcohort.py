import math

import numpy as np
import pytest

from hrdmil.datamodel import build_patient_bag, load_manifest
from hrdmil.errors import ConfigError, SingleClassError
from hrdmil.evaluation import pearson_corr
from hrdmil.synthcohort import (
    SynthSpec, draw_target, generate_cohort, oracle_auroc, oracle_mean_predictor_rmse,
    synth_patient, target_cdf,
)


class TestGenerator:
    def test_exact_recovery_without_noise(self):
        spec = SynthSpec(n_patients=5, signal_fraction=1.0, noise_sigma=0.0, signal_gain=3.0)
        for i in range(5):
            y, mat = synth_patient(spec, i)
            est = mat.features[:, : spec.signal_dims].astype(np.float64).mean() * 100 / spec.signal_gain
            assert abs(est - y) < 1e-4  # float32 storage
            assert np.all(mat.features[:, spec.signal_dims] == np.float32(spec.marker_shift))

    def test_right_skew(self):
        spec = SynthSpec(n_patients=1000)
        rng = np.random.default_rng(0)
        ys = np.array([draw_target(spec, rng) for _ in range(1000)])
        expected = float(target_cdf(spec, 42.0))
        assert expected > 0.6
        assert (ys < 42).mean() > 0.6
        assert abs((ys < 42).mean() - expected) < 3 * math.sqrt(expected * (1 - expected) / 1000)

    def test_left_skew_and_uniform(self):
        assert float(target_cdf(SynthSpec(skew="left-skewed"), 42.0)) < 0.2
        assert float(target_cdf(SynthSpec(skew="uniform"), 42.0)) == pytest.approx(0.42)

    def test_patch_counts_and_coords(self):
        spec = SynthSpec(n_patients=10, patches_min=30, patches_max=50)
        for i in range(10):
            _, mat = synth_patient(spec, i)
            assert 30 <= mat.n_patches <= 50
            assert len({tuple(c) for c in mat.coords}) == mat.n_patches

    def test_signal_patches_are_spatially_compact(self):
        spec = SynthSpec(n_patients=1, patches_min=200, patches_max=200, noise_sigma=0.0)
        _, mat = synth_patient(spec, 0)
        sig = mat.features[:, spec.signal_dims] > 1.0
        c = mat.coords.astype(float)
        spread = lambda pts: np.mean(np.linalg.norm(pts - pts.mean(axis=0), axis=1))
        assert spread(c[sig]) < spread(c)

    def test_byte_identical(self, tmp_path):
        spec = SynthSpec(n_patients=6, patches_min=10, patches_max=20, slides_per_patient=2, seed=4)
        generate_cohort(spec, tmp_path / "a")
        generate_cohort(spec, tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_cohort_loads_back(self, tmp_path):
        spec = SynthSpec(n_patients=4, patches_min=10, patches_max=12, slides_per_patient=2, dim=6, signal_dims=2)
        cohort = generate_cohort(spec, tmp_path)
        loaded = load_manifest(tmp_path / "manifest.json")
        assert loaded.patient_ids == cohort.patient_ids
        assert loaded.targets() == cohort.targets()
        _, mat = synth_patient(spec, 2)
        bag = build_patient_bag(loaded, loaded.patient_ids[2])
        assert np.array_equal(bag.matrix.features, mat.features)
        assert SynthSpec.from_json(tmp_path / "synth_spec.json") == spec

    def test_default_signal_is_learnable(self):
        # mean of marker-selected patches over the signal dims tracks y
        spec = SynthSpec(n_patients=150)
        ys, est = [], []
        for i in range(150):
            y, mat = synth_patient(spec, i)
            sel = mat.features[:, spec.signal_dims] > spec.marker_shift / 2
            ys.append(y)
            est.append(mat.features[sel, : spec.signal_dims].mean())
        assert pearson_corr(ys, est) > 0.8

    @pytest.mark.parametrize("kw", [{"n_patients": 0}, {"patches_min": 5, "patches_max": 4},
                                    {"signal_fraction": 0.0}, {"skew": "bimodal"},
                                    {"signal_dims": 40}, {"noise_sigma": -1.0}])
    def test_rejects_bad_spec(self, kw):
        with pytest.raises(ConfigError):
            SynthSpec(**kw)


class TestOracles:
    def test_auroc_oracle(self):
        assert oracle_auroc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
        assert oracle_auroc([2, 2, 2], [0, 1, 1]) == 0.5
        with pytest.raises(SingleClassError):
            oracle_auroc([1, 2], [1, 1])

    def test_mean_predictor_rmse(self):
        assert oracle_mean_predictor_rmse([4.0, 4.0, 4.0]) == 0.0
        assert oracle_mean_predictor_rmse([0.0, 10.0]) == 5.0
        y = np.random.default_rng(0).uniform(0, 100, 77)
        assert abs(oracle_mean_predictor_rmse(y) - math.sqrt(np.var(y))) < 1e-12
