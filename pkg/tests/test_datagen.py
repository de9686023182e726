import json

import numpy as np
import pytest

from nsregret.core import ConfigError, total_variation
from nsregret.datagen import (NoiseSpec, SequenceProfile, gen_comparator,
                              gen_labels, gen_linear_dual_example, write_generated_csv)
from nsregret.oracle import tv_constrained_solve


PROFILES = ["piecewise_constant", "single_spike", "sinusoid", "random_walk_projected"]


class TestGenComparator:
    def test_zero_budget_constant(self):
        prof = SequenceProfile("piecewise_constant", n=50, C_n=0.0, B=1.0, seed=0)
        w = gen_comparator(prof)
        assert w.total_variation == 0.0
        assert np.all(w.w == w.w[0])

    @pytest.mark.parametrize("kind", PROFILES)
    def test_tv_class_membership(self, kind):
        for seed in range(5):
            prof = SequenceProfile(kind, n=200, C_n=1.0, B=1.0, seed=seed,
                                   jump_count=3, frequency=2.0)
            w = gen_comparator(prof)
            assert w.in_tv_class(1.0, 1.0)
            assert 0.9 <= w.total_variation <= 1.0 + 1e-12

    @pytest.mark.parametrize("kind", PROFILES)
    def test_multid(self, kind):
        prof = SequenceProfile(kind, n=100, C_n=1.5, B=1.0, seed=3, d=3,
                               jump_count=4, frequency=1.0)
        w = gen_comparator(prof)
        assert w.w.shape == (100, 3)
        assert w.in_tv_class(1.5, 1.0)

    def test_single_jump_size(self):
        prof = SequenceProfile("piecewise_constant", n=64, C_n=1.0, B=1.0,
                               seed=1, jump_count=1)
        w = gen_comparator(prof)
        jumps = np.abs(np.diff(w.w.ravel()))
        assert np.count_nonzero(jumps) == 1
        assert 0.9 <= float(jumps.sum()) <= 1.0

    def test_seed_determinism(self):
        prof = SequenceProfile("random_walk_projected", n=128, C_n=1.0, B=1.0, seed=9)
        a = gen_comparator(prof)
        b = gen_comparator(prof)
        assert a.w.tobytes() == b.w.tobytes()

    def test_infeasible_request(self):
        with pytest.raises(ConfigError):
            gen_comparator(SequenceProfile("piecewise_constant", n=32, C_n=10.0,
                                           B=1.0, seed=0, jump_count=1))


class TestGenLabels:
    def test_no_noise_returns_comparator(self):
        prof = SequenceProfile("sinusoid", n=64, C_n=1.0, B=0.5, seed=2)
        w = gen_comparator(prof)
        labels = gen_labels(w, NoiseSpec("none", seed=0), B=1.0)
        np.testing.assert_array_equal(labels, w.w)

    def test_labels_stay_in_box(self):
        prof = SequenceProfile("piecewise_constant", n=256, C_n=1.0, B=0.5,
                               seed=4, jump_count=3)
        w = gen_comparator(prof)
        labels = gen_labels(w, NoiseSpec("uniform", sigma=0.5, seed=5), B=1.0)
        assert np.all(np.abs(labels) <= 1.0)

    def test_headroom_violation(self):
        prof = SequenceProfile("piecewise_constant", n=64, C_n=1.0, B=0.9,
                               seed=6, jump_count=2)
        w = gen_comparator(prof)
        with pytest.raises(ConfigError):
            gen_labels(w, NoiseSpec("uniform", sigma=0.5, seed=7), B=1.0)

    def test_truncated_gaussian_respects_clip(self):
        prof = SequenceProfile("constant", n=512, C_n=0.0, B=0.2, seed=8)
        w = gen_comparator(prof)
        labels = gen_labels(w, NoiseSpec("truncated_gaussian", sigma=0.3,
                                         clip=0.6, seed=9), B=1.0)
        assert np.all(np.abs(labels - w.w) <= 0.6 + 1e-12)

    def test_uniform_noise_mean(self):
        # 10^6 draws: the empirical mean is within 3 sigma/sqrt(n) of zero
        n = 1_000_000
        w_arr = np.zeros(n)
        from nsregret.core import ComparatorSequence
        w = ComparatorSequence(w_arr)
        sigma = 0.5
        labels = gen_labels(w, NoiseSpec("uniform", sigma=sigma, seed=10), B=1.0)
        eps = labels.ravel()
        std = sigma / np.sqrt(3.0)
        assert abs(float(np.mean(eps))) <= 3.0 * std / np.sqrt(n)


class TestLinearDualExample:
    def test_n6_values(self):
        ex = gen_linear_dual_example(6)
        np.testing.assert_array_equal(ex.labels, [-2, -1, 1, 2, 2, 2])
        np.testing.assert_array_equal(ex.expected_u, [0, 0, 1, 1, 1, 1])
        assert ex.expected_lambda == 3.0
        np.testing.assert_allclose(ex.expected_s, [2 / 3, 1, 1, 2 / 3, 1 / 3])

    def test_lambda_scales_with_horizon(self):
        assert gen_linear_dual_example(8).expected_lambda == 4.0
        assert gen_linear_dual_example(64).expected_lambda == 32.0

    @pytest.mark.parametrize("n", [6, 8, 16, 64])
    def test_stationarity_of_published_certificate(self, n):
        # y_t = u_t - lambda (s_t - s_{t-1}) holds exactly for the published
        # subgradient ramp
        ex = gen_linear_dual_example(n)
        s_full = np.concatenate([[0.0], ex.expected_s, [0.0]])
        resid = ex.labels - (ex.expected_u - ex.expected_lambda * np.diff(s_full))
        assert np.max(np.abs(resid)) <= 1e-12
        assert np.max(np.abs(ex.expected_s)) <= 1.0

    @pytest.mark.parametrize("n", [6, 8, 16])
    def test_oracle_reproduces_example(self, n):
        ex = gen_linear_dual_example(n)
        sol = tv_constrained_solve(ex.labels, ex.C_n, ex.B)
        np.testing.assert_allclose(sol.u.ravel(), ex.expected_u, atol=1e-9)
        assert sol.lam == pytest.approx(ex.expected_lambda, abs=1e-6)

    def test_rejects_bad_n(self):
        with pytest.raises(ConfigError):
            gen_linear_dual_example(5)
        with pytest.raises(ConfigError):
            gen_linear_dual_example(4)


def test_generated_csv_metadata(tmp_path):
    prof = SequenceProfile("piecewise_constant", n=16, C_n=1.0, B=0.5,
                           seed=11, jump_count=2)
    w = gen_comparator(prof)
    labels = gen_labels(w, NoiseSpec("uniform", sigma=0.25, seed=12), B=1.0)
    path = tmp_path / "inst.csv"
    write_generated_csv(path, labels, w.w,
                        meta={"profile": "piecewise_constant", "seed": 11,
                              "realized_tv": w.total_variation})
    lines = path.read_text().splitlines()
    meta = json.loads(lines[0][1:])
    assert meta["schema_version"] == 1
    assert meta["realized_tv"] == w.total_variation
    assert lines[1] == "t,k,y,w"
    assert len(lines) == 2 + 16
