"""Effective sample size estimator and the joint-distribution validator
(smoke-scale here; full-strength runs live in the acceptance suite)."""

import numpy as np
import pytest

from circafactor.diagnostics import effective_sample_size, geweke_joint_test


class TestEffectiveSampleSize:
    def test_iid_trace_lands_in_band(self):
        rng = np.random.default_rng(0)
        ess = effective_sample_size(rng.normal(size=1000))
        assert 700 <= ess <= 1300

    def test_never_exceeds_length(self):
        rng = np.random.default_rng(1)
        for seed in range(20):
            x = np.random.default_rng(seed).normal(size=500)
            assert effective_sample_size(x) <= 500

    def test_constant_trace_rejected(self):
        with pytest.raises(ValueError):
            effective_sample_size(np.full(100, 2.0))

    def test_ar1_matches_analytic_rate_within_factor_two(self):
        rho, n = 0.9, 20000
        rng = np.random.default_rng(2)
        x = np.empty(n)
        x[0] = rng.normal()
        for t in range(1, n):
            x[t] = rho * x[t - 1] + rng.normal() * np.sqrt(1 - rho ** 2)
        ess = effective_sample_size(x)
        target = n * (1 - rho) / (1 + rho)
        assert target / 2 <= ess <= target * 2


class TestGewekeJointTest:
    def test_reproducible_given_seed(self):
        a = geweke_joint_test(n_outer=300, mode="independent", seed=9)
        b = geweke_joint_test(n_outer=300, mode="independent", seed=9)
        np.testing.assert_array_equal(a.z_scores, b.z_scores)
        assert a.names == b.names

    def test_reports_enough_test_functions(self):
        res = geweke_joint_test(n_outer=200, mode="independent", seed=1)
        assert len(res.names) >= 15
        res_dep = geweke_joint_test(n_outer=200, mode="dependent", seed=1)
        assert len(res_dep.names) > len(res.names)

    def test_smoke_scale_sanity(self):
        # full-strength thresholds are exercised in the acceptance suite
        res = geweke_joint_test(n_outer=2500, mode="dependent", seed=21)
        assert res.max_abs_z < 6.0

    def test_fault_injection_detected_quickly(self):
        res = geweke_joint_test(n_outer=2500, mode="dependent", seed=22,
                                fault="sigma_rate_half")
        assert res.max_abs_z > 6.0

    def test_unknown_fault_rejected(self):
        with pytest.raises(ValueError):
            geweke_joint_test(n_outer=10, fault="nonsense")

    def test_report_files(self, tmp_path):
        from circafactor.diagnostics import write_ess_report

        res = geweke_joint_test(n_outer=150, mode="independent", seed=2)
        res.write_csv(tmp_path / "z.csv")
        lines = (tmp_path / "z.csv").read_text().splitlines()
        assert lines[0] == "test_function,z,marginal_mean,chain_mean"
        assert len(lines) == len(res.names) + 1
        rng = np.random.default_rng(0)
        write_ess_report(tmp_path / "ess.csv",
                         {"a": rng.normal(size=400), "b": rng.normal(size=300)})
        rows = (tmp_path / "ess.csv").read_text().splitlines()
        assert rows[0] == "trace,length,ess"
        assert len(rows) == 3
