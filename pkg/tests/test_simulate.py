"""Data-generating processes and Monte Carlo study harnesses."""

import numpy as np
import pytest

from panelsieve import (
    BasisSpec,
    DgpSpec,
    convergence_study,
    distribution_distance,
    gen_panel,
    grid_design,
    halton_design,
    replication_rng,
    size_power_study,
    stevens_constraint,
)
from panelsieve.simulate import _binomial_ci


def _iid_dgp(sigma2=1.0, kappa=1.0):
    return DgpSpec("stevens_linear", {"kappa": kappa},
                   error_model="iid", error_params={"sigma2": sigma2})


class TestDgpSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DgpSpec("wiggly", {})

    def test_negative_variance(self):
        with pytest.raises(ValueError):
            DgpSpec("stevens_linear", {}, error_params={"sigma2": -1.0})

    def test_stevens_surface(self):
        dgp = _iid_dgp(kappa=2.0)
        X = np.array([[1.0, 0.0], [0.5, 0.5]])
        np.testing.assert_allclose(dgp.f_true(X), [2.0, 0.0])

    def test_analytic_presets(self):
        d1 = DgpSpec("analytic_smooth", {"preset": "exp"})
        np.testing.assert_allclose(d1.f_true(np.array([[0.0]])), [1.0])
        d2 = DgpSpec("analytic_smooth", {"preset": "exp_diff"})
        np.testing.assert_allclose(d2.f_true(np.array([[1.0, 1.0]])), [1.0])

    def test_factor_sigma_bar(self):
        dgp = DgpSpec("stevens_linear", {}, error_model="factor",
                      error_params={"sigma_nu2": 2.0, "sigma_ups2": 3.0})
        S = dgp.sigma_bar(np.zeros((4, 2)))
        np.testing.assert_allclose(S, 2.0 * np.ones((4, 4)) + 3.0 * np.eye(4))


class TestGenPanel:
    def test_noiseless(self):
        dgp = _iid_dgp(sigma2=0.0)
        design = halton_design(10, 2, [(-1, 1)] * 2)
        data = gen_panel(dgp, design, 5, 0)
        np.testing.assert_array_equal(
            data.responses, np.tile(dgp.f_true(design.points), (5, 1))
        )

    def test_factor_offdiagonal_moment(self):
        # per-subject covariance over large T has off-diagonal ~ sigma_nu^2
        dgp = DgpSpec("stevens_linear", {"kappa": 0.0}, error_model="factor",
                      error_params={"sigma_nu2": 1.0, "sigma_ups2": 1.0})
        design = halton_design(2000, 2, [(-1, 1)] * 2)
        data = gen_panel(dgp, design, 200, 1)
        eps = data.responses  # f == 0
        covs = eps @ eps.T / eps.shape[1]  # subject x subject, but we need per-i
        # per-subject: mean of eps_it eps_is over t != s approximates nu_i^2;
        # averaged over subjects it approximates sigma_nu^2
        row_means = eps.mean(axis=1)
        off = row_means**2 - (eps**2).mean(axis=1) / eps.shape[1]
        assert off.mean() == pytest.approx(1.0, abs=0.25)

    def test_determinism(self):
        dgp = _iid_dgp()
        design = halton_design(8, 2, [(-1, 1)] * 2)
        a = gen_panel(dgp, design, 7, 42)
        b = gen_panel(dgp, design, 7, 42)
        assert np.array_equal(a.responses, b.responses)

    def test_uniform_noise_variance(self):
        dgp = DgpSpec("stevens_linear", {"kappa": 0.0},
                      error_params={"sigma2": 4.0}, noise_law="uniform")
        design = halton_design(50, 2, [(-1, 1)] * 2)
        data = gen_panel(dgp, design, 2000, 3)
        assert data.responses.var() == pytest.approx(4.0, rel=0.05)
        assert np.abs(data.responses).max() <= 2.0 * np.sqrt(3.0) + 1e-12

    def test_bad_n(self):
        with pytest.raises(ValueError):
            gen_panel(_iid_dgp(), halton_design(4, 2, [(-1, 1)] * 2), 0, 0)


class TestReplicationStreams:
    def test_order_independence(self):
        # same (seed, cell, rep) triple gives the same stream regardless of
        # the order in which streams are created
        a = replication_rng(5, 2, 7).standard_normal(4)
        _ = replication_rng(5, 0, 0).standard_normal(4)
        b = replication_rng(5, 2, 7).standard_normal(4)
        assert np.array_equal(a, b)

    def test_distinct_cells_distinct_streams(self):
        a = replication_rng(5, 0, 0).standard_normal(4)
        b = replication_rng(5, 1, 0).standard_normal(4)
        assert not np.array_equal(a, b)


class TestConvergenceStudy:
    def test_zero_noise_skips_slope(self):
        spec = BasisSpec("legendre", (2, 2))
        rng = np.random.default_rng(0)
        dgp = DgpSpec("polynomial",
                      {"spec": spec, "beta": rng.normal(size=9)},
                      error_params={"sigma2": 0.0})
        res = convergence_study(
            dgp, spec, lambda T: halton_design(T, 2, [(-1, 1)] * 2),
            [(10, 20), (40, 20)], reps=3, master_seed=1,
        )
        assert res.summary["slope_skipped"]
        for cell in res.cells:
            assert cell["median_sup_error"] <= 1e-10

    def test_reproducible(self):
        spec = BasisSpec("legendre", (1, 1))
        dgp = _iid_dgp()
        args = (dgp, spec, lambda T: halton_design(T, 2, [(-1, 1)] * 2),
                [(20, 10), (80, 10)])
        r1 = convergence_study(*args, reps=5, master_seed=3)
        r2 = convergence_study(*args, reps=5, master_seed=3)
        assert r1.cells == r2.cells
        assert r1.summary == r2.summary

    def test_csv_json_roundtrip(self, tmp_path):
        import csv
        import json

        spec = BasisSpec("legendre", (1, 1))
        res = convergence_study(
            _iid_dgp(), spec, lambda T: halton_design(T, 2, [(-1, 1)] * 2),
            [(20, 10)], reps=3, master_seed=0,
        )
        jpath = tmp_path / "study.json"
        cpath = tmp_path / "cells.csv"
        res.to_json(jpath)
        res.to_csv(cpath)
        loaded = json.loads(jpath.read_text())
        assert loaded["master_seed"] == 0
        assert len(loaded["cells"]) == 1
        with open(cpath) as fh:
            rows = list(csv.DictReader(fh))
        metrics = {r["metric"] for r in rows}
        assert "median_sup_error" in metrics


class TestSizePowerStudy:
    def test_trivial_level_one(self):
        spec = BasisSpec("legendre", (1, 1))
        dgp = _iid_dgp()
        design = halton_design(10, 2, [(-1, 1)] * 2)
        con = stevens_constraint(spec)
        res = size_power_study(dgp, spec, con, design, n=50, reps=20,
                               level=1.0, sigma_mode="known", master_seed=0)
        assert res.cells[0]["rejection_rate"] == 1.0

    def test_invalid_reps(self):
        spec = BasisSpec("legendre", (1, 1))
        with pytest.raises(ValueError):
            size_power_study(_iid_dgp(), spec, stevens_constraint(spec),
                             halton_design(10, 2, [(-1, 1)] * 2), n=10,
                             reps=0, level=0.05, sigma_mode="known",
                             master_seed=0)

    def test_power_against_distortion(self):
        # kappa = 1 null holds; a cubic distortion should reject strongly
        spec = BasisSpec("legendre", (3, 3))
        distorted = DgpSpec(
            "analytic_smooth", {"preset": "exp_diff"},
            error_params={"sigma2": 0.05},
        )
        design = halton_design(20, 2, [(-1, 1)] * 2)
        con = stevens_constraint(spec)
        res = size_power_study(distorted, spec, con, design, n=500, reps=50,
                               level=0.05, sigma_mode="known", master_seed=4)
        assert res.cells[0]["rejection_rate"] >= 0.9


class TestBinomialCi:
    def test_degenerate_endpoints(self):
        lo, hi = _binomial_ci(0, 100)
        assert lo == 0.0 and hi < 0.06
        lo, hi = _binomial_ci(100, 100)
        assert hi == 1.0 and lo > 0.94

    def test_contains_point_estimate(self):
        lo, hi = _binomial_ci(37, 500)
        assert lo < 37 / 500 < hi


class TestDistributionDistance:
    def test_reference_samples_small_distance(self):
        # Kolmogorov 99% bound: 1.63 / sqrt(m)
        m = 10**4
        rng = np.random.default_rng(0)
        z = rng.standard_normal(m)
        assert distribution_distance(z, "normal") <= 1.63 / np.sqrt(m)
        c = rng.chisquare(5, m)
        assert distribution_distance(c, "chi2", R=5) <= 1.63 / np.sqrt(m)

    def test_constant_sample(self):
        assert distribution_distance(np.zeros(200), "normal") >= 0.5

    def test_small_sample_rejected(self):
        with pytest.raises(ValueError):
            distribution_distance(np.zeros(50), "normal")

    def test_exactness_vs_naive_sup(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(500)
        from scipy import stats

        got = distribution_distance(x, "normal")
        expect = stats.kstest(x, "norm").statistic
        assert got == pytest.approx(expect, abs=1e-12)
