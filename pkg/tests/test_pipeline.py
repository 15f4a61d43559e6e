import numpy as np
import pytest
from scipy.optimize import brentq

from extremix.gev import gev_cdf
from extremix.mcmc import PosteriorStore, gev_init
from extremix.pipeline import (BiasCorrection, bias_correct,
                               expected_joint_exceedance, make_synthetic,
                               project_quantiles, scenario_covariates,
                               simulate_joint_exceedance, window_quantiles)
from extremix.rng import make_rng


class TestScenarioCovariates:
    def test_centered_decade_scale(self):
        z1, z2 = scenario_covariates(50)
        assert abs(z1.mean()) < 1e-12
        assert np.allclose(np.diff(z1), 0.1)
        assert np.allclose(z2, z1 - 0.05)


class TestMakeSynthetic:
    def test_deterministic(self):
        a, _ = make_synthetic(1, 8, 30, make_rng(99))
        b, _ = make_synthetic(1, 8, 30, make_rng(99))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.coords, b.coords)

    def test_unknown_scenario(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            make_synthetic(7, 5, 10, make_rng(1))

    def test_truth_record(self):
        data, truth = make_synthetic(2, 5, 20, make_rng(3))
        assert truth["mu0"] == 13.0 and truth["r"] == 0.9
        assert truth["deltas"].shape == (2, 20)
        assert truth["delta_bar"].shape == (2,)
        assert data.x.shape == (20, 1)
        assert data.z.shape == (2, 20)

    def test_weight_ordering_matches_link_coefficients(self):
        _, truth = make_synthetic(1, 5, 50, make_rng(4))
        assert truth["delta_bar"][0] < truth["delta_bar"][1]

    def test_supplied_layout_kept(self):
        coords = np.array([[0.1, 0.9], [0.2, 0.1], [0.8, 0.5]])
        regions = np.array([2, 1, 1])
        data, _ = make_synthetic(1, 3, 10, make_rng(5), coords=coords,
                                 regions=regions)
        assert np.array_equal(data.coords, coords)
        assert np.array_equal(data.regions, regions)

    def test_marginals_recovered_by_mle(self):
        data, truth = make_synthetic(1, 4, 200, make_rng(6))
        fits = np.stack([gev_init(data.y[:, s], data.x)
                         for s in range(4)])
        avg = fits.mean(axis=0)
        assert abs(avg[0] - truth["mu0"]) < 0.6
        assert abs(avg[1] - truth["mu1"]) < 0.5
        assert abs(np.exp(avg[2]) - truth["sigma"]) < 0.4
        assert abs(avg[3] - truth["xi"]) < 0.1


class TestBiasCorrection:
    def test_matches_observed_moments(self):
        rng = make_rng(11)
        obs = rng.normal(2.0, 0.7, size=300)
        gcm = rng.normal(1.1, 1.9, size=340)
        fixed = bias_correct(gcm, obs)
        assert abs(fixed.mean() - obs.mean()) < 1e-10
        assert abs(fixed.std() - obs.std()) < 1e-10

    def test_undoes_affine_distortion(self):
        rng = make_rng(12)
        obs = rng.normal(size=150)
        gcm = obs * 1.5 + 0.3
        assert np.allclose(bias_correct(gcm, obs), obs, atol=1e-10)

    def test_idempotent(self):
        rng = make_rng(13)
        obs = rng.normal(2.0, 0.5, size=200)
        gcm = rng.normal(0.0, 2.0, size=200)
        once = bias_correct(gcm, obs)
        twice = bias_correct(once, obs)
        assert np.allclose(twice, once, atol=1e-12)

    def test_projection_series_uses_historical_constants(self):
        rng = make_rng(14)
        obs = rng.normal(1.0, 0.4, size=100)
        gcm = rng.normal(3.0, 1.2, size=100)
        fut = rng.normal(3.5, 1.3, size=60)
        hist, proj = bias_correct(gcm, obs, projections=fut)
        bc = BiasCorrection.fit(obs, gcm)
        assert np.array_equal(proj, bc.apply(fut))
        assert np.array_equal(hist, bc.apply(gcm))

    def test_degenerate_and_empty_inputs(self):
        with pytest.raises(ValueError, match="zero +variance"):
            bias_correct(np.ones(10), np.arange(10.0))
        with pytest.raises(ValueError, match="nonempty"):
            bias_correct(np.array([]), np.arange(10.0))


def toy_store(n_sites=2, n_draws=12, seed=21):
    """Hand-built posterior store with plausible coefficient columns."""
    rng = make_rng(seed)
    names = []
    for f in ("mu0", "mu1", "log_sigma", "xi"):
        names += [f"{f}_s{s}" for s in range(n_sites)]
    names += ["beta10", "beta11", "beta20", "beta21", "rho", "r"]
    draws = np.empty((n_draws, len(names)))
    for j, name in enumerate(names):
        if name.startswith("mu0"):
            center = 12.0
        elif name.startswith("mu1"):
            center = 3.0
        elif name.startswith("log_sigma"):
            center = np.log(2.0)
        elif name.startswith("xi"):
            center = 0.15
        else:
            center = 0.3
        draws[:, j] = center + 0.05 * rng.normal(size=n_draws)
    return PosteriorStore(names, draws, {})


class TestProjection:
    def test_window_quantiles_against_root_oracle(self):
        theta = np.array([[12.0, 3.0, np.log(2.0), 0.15],
                          [11.0, 2.0, np.log(1.5), -0.05]])
        z1, _ = scenario_covariates(34)
        x = z1[:, None]
        out = window_quantiles(theta, x, (0.90, 0.99))
        for s in range(2):
            mu = theta[s, 0] + x[:, 0] * theta[s, 1]
            sig, xi = np.exp(theta[s, 2]), theta[s, 3]
            for li, p in enumerate((0.90, 0.99)):
                def f(y):
                    return np.prod(gev_cdf(np.full(mu.shape, y), mu, sig,
                                           xi)) - p
                oracle = brentq(f, mu.min() - 20, mu.max() + 400,
                                xtol=1e-10)
                assert abs(out[li, s] - oracle) < 1e-6

    def test_identical_covariates_zero_change(self):
        store = toy_store()
        z1, _ = scenario_covariates(34)
        x = z1[:, None]
        res = project_quantiles(store, x, {"same": x.copy()}, n_draws=6)
        assert np.all(res["same"]["pct_change"] == 0.0)
        assert np.all(res["same"]["mean_pct_change"] == 0.0)

    def test_location_shift_moves_quantiles_up(self):
        store = toy_store()
        z1, _ = scenario_covariates(34)
        x = z1[:, None]
        res = project_quantiles(store, x, {"warm": x + 0.5}, n_draws=6)
        assert np.all(res["warm"]["pct_change"] > 0.0)
        assert res["warm"]["mean_pct_change"].shape == (2, 2)

    def test_levels_ordered(self):
        store = toy_store()
        z1, _ = scenario_covariates(34)
        x = z1[:, None]
        res = project_quantiles(store, x, {"s": x + 0.2}, n_draws=6,
                                levels=(0.90, 0.99))
        q = res["s"]["quantiles"]
        assert np.all(q[:, 1, :] > q[:, 0, :])

    def test_insufficient_draws(self):
        store = toy_store(n_draws=4)
        z1, _ = scenario_covariates(10)
        with pytest.raises(ValueError, match="has 4 draws"):
            project_quantiles(store, z1[:, None], {"s": z1[:, None]},
                              n_draws=100)


class TestJointExceedance:
    def test_analytic_baseline(self):
        assert abs(expected_joint_exceedance(55, 0.90) - 5.5) < 1e-12
        assert abs(expected_joint_exceedance(55, 0.99) - 0.55) < 1e-12

    def test_independent_simulation_matches_binomial(self):
        regions = np.r_[np.ones(30, int), np.full(25, 2)]
        out = simulate_joint_exceedance((0.90, 0.99), 20000, make_rng(61),
                                        regions=regions, independent=True)
        for u in (0.90, 0.99):
            res = out[u]
            assert abs(res["mean"] - res["analytic"]) <= 3.0 * res["se"]
        binom_var = 55 * 0.9 * 0.1
        assert abs(out[0.90]["var"] - binom_var) < 0.15 * binom_var

    def test_dependent_field_has_inflated_count_variance(self):
        rng = make_rng(62)
        coords = rng.uniform(size=(20, 2))
        regions = np.where(coords[:, 1] >= 0.5, 2, 1)
        dep = simulate_joint_exceedance(
            (0.90,), 20000, make_rng(63), coords=coords, regions=regions,
            rho=0.4, r=0.9, delta_pair=(0.8, 0.8))
        ind = simulate_joint_exceedance(
            (0.90,), 20000, make_rng(64), regions=regions,
            independent=True)
        res = dep[0.90]
        assert abs(res["mean"] - res["analytic"]) <= 3.0 * res["se"]
        assert res["var"] > 1.5 * ind[0.90]["var"]
