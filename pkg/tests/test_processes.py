import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from extremix.gev import gev_cdf, gev_quantile
from extremix.processes import (BrownResnickSampler, brown_resnick_sample,
                                corr_with_nugget, delta_link, g_r, g_w,
                                gp_sample, hypoexp_cdf, hypoexp_pdf,
                                hypoexp_quantile, mixture_sample,
                                msp_with_nugget, powered_exp_corr,
                                site_deltas)

KS01 = 1.63  # asymptotic 0.01-level KS constant: stat < KS01/sqrt(n)


def test_powered_exp_corr_values():
    assert powered_exp_corr(0.0, 0.5, 1.0, 1.0) == pytest.approx(1.0)
    # effective-range anchor: correlation 0.40 at h=0.12 with rho=0.134
    assert powered_exp_corr(0.12, 0.134, 1.0, 1.0) == pytest.approx(0.408, abs=5e-4)
    assert powered_exp_corr(1e9, 0.3, 1.0, 0.9) == pytest.approx(0.0, abs=1e-12)


def test_powered_exp_corr_rejects():
    with pytest.raises(ValueError):
        powered_exp_corr(-0.1, 0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        powered_exp_corr(0.1, 0.5, 3.0, 1.0)


def test_gp_sample_single_site_standard_normal():
    rng = np.random.default_rng(0)
    w = gp_sample(np.array([[0.5, 0.5]]), 0.3, 1.0, 0.9, rng, size=30000)
    assert stats.kstest(w[:, 0], "norm").statistic < KS01 / math.sqrt(30000)


def test_gp_sample_correlation_matrix():
    rng = np.random.default_rng(1)
    coords = np.array([[0.0, 0.0], [0.1, 0.0], [0.5, 0.5]])
    rho, alpha, r = 0.3, 1.0, 0.8
    w = gp_sample(coords, rho, alpha, r, rng, size=100000)
    target = corr_with_nugget(coords, rho, alpha, r)
    est = np.corrcoef(w.T)
    assert np.max(np.abs(est - target)) < 0.01


def test_gp_sample_pure_nugget_independent():
    rng = np.random.default_rng(2)
    coords = np.array([[0.0, 0.0], [0.01, 0.0]])
    w = gp_sample(coords, 0.3, 1.0, 0.0, rng, size=50000)
    assert abs(np.corrcoef(w.T)[0, 1]) < 0.02


def test_brown_resnick_marginal_ks():
    rng = np.random.default_rng(3)
    z = brown_resnick_sample(np.array([[0.2, 0.8]]), 0.19, 1.0, rng, size=100000)
    stat = stats.kstest(z[:, 0], lambda t: gev_cdf(t, 1.0, 1.0, 1.0)).statistic
    assert stat < KS01 / math.sqrt(100000)


def _extremal_coefficient(z):
    # 1/max(Z1..Zk) is Exp(theta) for unit Frechet max-stable fields
    inv = 1.0 / z.max(axis=1)
    return 1.0 / inv.mean(), inv


def test_brown_resnick_extremal_coefficient_unit_variogram():
    rng = np.random.default_rng(4)
    coords = np.array([[0.0, 0.0], [1.0, 0.0]])  # gamma(h)=1 at rho_R=1
    z = brown_resnick_sample(coords, 1.0, 1.0, rng, size=100000)
    theta, inv = _extremal_coefficient(z)
    assert theta == pytest.approx(2 * ndtr(0.5), abs=0.02)


def test_brown_resnick_extremal_coefficient_five_distances():
    rng = np.random.default_rng(5)
    rho_r = 0.19
    for h in (0.03, 0.08, 0.15, 0.3, 0.6):
        coords = np.array([[0.0, 0.0], [h, 0.0]])
        z = brown_resnick_sample(coords, rho_r, 1.0, rng, size=40000)
        theta, inv = _extremal_coefficient(z)
        true = 2 * ndtr(math.sqrt(h / rho_r) / 2)
        se = true * inv.std() / (inv.mean() * math.sqrt(len(inv)))
        assert abs(theta - true) < 3 * se + 1e-12, (h, theta, true)


def test_brown_resnick_full_dependence_limit():
    rng = np.random.default_rng(6)
    coords = np.array([[0.0, 0.0], [0.5, 0.5]])
    z = brown_resnick_sample(coords, 1e9, 1.0, rng, size=20000)
    theta, _ = _extremal_coefficient(z)
    assert theta == pytest.approx(1.0, abs=0.02)


def test_msp_with_nugget_boundaries():
    rng = np.random.default_rng(7)
    r1 = 1.0 / rng.exponential(size=(1000, 3))
    out = msp_with_nugget(r1, 1.0, np.random.default_rng(8))
    assert np.array_equal(out, r1)
    out0 = msp_with_nugget(r1, 0.0, np.random.default_rng(9))
    assert stats.kstest(out0.ravel(),
                        lambda t: gev_cdf(t, 1, 1, 1)).statistic < 0.05
    with pytest.raises(ValueError):
        msp_with_nugget(r1, 1.2, rng)


def test_msp_with_nugget_margins_preserved():
    rng = np.random.default_rng(10)
    coords = np.array([[0.0, 0.0], [0.2, 0.1]])
    r1 = BrownResnickSampler(coords).sample(0.19, rng, size=100000)
    out = msp_with_nugget(r1, 0.88, rng)
    stat = stats.kstest(out[:, 0], lambda t: gev_cdf(t, 1, 1, 1)).statistic
    assert stat < KS01 / math.sqrt(100000)


def test_g_r_quantile_identity():
    for p in (0.1, 0.5, 0.9):
        v = gev_quantile(p, 1.0, 1.0, 1.0)
        assert g_r(v) == pytest.approx(-math.log(1 - p), rel=1e-10)
    with pytest.raises(ValueError):
        g_r(-1.0)


def test_g_w_at_zero():
    assert g_w(0.0) == pytest.approx(math.log(2.0), abs=1e-14)


def test_transforms_give_exponential():
    rng = np.random.default_rng(11)
    z = 1.0 / rng.exponential(size=100000)  # unit Frechet
    e1 = g_r(z)
    assert stats.kstest(e1, "expon").statistic < KS01 / math.sqrt(100000)
    w = rng.normal(size=100000)
    e2 = g_w(w)
    assert stats.kstest(e2, "expon").statistic < KS01 / math.sqrt(100000)


def test_delta_link_values():
    assert delta_link(0.0, 0.0, 1.23) == pytest.approx(0.5, abs=1e-15)
    assert delta_link(-1.0, 1.8, 0.0) == pytest.approx(0.15865525, abs=1e-7)
    z = np.linspace(-3, 3, 50)
    d = delta_link(-0.5, 2.0, z)
    assert np.all(np.diff(d) > 0)


def test_delta_link_against_erf():
    # independent oracle built on math.erf
    rng = np.random.default_rng(12)
    for _ in range(200):
        b0, b1, z = rng.normal(size=3)
        ref = 0.5 * (1.0 + math.erf((b0 + b1 * z) / math.sqrt(2.0)))
        ref = min(max(ref, 1e-12), 1 - 1e-12)
        assert delta_link(b0, b1, z) == pytest.approx(ref, abs=1e-12)


def test_delta_link_clamps():
    assert delta_link(-50.0, 0.0, 0.0) == 1e-12
    assert delta_link(50.0, 0.0, 0.0) == 1 - 1e-12


def test_hypoexp_cdf_examples():
    assert hypoexp_cdf(1.0, 0.3) == pytest.approx(
        1 - (0.7 / 0.4) * math.exp(-1 / 0.7) + (0.3 / 0.4) * math.exp(-1 / 0.3),
        abs=1e-14)
    assert hypoexp_cdf(1.0, 0.3) == pytest.approx(0.6074, abs=5e-5)
    assert hypoexp_cdf(1.0, 0.5) == pytest.approx(1 - 3 * math.exp(-2), abs=1e-14)
    # boundary weights collapse to a single exponential
    v = np.linspace(0, 5, 11)
    assert np.allclose(hypoexp_cdf(v, 0.0), -np.expm1(-v), atol=1e-15)
    assert np.allclose(hypoexp_cdf(v, 1.0), -np.expm1(-v), atol=1e-15)
    with pytest.raises(ValueError):
        hypoexp_cdf(-0.1, 0.3)


def test_hypoexp_cdf_monte_carlo():
    rng = np.random.default_rng(13)
    n = 10 ** 6
    for d in (0.05, 0.3, 0.5):
        s = d * rng.exponential(size=n) + (1 - d) * rng.exponential(size=n)
        stat = stats.kstest(s, lambda t: hypoexp_cdf(t, d)).statistic
        assert stat < KS01 / math.sqrt(n), d


def test_hypoexp_series_branch_continuity():
    v = np.linspace(0.0, 10.0, 4001)
    a = hypoexp_cdf(v, 0.5 + 1e-5)
    b = hypoexp_cdf(v, 0.5 - 1e-5)
    assert np.max(np.abs(a - b)) < 1e-6
    # across the seam between the series and the direct branch
    a = hypoexp_cdf(v, 0.5 + 1.0000001e-4)
    b = hypoexp_cdf(v, 0.5 + 0.9999999e-4)
    assert np.max(np.abs(a - b)) < 1e-9
    # exact Gamma(2, rate 2) limit at the point itself
    assert np.allclose(hypoexp_cdf(v, 0.5), 1 - (1 + 2 * v) * np.exp(-2 * v),
                       atol=1e-12)


def test_hypoexp_pdf_is_cdf_derivative():
    v = np.linspace(0.01, 8, 300)
    for d in (0.2, 0.4999, 0.5, 0.77):
        fd = (hypoexp_cdf(v + 1e-6, d) - hypoexp_cdf(v - 1e-6, d)) / 2e-6
        assert np.max(np.abs(fd - hypoexp_pdf(v, d))) < 1e-8


def test_hypoexp_quantile_roundtrip():
    rng = np.random.default_rng(14)
    p = rng.uniform(1e-3, 1 - 1e-3, size=1000)
    d = rng.uniform(1e-3, 1 - 1e-3, size=1000)
    q = hypoexp_quantile(p, d)
    assert np.max(np.abs(hypoexp_cdf(q, d) - p)) < 1e-10
    assert hypoexp_quantile(1 - math.exp(-1.0), 1e-12) == pytest.approx(1.0, abs=1e-6)
    ps = np.array([0.1, 0.4, 0.7, 0.95])
    qs = hypoexp_quantile(ps, 0.3)
    assert np.all(np.diff(qs) > 0)
    with pytest.raises(ValueError):
        hypoexp_quantile(1.0, 0.3)


def test_site_deltas_maps_regions():
    deltas = np.array([[0.1, 0.2], [0.8, 0.9]])
    regions = np.array([1, 2, 1])
    out = site_deltas(deltas, regions)
    assert out.shape == (2, 3)
    assert np.allclose(out, [[0.1, 0.8, 0.1], [0.2, 0.9, 0.2]])


def test_mixture_sample_pit_uniform():
    rng = np.random.default_rng(15)
    coords = np.array([[0.1, 0.2], [0.7, 0.9]])
    regions = np.array([1, 2])
    T = 100000
    deltas = np.vstack([np.full(T, 0.3), np.full(T, 0.65)])
    V, U = mixture_sample(coords, regions, deltas, rho=0.4, r=0.85, rng=rng)
    for j in range(2):
        stat = stats.kstest(U[:, j], "uniform").statistic
        assert stat < KS01 / math.sqrt(T), j
    assert np.all((U > 0) & (U < 1))


def test_mixture_sample_degenerate_weights():
    rng = np.random.default_rng(16)
    coords = np.array([[0.1, 0.2], [0.7, 0.9]])
    regions = np.array([1, 2])
    T = 50000
    zero = np.zeros((2, T))
    V, U = mixture_sample(coords, regions, zero, rho=0.4, r=0.85, rng=rng)
    assert stats.kstest(V.ravel()[:50000], "expon").statistic < 0.01
    one = np.ones((2, T))
    V1, U1 = mixture_sample(coords, regions, one, rho=0.4, r=0.85, rng=rng)
    assert stats.kstest(V1[:, 0], "expon").statistic < 0.01
