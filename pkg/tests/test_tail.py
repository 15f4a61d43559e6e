import math

import numpy as np
import pytest

from extremix.processes import hypoexp_quantile, mixture_sample
from extremix.rng import make_rng
from extremix.tail import (ChiEstimate, chi_surface, chi_u_empirical,
                           default_h, ladder_to_csv, shared_factor_verify,
                           shared_joint_mc, shared_joint_survival,
                           shared_margin_survival,
                           shared_margin_survival_quadrature,
                           shared_survival_terms, surface_to_csv)


def closed_joint_survival(y, d):
    """Joint survival of (d*R + (1-d)*W1, (1-d)*R + d*W2), R, W1, W2 iid
    unit exponentials, integrated by hand (test oracle)."""
    if d == 0.5:
        return 2.0 * math.exp(-2.0 * y) - math.exp(-4.0 * y)
    if d > 0.5:
        d = 1.0 - d  # swapping the sites swaps the weights
    c = (3.0 * d * d - 3.0 * d + 1.0) / (d * (1.0 - d))
    j1 = (math.exp(-y / (1.0 - d))
          * (math.exp(-(1.0 - 2.0 * d) / (1.0 - d) ** 2 * y)
             - math.exp(-y / d)) / c)
    j2 = ((1.0 - d) / (2.0 * d - 1.0) * math.exp(-y / (1.0 - d))
          * (math.exp(-(1.0 - 2.0 * d) / (d * (1.0 - d)) * y)
             - math.exp(-(1.0 - 2.0 * d) / (1.0 - d) ** 2 * y)))
    j4 = math.exp(-y / d)
    return j1 + j2 + j4


def closed_margin_survival(y, d):
    if d == 0.5:
        return (1.0 + 2.0 * y) * math.exp(-2.0 * y)
    return ((1.0 - d) * math.exp(-y / (1.0 - d))
            - d * math.exp(-y / d)) / (1.0 - 2.0 * d)


class TestChiEmpirical:
    def test_independent_pairs(self):
        rng = make_rng(31)
        pairs = rng.uniform(size=(200000, 2))
        c = chi_u_empirical(pairs, 0.99)
        assert c.defined
        assert abs(c.estimate - 0.01) <= 3.0 * c.se
        assert c.n_pairs == 200000

    def test_comonotone_pairs_give_one(self):
        rng = make_rng(32)
        u = rng.uniform(size=50000)
        c = chi_u_empirical(np.column_stack([u, u]), 0.95)
        assert c.estimate == 1.0
        assert c.se == 0.0

    def test_rank_invariance_under_exp(self):
        rng = make_rng(33)
        z = rng.normal(size=(30000, 2))
        z[:, 1] = 0.8 * z[:, 0] + 0.6 * z[:, 1]
        a = chi_u_empirical(z, 0.95)
        b = chi_u_empirical(np.exp(z), 0.95)
        assert a.estimate == b.estimate
        assert a.n_cond == b.n_cond

    def test_zero_conditioning_is_undefined_not_zero(self):
        rng = make_rng(34)
        pairs = rng.uniform(size=(1000, 2)) * 0.5
        c = chi_u_empirical(pairs, 0.99, rank=False)
        assert not c.defined
        assert math.isnan(c.estimate) and math.isnan(c.se)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            chi_u_empirical(np.zeros((10, 3)), 0.9)
        with pytest.raises(ValueError):
            chi_u_empirical(np.zeros((10, 2)), 1.0)

    def test_mixture_pair_opposite_regimes(self):
        # one site mostly max-stable, the other mostly Gaussian: the pair
        # is asymptotically independent and the extreme-threshold estimate
        # is already tiny
        coords = np.array([[0.0, 0.0], [0.12, 0.0]])
        regions = np.array([1, 2])
        T = 10 ** 6
        deltas = np.vstack([np.full(T, 0.3), np.full(T, 0.7)])
        _, U = mixture_sample(coords, regions, deltas, 0.4, 0.9,
                              make_rng(35))
        c = chi_u_empirical(U, 0.9999, rank=False)
        assert c.defined
        assert c.estimate < 0.05


class TestDefaultH:
    def test_max_nearest_neighbor_distance(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        assert default_h(coords) == 2.0

    def test_needs_two_sites(self):
        with pytest.raises(ValueError):
            default_h(np.array([[0.0, 0.0]]))


class TestChiSurface:
    def test_opposite_regime_grid_decays(self):
        for d in (0.1, 0.3, 0.7, 0.9):
            surf = chi_surface([d], [1.0 - d], rho=0.4, r=0.9, u=0.9999,
                               replicates=10 ** 6, rng=77)
            c = surf[0, 0]
            assert c.defined
            assert c.estimate < 0.05, f"delta {d}: {c.estimate}"

    def test_boundary_pair_declines_but_slowly(self):
        ests = []
        for u in (0.99, 0.999, 0.9999):
            surf = chi_surface([0.5], [0.5], rho=0.4, r=0.9, u=u,
                               replicates=6 * 10 ** 5, rng=78)
            ests.append(surf[0, 0].estimate)
        assert ests[0] > ests[1] > ests[2]

    def test_small_weights_decay_along_ladder(self):
        ests = []
        for u in (0.99, 0.999, 0.9999):
            surf = chi_surface([0.2], [0.2], rho=0.4, r=0.9, u=u,
                               replicates=6 * 10 ** 5, rng=911)
            ests.append(surf[0, 0].estimate)
        assert ests[1] < ests[0]
        assert ests[2] < ests[0]

    def test_pure_max_stable_pair_bounded_away_from_zero(self):
        surf = chi_surface([1.0], [1.0], rho=0.4, r=0.9, u=0.9999,
                           replicates=6 * 10 ** 5, rng=13)
        c = surf[0, 0]
        assert c.estimate > 0.2

    def test_symmetric_under_weight_swap(self):
        grid = [0.3, 0.8]
        surf = chi_surface(grid, grid, rho=0.4, r=0.9, u=0.99,
                           replicates=2 * 10 ** 5, rng=41)
        a, b = surf[0, 1], surf[1, 0]
        tol = 3.0 * math.sqrt(a.se ** 2 + b.se ** 2)
        assert abs(a.estimate - b.estimate) <= tol

    def test_h_default_from_coords(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        surf = chi_surface([0.5], [0.5], rho=0.4, r=0.9, u=0.9,
                           coords=coords, replicates=2000, rng=3)
        assert surf[0, 0].h == 2.0
        surf = chi_surface([0.5], [0.5], rho=0.4, r=0.9, u=0.9,
                           replicates=2000, rng=3)
        assert surf[0, 0].h == 0.12

    def test_csv_roundtrip(self, tmp_path):
        surface = np.empty((1, 2), dtype=object)
        surface[0, 0] = ChiEstimate(0.99, 0.12, 0.25, 0.01, 1000, 10)
        surface[0, 1] = ChiEstimate(0.99, 0.12, np.nan, np.nan, 1000, 0)
        path = tmp_path / "surface.csv"
        surface_to_csv([0.3], [0.2, 0.4], surface, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "delta1,delta2,u,h,estimate,se,n_pairs,n_cond"
        assert len(lines) == 3
        first = lines[1].split(",")
        assert float(first[4]) == 0.25
        undefined = lines[2].split(",")
        assert undefined[4] == "" and undefined[5] == ""
        assert undefined[7] == "0"


class TestSharedFactorQuadrature:
    def test_matches_closed_form(self):
        for d in (0.1, 0.25, 0.4, 0.5, 0.6, 0.85):
            for y in (0.3, 1.0, 3.0, 6.0):
                quad_val = shared_joint_survival(y, d)
                assert abs(quad_val - closed_joint_survival(y, d)) < 1e-12

    def test_symmetric_in_weight_complement(self):
        for d in (0.2, 0.35, 0.45):
            for y in (1.0, 4.0):
                assert np.isclose(shared_joint_survival(y, d),
                                  shared_joint_survival(y, 1.0 - d),
                                  rtol=1e-12, atol=1e-15)

    def test_margin_quadrature_matches_closed_form(self):
        for d in (0.1, 0.3, 0.5, 0.7, 0.9):
            for y in (0.5, 1.0, 3.0, 5.0, 9.0):
                q = shared_margin_survival_quadrature(y, d)
                assert abs(q - shared_margin_survival(y, d)) < 1e-10
                assert abs(q - closed_margin_survival(y, d)) < 1e-10

    def test_one_sided_terms_vanish_on_the_wrong_side(self):
        below = shared_survival_terms(2.0, 0.3)
        assert below["second_only"] == 0.0
        assert below["first_only"] > 0.0
        above = shared_survival_terms(2.0, 0.7)
        assert above["first_only"] == 0.0
        assert above["second_only"] > 0.0

    def test_common_factor_alone_term(self):
        # with the smaller weight on site 1, the 'neither' piece is the
        # chance the shared exponential exceeds y over that weight
        for d in (0.2, 0.4):
            terms = shared_survival_terms(3.0, d)
            assert abs(terms["neither"] - math.exp(-3.0 / d)) < 1e-12

    def test_tail_ratio_negligible_far_out(self):
        terms = shared_survival_terms(20.0, 0.3)
        ratio = terms["neither"] / shared_margin_survival(20.0, 0.3)
        assert ratio < 1e-3

    def test_survival_decreasing_in_y(self):
        vals = [shared_joint_survival(y, 0.4) for y in (0.5, 1, 2, 4, 8)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            shared_joint_survival(1.0, 0.0)
        with pytest.raises(ValueError):
            shared_joint_survival(1.0, 1.0)
        with pytest.raises(ValueError):
            shared_survival_terms(-1.0, 0.3)


class TestSharedJointMC:
    def test_agrees_with_quadrature(self):
        for d in (0.3, 0.5, 0.7):
            est, se = shared_joint_mc((1.0, 3.0, 5.0), d,
                                      replicates=2 * 10 ** 5, rng=52)
            for y, e, s in zip((1.0, 3.0, 5.0), est, se):
                assert abs(e - shared_joint_survival(y, d)) <= 3.0 * s

    def test_deterministic_given_seed(self):
        a, _ = shared_joint_mc((1.0, 2.0), 0.4, replicates=10 ** 5, rng=7)
        b, _ = shared_joint_mc((1.0, 2.0), 0.4, replicates=10 ** 5, rng=7)
        assert np.array_equal(a, b)


@pytest.fixture(scope="module")
def reports():
    return shared_factor_verify(np.arange(1, 10) / 10.0,
                                replicates=10 ** 5, rng=4)


class TestSharedFactorVerify:
    def test_ladder_declines_everywhere(self, reports):
        assert all(rep.declining for rep in reports)

    def test_final_value_small_off_the_boundary(self, reports):
        for rep in reports:
            if rep.delta != 0.5:
                assert rep.final_chi < 0.05, f"delta {rep.delta}"

    def test_boundary_weight_matches_gamma_limit(self, reports):
        rep = next(r for r in reports if r.delta == 0.5)
        y = hypoexp_quantile(0.9999, 0.5)
        expected = closed_joint_survival(y, 0.5) / 1e-4
        assert abs(rep.final_chi - expected) < 1e-9

    def test_mc_within_three_ses(self, reports):
        assert all(rep.mc_within_3se for rep in reports)

    def test_margin_agreement(self, reports):
        assert all(rep.margin_max_abs_err < 1e-10 for rep in reports)

    def test_ladder_csv(self, reports, tmp_path):
        path = tmp_path / "ladder.csv"
        ladder_to_csv(reports, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "delta,u,y,chi"
        assert len(lines) == 1 + 9 * 3
        row = lines[1].split(",")
        assert float(row[0]) == reports[0].delta
        assert float(row[3]) == reports[0].chi_ladder[0]
