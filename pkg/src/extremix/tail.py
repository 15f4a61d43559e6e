"""Tail-dependence diagnostics.

chi_u = P(U1 > u | U2 > u) measures how often one site is extreme given
that the other one is; its u -> 1 limit separates asymptotic dependence
from independence. The module has the empirical estimator, the surface of
estimates over a (delta1, delta2) grid of mixture weights, and a
verification of the two-site shared-factor construction: when both sites
load on one common unit exponential (weights delta and 1-delta), the
joint survival splits into four 1-D integrals over the common factor, so
quadrature, closed-form margins, and Monte Carlo can all be compared.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.stats import rankdata

from .processes import (hypoexp_cdf, hypoexp_quantile, mixture_sample,
                        pairwise_dists)
from .rng import make_rng

DEFAULT_H = 0.12
DEFAULT_REPLICATES = 10 ** 6
_MC_CHUNK = 10 ** 5


class QuadratureError(RuntimeError):
    """Numerical integration failed to converge to the requested accuracy."""


@dataclass
class ChiEstimate:
    """One empirical conditional exceedance probability.

    estimate and se are nan when no observation exceeds the conditioning
    threshold (the estimate is undefined there, not zero).
    """
    u: float
    h: float
    estimate: float
    se: float
    n_pairs: int
    n_cond: int

    @property
    def defined(self):
        return self.n_cond > 0


def _chi_from_counts(u, h, n_pairs, n_cond, n_joint):
    if n_cond == 0:
        return ChiEstimate(float(u), float(h), np.nan, np.nan,
                           int(n_pairs), 0)
    est = n_joint / n_cond
    se = np.sqrt(est * (1.0 - est) / n_cond)
    return ChiEstimate(float(u), float(h), float(est), float(se),
                       int(n_pairs), int(n_cond))


def chi_u_empirical(pairs, u, h=np.nan, rank=True):
    """Empirical chi_u from paired scores.

    pairs: (N, 2). rank=True replaces each column by ranks/(N+1), which
    makes the estimate exactly invariant to strictly increasing marginal
    transforms; pass rank=False when the inputs are already Uniform(0,1).
    """
    pairs = np.asarray(pairs, float)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pairs must be an (N, 2) array")
    if not 0.0 < u < 1.0:
        raise ValueError("threshold u must lie in (0, 1)")
    if rank:
        n = pairs.shape[0]
        pairs = np.column_stack([rankdata(pairs[:, 0]) / (n + 1.0),
                                 rankdata(pairs[:, 1]) / (n + 1.0)])
    ex1 = pairs[:, 0] > u
    ex2 = pairs[:, 1] > u
    return _chi_from_counts(u, h, pairs.shape[0], int(np.sum(ex2)),
                            int(np.sum(ex1 & ex2)))


def default_h(coords):
    """Largest nearest-neighbor distance of the site configuration."""
    d = pairwise_dists(coords)
    if d.shape[0] < 2:
        raise ValueError("need at least two sites")
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).max())


def chi_surface(delta1_grid, delta2_grid, rho, r, u=0.9999, h=None,
                coords=None, replicates=DEFAULT_REPLICATES, rng=None):
    """Matrix of chi_u estimates for a two-site pair at separation h.

    Site 1 carries the region-1 weight delta1, site 2 the region-2 weight
    delta2; each grid cell simulates its own replicate batches. h defaults
    to the nearest-neighbor rule on coords when given, else to 0.12.
    """
    delta1_grid = np.atleast_1d(np.asarray(delta1_grid, float))
    delta2_grid = np.atleast_1d(np.asarray(delta2_grid, float))
    if h is None:
        h = DEFAULT_H if coords is None else default_h(coords)
    rng = make_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    pair_coords = np.array([[0.0, 0.0], [float(h), 0.0]])
    pair_regions = np.array([1, 2])
    out = np.empty((delta1_grid.size, delta2_grid.size), dtype=object)
    for a, d1 in enumerate(delta1_grid):
        for b, d2 in enumerate(delta2_grid):
            n_cond = n_joint = n_pairs = 0
            left = int(replicates)
            while left > 0:
                T = min(left, _MC_CHUNK)
                deltas = np.vstack([np.full(T, d1), np.full(T, d2)])
                _, U = mixture_sample(pair_coords, pair_regions, deltas,
                                      rho, r, rng)
                ex1 = U[:, 0] > u
                ex2 = U[:, 1] > u
                n_cond += int(np.sum(ex2))
                n_joint += int(np.sum(ex1 & ex2))
                n_pairs += T
                left -= T
            out[a, b] = _chi_from_counts(u, h, n_pairs, n_cond, n_joint)
    return out


# -- two-site shared-factor construction --------------------------------------
#
# Y1 = d*R + (1-d)*W1 and Y2 = (1-d)*R + d*W2 with R, W1, W2 iid unit
# exponentials. Conditioning on R = rr, site 1 survives y iff
# W1 > (y - d*rr)/(1-d) (automatic once that bound is negative), likewise
# site 2, so P(Y1 > y, Y2 > y) is an expectation over R that splits into
# four pieces by the signs of the two bounds.


def _integrate(fn, lo, hi):
    if hi <= lo:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, err = quad(fn, lo, hi, limit=200, epsabs=1e-13,
                            epsrel=1e-11)
        except IntegrationWarning as exc:
            raise QuadratureError(f"integration on [{lo}, {hi}] did not "
                                  "converge") from exc
    if not np.isfinite(val) or err > 1e-10 + 1e-9 * abs(val):
        raise QuadratureError(f"integration on [{lo}, {hi}] reported "
                              f"error {err}")
    return val


def _check_delta(delta):
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie strictly inside (0, 1)")
    return delta


def shared_survival_terms(y, delta):
    """The four pieces of P(Y1 > y, Y2 > y) by 1-D quadrature.

    Keys: 'both' (both exponential bounds active), 'first_only',
    'second_only' (exactly one active; which one depends on the side of
    1/2 delta falls on), 'neither' (the common factor alone exceeds both).
    """
    delta = _check_delta(delta)
    y = float(y)
    if y < 0:
        raise ValueError("y must be nonnegative")
    b1 = y / delta            # bound where site 1's own term is needed
    b2 = y / (1.0 - delta)    # same for site 2

    def surv1(rr):
        return np.exp(-(y - delta * rr) / (1.0 - delta))

    def surv2(rr):
        return np.exp(-(y - (1.0 - delta) * rr) / delta)

    dens = np.exp
    both = _integrate(lambda rr: surv1(rr) * surv2(rr) * dens(-rr),
                      0.0, min(b1, b2))
    first_only = _integrate(lambda rr: surv1(rr) * dens(-rr),
                            b2, b1) if delta < 0.5 else 0.0
    second_only = _integrate(lambda rr: surv2(rr) * dens(-rr),
                             b1, b2) if delta > 0.5 else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            neither, err = quad(lambda rr: dens(-rr), max(b1, b2), np.inf,
                                limit=200, epsabs=1e-13, epsrel=1e-11)
        except IntegrationWarning as exc:
            raise QuadratureError("tail integration did not converge") \
                from exc
    if err > 1e-10 + 1e-9 * abs(neither):
        raise QuadratureError(f"tail integration reported error {err}")
    return {"both": both, "first_only": first_only,
            "second_only": second_only, "neither": neither}


def shared_joint_survival(y, delta):
    terms = shared_survival_terms(y, delta)
    return (terms["both"] + terms["first_only"] + terms["second_only"]
            + terms["neither"])


def shared_margin_survival(y, delta):
    """Closed-form P(Y1 > y): complement of the two-exponential mixture
    margin (series branch at delta = 1/2)."""
    return 1.0 - hypoexp_cdf(y, delta)


def shared_margin_survival_quadrature(y, delta):
    """Same margin by integrating over the common factor; cross-check."""
    delta = _check_delta(delta)
    y = float(y)
    b1 = y / delta

    def surv1(rr):
        return np.exp(-(y - delta * rr) / (1.0 - delta))

    active = _integrate(lambda rr: surv1(rr) * np.exp(-rr), 0.0, b1)
    return active + np.exp(-b1)


def shared_joint_mc(y_values, delta, replicates=DEFAULT_REPLICATES,
                    rng=None):
    """Monte Carlo joint survival estimates with standard errors.

    Returns (estimates, ses) arrays aligned with y_values. Replicates are
    drawn in fixed-size batches and counts reduced in order.
    """
    delta = _check_delta(delta)
    y_values = np.atleast_1d(np.asarray(y_values, float))
    rng = make_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    counts = np.zeros(y_values.size, dtype=np.int64)
    left = int(replicates)
    while left > 0:
        m = min(left, _MC_CHUNK)
        shared = rng.standard_exponential(m)
        y1 = delta * shared + (1.0 - delta) * rng.standard_exponential(m)
        y2 = (1.0 - delta) * shared + delta * rng.standard_exponential(m)
        for k, y in enumerate(y_values):
            counts[k] += int(np.sum((y1 > y) & (y2 > y)))
        left -= m
    est = counts / float(replicates)
    se = np.sqrt(est * (1.0 - est) / float(replicates))
    return est, se


@dataclass
class SharedFactorReport:
    """Verification record for one mixture weight delta."""
    delta: float
    u_ladder: tuple
    y_ladder: tuple          # marginal quantiles at the thresholds
    chi_ladder: tuple        # quadrature joint survival / (1 - u)
    declining: bool
    final_chi: float
    mc_y: tuple
    mc_estimate: tuple
    mc_se: tuple
    quadrature_value: tuple
    mc_within_3se: bool
    margin_max_abs_err: float


def shared_factor_verify(delta_grid, u_ladder=(0.99, 0.999, 0.9999),
                         replicates=DEFAULT_REPLICATES, rng=None,
                         y_checks=(1.0, 3.0, 5.0)):
    """Verify the shared-factor tail decay on a grid of weights.

    For each delta: the chi_u ladder from quadrature (checking it
    declines), a Monte Carlo cross-check of the joint survival at
    y_checks, and the quadrature-vs-closed-form margin discrepancy.
    """
    rng = make_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    reports = []
    for delta in np.atleast_1d(np.asarray(delta_grid, float)):
        delta = _check_delta(delta)
        y_ladder = tuple(hypoexp_quantile(u, delta) for u in u_ladder)
        chi_ladder = tuple(shared_joint_survival(y, delta) / (1.0 - u)
                           for u, y in zip(u_ladder, y_ladder))
        declining = all(b < a for a, b in zip(chi_ladder, chi_ladder[1:]))
        mc_est, mc_se = shared_joint_mc(y_checks, delta,
                                        replicates=replicates, rng=rng)
        quad_vals = np.array([shared_joint_survival(y, delta)
                              for y in y_checks])
        within = bool(np.all(np.abs(mc_est - quad_vals) <= 3.0 * mc_se))
        y_grid = np.concatenate([np.asarray(y_checks, float),
                                 np.asarray(y_ladder, float)])
        margin_err = max(abs(shared_margin_survival_quadrature(y, delta)
                             - shared_margin_survival(y, delta))
                         for y in y_grid)
        reports.append(SharedFactorReport(
            delta=float(delta), u_ladder=tuple(u_ladder),
            y_ladder=y_ladder, chi_ladder=chi_ladder, declining=declining,
            final_chi=float(chi_ladder[-1]), mc_y=tuple(y_checks),
            mc_estimate=tuple(float(v) for v in mc_est),
            mc_se=tuple(float(v) for v in mc_se),
            quadrature_value=tuple(float(v) for v in quad_vals),
            mc_within_3se=within, margin_max_abs_err=float(margin_err)))
    return reports


# -- CSV emission --------------------------------------------------------------

def ladder_to_csv(reports, path):
    """One row per (delta, threshold) with the quadrature chi value."""
    with open(path, "w") as fh:
        fh.write("delta,u,y,chi\n")
        for rep in reports:
            for u, y, chi in zip(rep.u_ladder, rep.y_ladder,
                                 rep.chi_ladder):
                fh.write("%.17g,%.17g,%.17g,%.17g\n"
                         % (rep.delta, u, y, chi))


def surface_to_csv(delta1_grid, delta2_grid, surface, path):
    """One row per grid cell; undefined estimates emit empty fields."""
    delta1_grid = np.atleast_1d(np.asarray(delta1_grid, float))
    delta2_grid = np.atleast_1d(np.asarray(delta2_grid, float))
    with open(path, "w") as fh:
        fh.write("delta1,delta2,u,h,estimate,se,n_pairs,n_cond\n")
        for a, d1 in enumerate(delta1_grid):
            for b, d2 in enumerate(delta2_grid):
                c = surface[a, b]
                est = "%.17g" % c.estimate if c.defined else ""
                se = "%.17g" % c.se if c.defined else ""
                fh.write("%.17g,%.17g,%.17g,%.17g,%s,%s,%d,%d\n"
                         % (d1, d2, c.u, c.h, est, se, c.n_pairs, c.n_cond))
