"""Metropolis MCMC for the mixture model.

The posterior couples per-site GEV coefficient blocks (theta1) with the
dependence block theta2 = (beta_10, beta_11, beta_20, beta_21, rho, r). The
likelihood is the change-of-variables form: the surrogate's synthetic log
likelihood of the uniform scores U_t(s) = F_{t,s}(Y_t(s)) plus the GEV log
density of every observation.

Site blocks only touch the Vecchia factors in which the site appears (as
response or neighbor); the cached factor terms make that update cheap while
staying exactly equal to a from-scratch evaluation.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.special import expit

from .gev import gev_cdf, gev_logpdf
from .processes import _chol_with_jitter, delta_link, pairwise_dists
from .rng import make_rng
from .surrogate import U_EPS, mixture_logdensity
from .vecchia import delta_features, feature_matrix

_LOG2PI = math.log(2.0 * math.pi)


def _hash_dict(d):
    return hashlib.sha256(
        json.dumps(d, sort_keys=True).encode()).hexdigest()


class InitializationError(RuntimeError):
    pass


def _norm_logpdf(x, loc, sd):
    z = (np.asarray(x, float) - loc) / sd
    return -0.5 * _LOG2PI - np.log(sd) - 0.5 * z * z


@dataclass
class FitData:
    """Observations and covariates for one fit.

    y: (T, n) annual maxima; x: marginal covariates, (T, p) shared or
    (T, n, p) per site; z: (2, T) region-level series driving the mixture
    weights; coords: (n, 2); regions: (n,) in {1, 2}.
    """
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    coords: np.ndarray
    regions: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, float)
        self.x = np.asarray(self.x, float)
        self.z = np.atleast_2d(np.asarray(self.z, float))
        self.coords = np.atleast_2d(np.asarray(self.coords, float))
        self.regions = np.asarray(self.regions, int)
        T, n = self.y.shape
        if self.coords.shape[0] != n or self.regions.shape[0] != n:
            raise ValueError("site tables disagree on the number of sites")
        if self.x.shape[0] != T or self.z.shape != (2, T):
            raise ValueError("covariate series do not match the year count")
        if not np.all(np.isin(self.regions, (1, 2))):
            raise ValueError("regions must be labeled 1 or 2")

    @property
    def n_sites(self):
        return self.y.shape[1]

    @property
    def n_years(self):
        return self.y.shape[0]

    @property
    def n_covariates(self):
        return self.x.shape[-1]

    def site_x(self, s):
        return self.x if self.x.ndim == 2 else self.x[:, s, :]


@dataclass
class PriorSpec:
    """Prior layer. iid mode: independent Normals on the GEV coefficients.
    stvc mode: each coefficient column gets a latent smooth field with
    nugget, exponential correlation, and conjugate hyperpriors."""
    mode: str = "iid"
    mu_sd: float = 10.0
    xi_sd: float = 0.25
    beta_sd: float = 1.0
    field_mean_sd: float = 10.0
    ig_shape: float = 0.1
    ig_rate: float = 0.1
    lrange_loc: float = -2.0
    lrange_sd: float = 1.0

    def theta1_site_logpdf(self, vec):
        vec = np.asarray(vec, float)
        out = np.sum(_norm_logpdf(vec[:-1], 0.0, self.mu_sd))
        return out + _norm_logpdf(vec[-1], 0.0, self.xi_sd)

    def beta_logpdf(self, pair):
        return float(np.sum(_norm_logpdf(pair, 0.0, self.beta_sd)))

    def logit_logpdf(self, t):
        # Uniform(0,1) pushed to the logit scale: log sig(t) + log sig(-t)
        return -(t + 2.0 * np.logaddexp(0.0, -t))

    def lrange_logpdf(self, lr):
        return float(_norm_logpdf(lr, self.lrange_loc, self.lrange_sd))


@dataclass
class ChainConfig:
    iterations: int = 11000
    burnin: int = 1000
    thin: int = 10
    target_accept: float = 0.4
    adapt_decay: float = 0.6
    localized: bool = True
    scale_theta1: float = 0.05
    scale_beta: float = 0.1
    scale_logit: float = 0.3
    scale_lrange: float = 0.3

    def __post_init__(self):
        if self.burnin >= self.iterations:
            raise ValueError("burn-in must be shorter than the chain")
        if (self.iterations - self.burnin) % self.thin:
            raise ValueError("thin must divide the retained iteration count")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def config_hash(self):
        return _hash_dict(self.to_dict())


def gev_init(y, x):
    """Per-site starting point [mu coeffs, log sigma, xi] via least squares
    moments then a Nelder-Mead likelihood polish."""
    y = np.asarray(y, float)
    x = np.atleast_2d(np.asarray(x, float))
    A = np.column_stack([np.ones(y.size), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    sig0 = max(np.std(resid) * math.sqrt(6.0) / math.pi, 1e-3)
    coef[0] -= 0.5772156649015329 * sig0  # Gumbel mean offset
    start = np.concatenate([coef, [math.log(sig0), 0.1]])

    def nll(th):
        mu = A @ th[:-2]
        ll = np.sum(gev_logpdf(y, mu, math.exp(th[-2]), th[-1]))
        return -ll if np.isfinite(ll) else 1e12

    res = minimize(nll, start, method="Nelder-Mead",
                   options={"maxiter": 400 * start.size, "xatol": 1e-6,
                            "fatol": 1e-8})
    out = res.x if np.isfinite(res.fun) and res.fun < nll(start) else start
    return np.asarray(out, float)


class _Adapt:
    """Robbins-Monro proposal-scale adaptation toward a target rate.

    The scale used after burn-in is the Polyak average of the log scale over
    the adaptation steps past `avg_from`, not the last iterate; the single
    iterate keeps O(k^-decay) noise that shows up as off-target post-burn-in
    acceptance rates.
    """

    def __init__(self, scale, target, decay, avg_from=None):
        self.scale = float(scale)
        self.target = target
        self.decay = decay
        self.avg_from = avg_from
        self.k = 0
        self.accepted = 0.0
        self.proposed = 0
        self.post_accepted = 0.0
        self.post_proposed = 0
        self._logsum = 0.0
        self._logn = 0
        self._frozen = False

    def step(self, alpha, adapting):
        if adapting:
            self.k += 1
            self.scale *= math.exp(self.k ** -self.decay
                                   * (alpha - self.target))
            if (self.avg_from is not None and self.k >= self.avg_from
                    and self.scale > 0.0):
                self._logsum += math.log(self.scale)
                self._logn += 1
            self.accepted += alpha
            self.proposed += 1
        else:
            if not self._frozen:
                self._frozen = True
                if self._logn:
                    self.scale = math.exp(self._logsum / self._logn)
            self.post_accepted += alpha
            self.post_proposed += 1

    def post_rate(self):
        return self.post_accepted / max(self.post_proposed, 1)


class Sampler:
    """One MCMC chain. data=None runs the prior-only kernel (flat
    likelihood), which the prior-recovery tests rely on."""

    def __init__(self, config, data, surrogate, seed, priors=None,
                 coords=None, n_covariates=1):
        self.config = config
        self.data = data
        self.model = surrogate
        self.priors = priors or PriorSpec()
        self.rng = seed if isinstance(seed, np.random.Generator) \
            else make_rng(seed)
        self.seed_repr = str(seed)

        if data is not None:
            st = surrogate.structure
            if (st.n != data.n_sites
                    or not np.allclose(st.coords, data.coords)
                    or not np.array_equal(st.regions, data.regions)):
                raise ValueError("surrogate structure does not match the "
                                 "data sites")
            if not (np.all(np.isfinite(data.y))
                    and np.all(np.isfinite(data.x))
                    and np.all(np.isfinite(data.z))):
                raise InitializationError(
                    "observations or covariates contain non-finite values")
            self.n = data.n_sites
            self.T = data.n_years
            self.p = data.n_covariates
            self.coords = data.coords
        else:
            self.coords = None if coords is None else np.atleast_2d(
                np.asarray(coords, float))
            self.n = 0 if self.coords is None else self.coords.shape[0]
            self.T = 0
            self.p = n_covariates
        self.k_fields = self.p + 3

        self._init_state()
        self._init_adaptation()
        if data is not None:
            self._init_caches()
            if not np.isfinite(self._cached_loglik() + self._prior_total()):
                raise InitializationError(
                    "log posterior is not finite at the starting point")

    # -- state ----------------------------------------------------------------

    def _init_state(self):
        if self.data is not None:
            self.theta1 = np.stack([
                gev_init(self.data.y[:, s], self.data.site_x(s))
                for s in range(self.n)])
        elif self.n:
            self.theta1 = np.zeros((self.n, self.k_fields))
        else:
            self.theta1 = np.zeros((0, self.k_fields))
        self.beta = np.zeros((2, 2))
        self.logit_rho = 0.0
        self.logit_r = 0.0
        if self.priors.mode == "stvc":
            if self.n == 0:
                raise ValueError("stvc priors need site coordinates")
            self.stvc = {
                "mean": self.theta1.mean(axis=0) if self.n else
                np.zeros(self.k_fields),
                "tau2": np.ones(self.k_fields),
                "g2": np.ones(self.k_fields),
                "lrange": np.full(self.k_fields, self.priors.lrange_loc),
                "w": np.zeros((self.k_fields, self.n)),
            }
            self._site_dists = pairwise_dists(self.coords)

    def _init_adaptation(self):
        c = self.config
        avg_from = max(1, c.burnin // 2)  # Polyak window: later half
        self.adapt = {}
        for s in range(self.n):
            self.adapt[f"site_{s}"] = _Adapt(c.scale_theta1, c.target_accept,
                                             c.adapt_decay, avg_from)
        for b in (1, 2):
            self.adapt[f"beta_{b}"] = _Adapt(c.scale_beta, c.target_accept,
                                             c.adapt_decay, avg_from)
        self.adapt["rho"] = _Adapt(c.scale_logit, c.target_accept,
                                   c.adapt_decay, avg_from)
        self.adapt["r"] = _Adapt(c.scale_logit, c.target_accept,
                                 c.adapt_decay, avg_from)
        if self.priors.mode == "stvc":
            for f in range(self.k_fields):
                self.adapt[f"lrange_{f}"] = _Adapt(
                    c.scale_lrange, c.target_accept, c.adapt_decay, avg_from)

    @property
    def rho(self):
        return float(expit(self.logit_rho))

    @property
    def r(self):
        return float(expit(self.logit_r))

    def deltas(self, beta=None):
        beta = self.beta if beta is None else beta
        return np.vstack([
            delta_link(beta[0, 0], beta[0, 1], self.data.z[0]),
            delta_link(beta[1, 0], beta[1, 1], self.data.z[1])])

    # -- likelihood caches ------------------------------------------------------

    def _site_scores(self, s, vec):
        """(gev logpdf column, uniform score column) for site s at vec."""
        x = self.data.site_x(s)
        mu = x @ vec[1:-2] + vec[0]
        sigma = math.exp(vec[-2])
        xi = vec[-1]
        y = self.data.y[:, s]
        gl = gev_logpdf(y, mu, sigma, xi)
        u = np.clip(gev_cdf(y, mu, sigma, xi), U_EPS, 1.0 - U_EPS)
        return gl, u

    def _init_caches(self):
        st = self.model.structure
        self.order = st.order
        self.inv_order = np.empty(self.n, int)
        self.inv_order[self.order] = np.arange(self.n)
        # factors where ordered position j feeds as neighbor column c
        self.dependents = {j: [] for j in range(self.n)}
        for i in range(1, self.n):
            for c, j in enumerate(st.neighbors[i]):
                self.dependents[j].append((i, c))
        self.gev_ll = np.empty((self.T, self.n))
        self.u_ord = np.empty((self.T, self.n))
        for s in range(self.n):
            gl, u = self._site_scores(s, self.theta1[s])
            self.gev_ll[:, s] = gl
            self.u_ord[:, self.inv_order[s]] = u
        if not (np.all(np.isfinite(self.gev_ll))
                and np.all(np.isfinite(self.u_ord))):
            raise InitializationError(
                "starting GEV parameters put observations out of support")
        self._deltas = self.deltas()
        self.X = {}
        self.pi = {}
        self.B = {}
        self.ll = {}
        for i in range(1, self.n):
            self.X[i] = feature_matrix(st, i, self.u_ord, self.rho, self.r,
                                       self._deltas)
            self.pi[i] = self.model.pi_rows(i, self.X[i])
            self.B[i] = self.model.basis.m_matrix(self.u_ord[:, i])
            self.ll[i] = mixture_logdensity(self.pi[i], self.B[i])

    def _cached_loglik(self):
        fac = 0.0
        for i in range(1, self.n):
            fac += float(np.sum(self.ll[i]))
        return float(np.sum(self.gev_ll)) + fac

    def full_loglik(self, theta1=None, beta=None, logit_rho=None,
                    logit_r=None):
        """From-scratch likelihood at the given (or current) state.

        Accumulation order matches the cache totals exactly (one matrix sum
        for the GEV terms, then per-factor sums in order), so the localized
        and global paths agree to the last bit.
        """
        theta1 = self.theta1 if theta1 is None else theta1
        beta = self.beta if beta is None else beta
        rho = self.rho if logit_rho is None else float(expit(logit_rho))
        r = self.r if logit_r is None else float(expit(logit_r))
        U = np.empty((self.T, self.n))
        GL = np.empty((self.T, self.n))
        for s in range(self.n):
            gl, u = self._site_scores(s, theta1[s])
            if not np.all(np.isfinite(gl)):
                return -np.inf
            GL[:, s] = gl
            U[:, s] = u
        total = float(np.sum(GL))
        total += self.model.synthetic_loglik(U, rho, r, self.deltas(beta))
        return total

    def _prior_total(self):
        pr = 0.0
        if self.priors.mode == "stvc":
            for f in range(self.k_fields):
                pr += float(np.sum(self._theta1_field_logpdf(
                    self.theta1[:, f], f)))
            pr += self._stvc_hyper_logpdf()
        else:
            for s in range(self.n):
                pr += float(self.priors.theta1_site_logpdf(self.theta1[s]))
        pr += self.priors.beta_logpdf(self.beta[0])
        pr += self.priors.beta_logpdf(self.beta[1])
        pr += self.priors.logit_logpdf(self.logit_rho)
        pr += self.priors.logit_logpdf(self.logit_r)
        return pr

    def _theta1_site_prior(self, s, vec):
        if self.priors.mode == "stvc":
            st = self.stvc
            means = st["mean"] + st["w"][:, s]
            return float(np.sum(_norm_logpdf(vec, means,
                                             np.sqrt(st["g2"]))))
        return float(self.priors.theta1_site_logpdf(vec))

    def _theta1_field_logpdf(self, values, f):
        st = self.stvc
        return _norm_logpdf(values, st["mean"][f] + st["w"][f],
                            math.sqrt(st["g2"][f]))

    def _stvc_hyper_logpdf(self):
        st = self.stvc
        pr = float(np.sum(_norm_logpdf(st["mean"], 0.0,
                                       self.priors.field_mean_sd)))
        a, b = self.priors.ig_shape, self.priors.ig_rate
        for key in ("tau2", "g2"):
            v = st[key]
            pr += float(np.sum(-(a + 1.0) * np.log(v) - b / v))
        pr += float(np.sum(_norm_logpdf(st["lrange"], self.priors.lrange_loc,
                                        self.priors.lrange_sd)))
        for f in range(self.k_fields):
            pr += self._field_gp_logpdf(st["w"][f], st["tau2"][f],
                                        st["lrange"][f])
        return pr

    def _field_corr_chol(self, lrange):
        K = np.exp(-self._site_dists / math.exp(lrange))
        return _chol_with_jitter(K)

    def _field_gp_logpdf(self, w, tau2, lrange):
        L = self._field_corr_chol(lrange)
        half = solve_triangular(L, w, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        n = w.size
        return -0.5 * (n * _LOG2PI + n * math.log(tau2) + logdet
                       + float(half @ half) / tau2)

    # -- updates ---------------------------------------------------------------

    def _decide(self, delta):
        logu = math.log(self.rng.uniform())
        alpha = min(1.0, math.exp(min(delta, 0.0))) if np.isfinite(delta) \
            else 0.0
        return logu < delta, alpha

    def update_site_block(self, s, adapting):
        ad = self.adapt[f"site_{s}"]
        prop = self.theta1[s] + ad.scale * self.rng.normal(
            size=self.k_fields)
        prior_new = self._theta1_site_prior(s, prop)
        prior_old = self._theta1_site_prior(s, self.theta1[s])
        gl_new, u_new = self._site_scores(s, prop)
        if not np.all(np.isfinite(gl_new)):
            accept, alpha = self._decide(-np.inf)
            ad.step(alpha, adapting)
            return
        j = self.inv_order[s]
        if self.config.localized:
            delta_ll = float(np.sum(gl_new)) - float(
                np.sum(self.gev_ll[:, s]))
            new_B = new_ll_j = None
            if j >= 1:
                new_B = self.model.basis.m_matrix(u_new)
                new_ll_j = mixture_logdensity(self.pi[j], new_B)
                delta_ll += float(np.sum(new_ll_j)) - float(
                    np.sum(self.ll[j]))
            touched = []
            for i, c in self.dependents[j]:
                Xi = self.X[i].copy()
                Xi[:, c] = u_new
                pi_i = self.model.pi_rows(i, Xi)
                ll_i = mixture_logdensity(pi_i, self.B[i])
                delta_ll += float(np.sum(ll_i)) - float(np.sum(self.ll[i]))
                touched.append((i, Xi, pi_i, ll_i))
        else:
            theta_prop = self.theta1.copy()
            theta_prop[s] = prop
            delta_ll = self.full_loglik(theta1=theta_prop) \
                - self._cached_loglik()
        accept, alpha = self._decide(delta_ll + prior_new - prior_old)
        if accept:
            self.theta1[s] = prop
            self.gev_ll[:, s] = gl_new
            self.u_ord[:, j] = u_new
            if self.config.localized:
                if j >= 1:
                    self.B[j] = new_B
                    self.ll[j] = new_ll_j
                for i, Xi, pi_i, ll_i in touched:
                    self.X[i] = Xi
                    self.pi[i] = pi_i
                    self.ll[i] = ll_i
            else:
                self._refresh_factors_from_state()
        ad.step(alpha, adapting)

    def _refresh_factors_from_state(self):
        st = self.model.structure
        for i in range(1, self.n):
            self.X[i] = feature_matrix(st, i, self.u_ord, self.rho, self.r,
                                       self._deltas)
            self.pi[i] = self.model.pi_rows(i, self.X[i])
            self.B[i] = self.model.basis.m_matrix(self.u_ord[:, i])
            self.ll[i] = mixture_logdensity(self.pi[i], self.B[i])

    def _delta_cols_update(self, deltas_new, changed_region):
        """Propose new delta feature columns; returns factor patch list."""
        st = self.model.structure
        touched = []
        for i in range(1, self.n):
            reg_i = st.ordered_regions[i]
            spans = st.neighbors[i].size > 0 and np.any(
                st.ordered_regions[st.neighbors[i]] != reg_i)
            if reg_i != changed_region and not spans:
                continue
            dy, gap = delta_features(st, i, deltas_new)
            Xi = self.X[i].copy()
            Xi[:, st.m + 2] = dy
            Xi[:, st.m + 3] = gap
            pi_i = self.model.pi_rows(i, Xi)
            ll_i = mixture_logdensity(pi_i, self.B[i])
            touched.append((i, Xi, pi_i, ll_i))
        return touched

    def update_beta_block(self, region, adapting):
        ad = self.adapt[f"beta_{region}"]
        b = region - 1
        prop = self.beta[b] + ad.scale * self.rng.normal(size=2)
        dprior = self.priors.beta_logpdf(prop) \
            - self.priors.beta_logpdf(self.beta[b])
        if self.data is None:
            accept, alpha = self._decide(dprior)
            if accept:
                self.beta[b] = prop
            ad.step(alpha, adapting)
            return
        beta_new = self.beta.copy()
        beta_new[b] = prop
        deltas_new = self.deltas(beta_new)
        if self.config.localized:
            touched = self._delta_cols_update(deltas_new, region)
            delta_ll = sum(float(np.sum(ll_i)) - float(np.sum(self.ll[i]))
                           for i, _, _, ll_i in touched)
        else:
            delta_ll = self.full_loglik(beta=beta_new) \
                - self._cached_loglik()
        accept, alpha = self._decide(delta_ll + dprior)
        if accept:
            self.beta = beta_new
            self._deltas = deltas_new
            if self.config.localized:
                for i, Xi, pi_i, ll_i in touched:
                    self.X[i] = Xi
                    self.pi[i] = pi_i
                    self.ll[i] = ll_i
            else:
                self._refresh_factors_from_state()
        ad.step(alpha, adapting)

    def _update_logit_scalar(self, name, col_offset, adapting):
        ad = self.adapt[name]
        cur = self.logit_rho if name == "rho" else self.logit_r
        prop = cur + ad.scale * self.rng.normal()
        dprior = self.priors.logit_logpdf(prop) - self.priors.logit_logpdf(
            cur)
        if self.data is None:
            accept, alpha = self._decide(dprior)
            if accept:
                if name == "rho":
                    self.logit_rho = prop
                else:
                    self.logit_r = prop
            ad.step(alpha, adapting)
            return
        value = float(expit(prop))
        st = self.model.structure
        if self.config.localized:
            touched = []
            delta_ll = 0.0
            for i in range(1, self.n):
                Xi = self.X[i].copy()
                Xi[:, st.m + col_offset] = value
                pi_i = self.model.pi_rows(i, Xi)
                ll_i = mixture_logdensity(pi_i, self.B[i])
                delta_ll += float(np.sum(ll_i)) - float(np.sum(self.ll[i]))
                touched.append((i, Xi, pi_i, ll_i))
        else:
            kw = {"logit_rho" if name == "rho" else "logit_r": prop}
            delta_ll = self.full_loglik(**kw) - self._cached_loglik()
        accept, alpha = self._decide(delta_ll + dprior)
        if accept:
            if name == "rho":
                self.logit_rho = prop
            else:
                self.logit_r = prop
            if self.config.localized:
                for i, Xi, pi_i, ll_i in touched:
                    self.X[i] = Xi
                    self.pi[i] = pi_i
                    self.ll[i] = ll_i
            else:
                self._refresh_factors_from_state()
        ad.step(alpha, adapting)

    def update_dependence_scalars(self, adapting):
        self._update_logit_scalar("rho", 0, adapting)
        self._update_logit_scalar("r", 1, adapting)

    def update_stvc_fields(self, adapting):
        """Gibbs on (w, mean, tau2, g2) per coefficient field, Metropolis on
        the log range. Prior-only mode also redraws the field values."""
        st = self.stvc
        a, b = self.priors.ig_shape, self.priors.ig_rate
        n = self.n
        for f in range(self.k_fields):
            v = self.theta1[:, f]
            L = self._field_corr_chol(st["lrange"][f])
            # latent smooth field: exact conditional draw by the offset
            # construction (no covariance subtraction, stable for any tau2)
            M = st["tau2"][f] * (L @ L.T)
            w0 = math.sqrt(st["tau2"][f]) * (L @ self.rng.normal(size=n))
            e0 = math.sqrt(st["g2"][f]) * self.rng.normal(size=n)
            S = M + st["g2"][f] * np.eye(n)
            rhs = (v - st["mean"][f]) - w0 - e0
            st["w"][f] = w0 + M @ np.linalg.solve(S, rhs)
            # conjugate mean
            prec = 1.0 / self.priors.field_mean_sd ** 2 + n / st["g2"][f]
            mhat = float(np.sum(v - st["w"][f])) / st["g2"][f] / prec
            st["mean"][f] = mhat + self.rng.normal() / math.sqrt(prec)
            # conjugate variances
            half = solve_triangular(L, st["w"][f], lower=True)
            quad = float(half @ half)
            st["tau2"][f] = 1.0 / self.rng.gamma(a + 0.5 * n,
                                                 1.0 / (b + 0.5 * quad))
            sq = float(np.sum((v - st["mean"][f] - st["w"][f]) ** 2))
            st["g2"][f] = 1.0 / self.rng.gamma(a + 0.5 * n,
                                               1.0 / (b + 0.5 * sq))
            # Metropolis on the log range
            ad = self.adapt[f"lrange_{f}"]
            prop = st["lrange"][f] + ad.scale * self.rng.normal()
            delta = (self._field_gp_logpdf(st["w"][f], st["tau2"][f], prop)
                     + self.priors.lrange_logpdf(prop)
                     - self._field_gp_logpdf(st["w"][f], st["tau2"][f],
                                             st["lrange"][f])
                     - self.priors.lrange_logpdf(st["lrange"][f]))
            accept, alpha = self._decide(delta)
            if accept:
                st["lrange"][f] = prop
            ad.step(alpha, adapting)
            if self.data is None:
                # prior-only: redraw the field values from the conditional
                self.theta1[:, f] = (st["mean"][f] + st["w"][f]
                                     + math.sqrt(st["g2"][f])
                                     * self.rng.normal(size=n))

    # -- driver ----------------------------------------------------------------

    def iterate(self, adapting):
        if self.data is not None:
            for s in range(self.n):
                self.update_site_block(s, adapting)
        for region in (1, 2):
            self.update_beta_block(region, adapting)
        self.update_dependence_scalars(adapting)
        if self.priors.mode == "stvc" and self.n:
            self.update_stvc_fields(adapting)

    def column_names(self):
        names = []
        fields = ([f"mu{i}" for i in range(self.p + 1)]
                  + ["log_sigma", "xi"])
        if self.data is not None or self.priors.mode == "stvc":
            for f in fields:
                names += [f"{f}_s{s}" for s in range(self.n)]
        names += ["beta10", "beta11", "beta20", "beta21", "rho", "r"]
        if self.data is not None:
            names += ["delta_bar_1", "delta_bar_2"]
        if self.priors.mode == "stvc":
            for f in fields:
                names += [f"{f}_mean", f"{f}_tau2", f"{f}_g2", f"{f}_lrange"]
        return names

    def snapshot(self):
        parts = []
        if self.data is not None or self.priors.mode == "stvc":
            parts.append(self.theta1.T.ravel())
        parts.append(self.beta.ravel())
        parts.append([self.rho, self.r])
        if self.data is not None:
            parts.append(self._deltas.mean(axis=1))
        if self.priors.mode == "stvc":
            st = self.stvc
            hyper = np.column_stack([st["mean"], st["tau2"], st["g2"],
                                     st["lrange"]]).ravel()
            parts.append(hyper)
        return np.concatenate([np.atleast_1d(np.asarray(p, float))
                               for p in parts])

    def run(self, progress=False):
        c = self.config
        names = self.column_names()
        kept = (c.iterations - c.burnin) // c.thin
        draws = np.empty((kept, len(names)))
        row = 0
        for it in range(1, c.iterations + 1):
            self.iterate(adapting=it <= c.burnin)
            if it > c.burnin and (it - c.burnin) % c.thin == 0:
                draws[row] = self.snapshot()
                row += 1
            if progress and it % 1000 == 0:
                print(f"  iteration {it}/{c.iterations}")
        rates = {k: v.post_rate() for k, v in self.adapt.items()}
        manifest = {
            "seed": self.seed_repr,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "columns": names,
            "acceptance": rates,
            "prior_mode": self.priors.mode,
            "structure_hash": (self.model.structure.structure_hash()
                               if self.data is not None else None),
        }
        return PosteriorStore(names, draws, manifest)


class PosteriorStore:
    """Thinned post-burn-in draws, one column per scalar parameter."""

    def __init__(self, names, draws, manifest):
        self.names = list(names)
        self.draws = np.asarray(draws, float)
        self.manifest = manifest
        if self.draws.shape[1] != len(self.names):
            raise ValueError("draw matrix does not match column names")

    def __len__(self):
        return self.draws.shape[0]

    def column(self, name):
        return self.draws[:, self.names.index(name)]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "draws.csv", "w") as fh:
            fh.write(",".join(self.names) + "\n")
            for row in self.draws:
                fh.write(",".join("%.17g" % v for v in row) + "\n")
        with open(directory / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        with open(directory / "draws.csv") as fh:
            names = fh.readline().strip().split(",")
            draws = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(names, draws, manifest)


def run_chain(config, data, surrogate, seed, priors=None, progress=False,
              **kwargs):
    sampler = Sampler(config, data, surrogate, seed, priors=priors, **kwargs)
    return sampler.run(progress=progress)


def split_rhat(chains):
    """Split-half potential scale reduction for one scalar parameter.

    chains: (M, D) array or list of equal-length draw vectors.
    """
    chains = np.atleast_2d(np.asarray(chains, float))
    half = chains.shape[1] // 2
    seqs = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    L = seqs.shape[1]
    means = seqs.mean(axis=1)
    W = float(np.mean(np.var(seqs, axis=1, ddof=1)))
    B = L * float(np.var(means, ddof=1))
    if W == 0.0:
        return 1.0
    var_plus = (L - 1) / L * W + B / L
    return math.sqrt(var_plus / W)
