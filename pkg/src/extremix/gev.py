"""Generalized extreme value marginals with covariate-driven location.

The yearly maximum at a site follows a GEV whose location is linear in
standardized covariates while scale and shape stay constant in time:

    mu_t(s) = mu0(s) + sum_i mu_i(s) * X_it(s).

Shape values inside `XI_EPS` of zero take the Gumbel limit so the likelihood
is continuous across xi = 0. Points outside the support produce cdf values of
exactly 0/1 and log density -inf; samplers treat that as a rejectable state,
never an exception.
"""

import numpy as np

XI_EPS = 1e-8


def gev_cdf(y, mu, sigma, xi):
    """P(Y <= y) for GEV(mu, sigma, xi). Fully vectorized, sigma > 0."""
    y, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (y - mu) / sigma
    out = np.empty(z.shape, float)
    gum = np.abs(xi) < XI_EPS
    if np.any(gum):
        out[gum] = np.exp(-np.exp(-z[gum]))
    gv = ~gum
    if np.any(gv):
        arg = 1.0 + xi[gv] * z[gv]
        inside = arg > 0
        t = np.empty(arg.shape, float)
        t[inside] = np.exp(-np.log(arg[inside]) / xi[gv][inside])
        val = np.where(inside, np.exp(-np.where(inside, t, 0.0)),
                       np.where(xi[gv] > 0, 0.0, 1.0))
        out[gv] = val
    return out if out.shape else float(out)


def gev_logpdf(y, mu, sigma, xi):
    """log density of GEV(mu, sigma, xi); -inf outside the support."""
    y, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (y - mu) / sigma
    out = np.full(z.shape, -np.inf)
    gum = np.abs(xi) < XI_EPS
    if np.any(gum):
        zg = z[gum]
        out[gum] = -np.log(sigma[gum]) - zg - np.exp(-zg)
    gv = ~gum
    if np.any(gv):
        arg = 1.0 + xi[gv] * z[gv]
        inside = arg > 0
        la = np.log(np.where(inside, arg, 1.0))
        xr = xi[gv]
        val = (-np.log(sigma[gv]) - (1.0 + 1.0 / xr) * la
               - np.exp(-la / xr))
        sub = np.full(arg.shape, -np.inf)
        sub[inside] = val[inside]
        out[gv] = sub
    return out if out.shape else float(out)


def gev_quantile(p, mu, sigma, xi):
    """Inverse cdf for p in (0, 1)."""
    p, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(p, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float))
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("p must lie strictly inside (0, 1)")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    ell = -np.log(p)
    out = np.empty(p.shape, float)
    gum = np.abs(xi) < XI_EPS
    if np.any(gum):
        out[gum] = mu[gum] - sigma[gum] * np.log(ell[gum])
    gv = ~gum
    if np.any(gv):
        xr = xi[gv]
        out[gv] = mu[gv] + sigma[gv] / xr * (np.exp(-xr * np.log(ell[gv])) - 1.0)
    return out if out.shape else float(out)


def gev_sample(rng, mu, sigma, xi, size=None):
    """Draw GEV variates by inverting uniforms."""
    if size is None:
        size = np.broadcast(np.asarray(mu), np.asarray(sigma), np.asarray(xi)).shape
    u = rng.uniform(size=size)
    # keep u strictly inside (0,1); a drawn 0.0 would blow up the inverse
    u = np.clip(u, 1e-15, 1 - 1e-15)
    return gev_quantile(u, mu, sigma, xi)


def location_at(mu0, slopes, x):
    """Location series mu_t = mu0 + x_t . slopes.

    mu0: (n,) intercepts; slopes: (n, p); x: (T, n, p) or (T, p) shared
    across sites. Returns (T, n).
    """
    mu0 = np.asarray(mu0, float)
    slopes = np.atleast_2d(np.asarray(slopes, float))
    x = np.asarray(x, float)
    if x.ndim == 2:  # (T, p) shared covariates
        return mu0[None, :] + x @ slopes.T
    return mu0[None, :] + np.einsum("tnp,np->tn", x, slopes)


def max_quantile_solve(p, mu, sigma, xi, tol=1e-9, max_expand=60):
    """Level y* with prod_t F_t(y*) = p over a window of yearly GEV laws.

    mu is the (T,) vector of yearly locations; sigma, xi scalars or (T,).
    Bracketing bisection on the product of cdfs followed by a secant polish;
    |prod F(y*) - p| <= tol at return. The analytic bracket
    [max_t q_t(p), max_t q_t(p^(1/T))] always contains the root; a guarded
    expansion loop backs it up against degenerate inputs.
    """
    mu = np.atleast_1d(np.asarray(mu, float))
    T = mu.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, float), mu.shape)
    xi = np.broadcast_to(np.asarray(xi, float), mu.shape)
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie strictly inside (0, 1)")

    def g(y):
        return float(np.prod(gev_cdf(y, mu, sigma, xi)))

    lo = float(np.max(gev_quantile(p, mu, sigma, xi)))
    hi = float(np.max(gev_quantile(p ** (1.0 / T), mu, sigma, xi)))
    if lo > hi:
        lo, hi = hi, lo
    glo, ghi = g(lo), g(hi)
    k = 0
    width = max(hi - lo, 1.0)
    while glo > p and k < max_expand:
        lo -= width
        width *= 2.0
        glo = g(lo)
        k += 1
    width = max(hi - lo, 1.0)
    while ghi < p and k < max_expand:
        hi += width
        width *= 2.0
        ghi = g(hi)
        k += 1
    if glo > p or ghi < p:
        raise RuntimeError(
            f"no bracket for max-quantile solve: tried [{lo}, {hi}] "
            f"with cdf products [{glo}, {ghi}] targeting {p}")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm < p:
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
        if hi - lo < 1e-12 * max(1.0, abs(hi)):
            break
    y = 0.5 * (lo + hi)
    gy = g(y)
    # secant polish: bisection satisfies the probability tolerance already,
    # the polish just drives the residual toward machine precision
    y2, g2 = hi, ghi
    for _ in range(12):
        denom = gy - g2
        if denom == 0.0 or gy == p:
            break
        ynew = y - (gy - p) * (y - y2) / denom
        if not np.isfinite(ynew) or ynew == y:
            break
        y2, g2 = y, gy
        y, gy = ynew, g(ynew)
    if abs(gy - p) > abs(g2 - p):  # keep the better endpoint
        y, gy = y2, g2
    if abs(gy - p) > tol:
        raise RuntimeError(f"max-quantile solve did not reach tol: |{gy}-{p}|")
    return y
