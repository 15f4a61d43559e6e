"""M-spline / I-spline basis on [0, 1].

The density surrogate represents each conditional density as a convex
combination of K M-spline basis functions (degree 3, equally spaced interior
knots, clamped boundaries). M-splines are B-splines normalized to integrate
to one; I-splines are their running integrals and give the conditional CDF.

The I-spline identity used here: with C_0..C_K the order-(k+1) B-splines on
the knot vector extended by one boundary knot at each end,
d/dx C_j = M_{j-1} - M_j, so the tail sum  I_i(x) = sum_{j>i} C_j(x).
Both identities are verified by quadrature at construction.
"""

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _bspline_columns(x, knots, order, interval):
    """All order-`order` B-spline values at x via the Cox-de Boor recursion.

    x: (n,) points; interval: (n,) knot-interval index of each point
    (half-open intervals, closed at the right boundary). Returns
    (n, len(knots)-order) with columns summing to 1 on the clamped span.
    """
    L = len(knots)
    B = np.zeros((x.shape[0], L - 1))
    B[np.arange(x.shape[0]), interval] = 1.0
    for o in range(2, order + 1):
        nb = L - o  # functions of order o
        left = knots[:nb]
        right = knots[o:o + nb]
        d1 = knots[o - 1:o - 1 + nb] - left
        d2 = right - knots[1:1 + nb]
        w1 = np.zeros(nb)
        w2 = np.zeros(nb)
        nz1 = d1 > 0
        nz2 = d2 > 0
        w1[nz1] = 1.0 / d1[nz1]
        w2[nz2] = 1.0 / d2[nz2]
        B = ((x[:, None] - left) * w1 * B[:, :nb]
             + (right - x[:, None]) * w2 * B[:, 1:nb + 1])
    return B


class SplineBasis:
    """K M-spline density basis functions and their I-spline integrals."""

    def __init__(self, n_basis=15, degree=3):
        if n_basis < degree + 1:
            raise ValueError("need at least degree+1 basis functions")
        self.n_basis = int(n_basis)
        self.degree = int(degree)
        k = self.degree + 1  # spline order
        self.order = k
        n_interior = self.n_basis - k
        interior = np.arange(1, n_interior + 1) / (n_interior + 1)
        self.knots = np.concatenate([np.zeros(k), interior, np.ones(k)])
        self.knots_ext = np.concatenate([[0.0], self.knots, [1.0]])
        span = self.knots[k:k + self.n_basis] - self.knots[:self.n_basis]
        self._m_scale = k / span
        self._check_integrals()

    def _interval(self, x, knots, order):
        hi = len(knots) - order - 1
        idx = np.searchsorted(knots, x, side="right") - 1
        return np.clip(idx, order - 1, hi)

    def m_matrix(self, u):
        """(n, K) matrix of M-spline values; densities on [0,1]."""
        u = np.atleast_1d(np.asarray(u, float))
        if np.any((u < 0) | (u > 1)):
            raise ValueError("u must lie in [0, 1]")
        iv = self._interval(u, self.knots, self.order)
        B = _bspline_columns(u, self.knots, self.order, iv)
        return B * self._m_scale

    def i_matrix(self, u):
        """(n, K) matrix of I-spline values; CDFs on [0,1]."""
        u = np.atleast_1d(np.asarray(u, float))
        if np.any((u < 0) | (u > 1)):
            raise ValueError("u must lie in [0, 1]")
        iv = self._interval(u, self.knots_ext, self.order + 1)
        C = _bspline_columns(u, self.knots_ext, self.order + 1, iv)
        # I_i = sum_{j >= i+1} C_j ; reversed cumulative sum, drop column 0
        tail = np.cumsum(C[:, ::-1], axis=1)[:, ::-1]
        return tail[:, 1:]

    def _check_integrals(self):
        """Gauss-Legendre per knot interval; exact for piecewise cubics."""
        k = self.order
        edges = self.knots[k - 1:len(self.knots) - k + 1]
        total = np.zeros(self.n_basis)
        for a, b in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            pts = mid + half * _GL_NODES
            total += half * (_GL_WEIGHTS @ self.m_matrix(pts))
        if not np.allclose(total, 1.0, atol=1e-9):
            raise AssertionError(f"basis integrals off: {total}")

    def to_dict(self):
        return {"n_basis": self.n_basis, "degree": self.degree}

    @classmethod
    def from_dict(cls, d):
        return cls(n_basis=d["n_basis"], degree=d["degree"])
