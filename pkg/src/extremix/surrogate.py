"""Neural density-regression surrogate for the Vecchia factor densities.

Each ordered site i >= 2 gets its own small softmax network mapping the
feature vector [neighbor scores, rho, r, delta_y, delta_gap/10] to K mixture
weights over a shared M-spline basis; the resulting spline mixture
approximates the conditional density f_i(u_i | u_neighbors, parameters).
The first ordered factor is the uniform margin, log f_1 = 0.

Training data: parameter rows drawn from the design distribution (independent
uniforms over (rho, delta1, delta2, r) unless a component is pinned), scores
simulated by the dependence module at the response site and its neighbor set
only, never the full field.
"""

import json
import struct

import numpy as np

from . import network
from .processes import (RHO_RATIO, BrownResnickSampler, g_r, g_w, hypoexp_cdf,
                        msp_with_nugget, pairwise_dists)
from .rng import child_seq, make_rng
from .splines import SplineBasis
from .vecchia import VecchiaStructure, feature_matrix

DELTA_GAP_SCALE = 10.0
U_EPS = 1e-12
_MAGIC = b"EXMXSUR1"

_DESIGN_KEYS = ("rho", "delta1", "delta2", "r")


class DesignSpec:
    """Sampling design over (rho, delta1, delta2, r).

    Each component is ("uniform", lo, hi) or ("fixed", value). The default is
    independent Uniform(0,1) on all four.
    """

    def __init__(self, **components):
        self.components = {}
        for key in _DESIGN_KEYS:
            spec = components.pop(key, ("uniform", 0.0, 1.0))
            kind = spec[0]
            if kind not in ("uniform", "fixed"):
                raise ValueError(f"unknown design component kind {kind!r}")
            self.components[key] = tuple(spec)
        if components:
            raise ValueError(f"unknown design keys {sorted(components)}")

    def draw(self, n, rng):
        """(n, 4) rows in the order (rho, delta1, delta2, r)."""
        cols = []
        for key in _DESIGN_KEYS:
            spec = self.components[key]
            if spec[0] == "uniform":
                cols.append(rng.uniform(spec[1], spec[2], size=n))
            else:
                cols.append(np.full(n, float(spec[1])))
        return np.column_stack(cols)

    def to_dict(self):
        return {k: list(v) for k, v in self.components.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) for k, v in d.items()})


def _batched_gp(coords, rho, alpha, r, rng):
    """One draw per parameter row: (B, n) correlated standard normals."""
    B = rho.shape[0]
    n = coords.shape[0]
    if n == 1:
        return rng.normal(size=(B, 1))
    D = pairwise_dists(coords)
    C = (r[:, None, None]
         * np.exp(-((D[None, :, :] / rho[:, None, None]) ** alpha)))
    idx = np.arange(n)
    C[:, idx, idx] = 1.0
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        C[:, idx, idx] += 1e-10
        L = np.linalg.cholesky(C)
    z = rng.normal(size=(B, n))
    return np.einsum("bij,bj->bi", L, z)


def simulate_scores(coords, regions, theta, rng, alpha=1.0,
                    rho_ratio=RHO_RATIO, br_sampler=None):
    """Uniform scores at a site subset, one field per parameter row.

    theta: (B, 4) rows (rho, delta1, delta2, r). Returns (B, n) scores.
    """
    theta = np.atleast_2d(np.asarray(theta, float))
    coords = np.atleast_2d(np.asarray(coords, float))
    regions = np.asarray(regions, int)
    B = theta.shape[0]
    rho, d1, d2, r = theta.T
    dsite = np.where(regions[None, :] == 1, d1[:, None], d2[:, None])
    if np.any(dsite > 0.0):
        if br_sampler is None:
            br_sampler = BrownResnickSampler(coords, alpha=alpha)
        r1 = br_sampler.sample(rho_ratio * rho, rng, size=B)
        grv = g_r(msp_with_nugget(r1, r, rng))
    else:
        grv = np.zeros((B, coords.shape[0]))
    if np.any(dsite < 1.0):
        gwv = g_w(_batched_gp(coords, rho, alpha, r, rng))
    else:
        gwv = np.zeros((B, coords.shape[0]))
    V = dsite * grv + (1.0 - dsite) * gwv
    U = hypoexp_cdf(V, dsite)
    return np.clip(U, U_EPS, 1.0 - U_EPS)


def generate_training(structure, i, design, n_rows, rng, chunk=20000,
                      alpha=1.0, rho_ratio=RHO_RATIO):
    """Training set for ordered site i: features (n_rows, m+4), responses.

    Only the response site and its neighbors are simulated per row. Feature
    rows are raw (delta_gap unscaled); scaling happens inside the model.
    """
    if i < 1 or i >= structure.n:
        raise ValueError("training sites are the ordered positions 1..n-1")
    nb = structure.neighbors[i]
    sub = np.concatenate([[i], nb]).astype(int)
    coords_sub = structure.coords[structure.order[sub]]
    regions_sub = structure.ordered_regions[sub]
    reg_i = regions_sub[0]
    mixed = nb.size > 0 and np.any(regions_sub[1:] != reg_i)
    br = BrownResnickSampler(coords_sub, alpha=alpha)
    m = structure.m
    X = np.zeros((n_rows, m + 4))
    u = np.empty(n_rows)
    done = 0
    while done < n_rows:
        B = min(chunk, n_rows - done)
        theta = design.draw(B, rng)
        U = simulate_scores(coords_sub, regions_sub, theta, rng, alpha=alpha,
                            rho_ratio=rho_ratio, br_sampler=br)
        sl = slice(done, done + B)
        X[sl, :nb.size] = U[:, 1:]
        X[sl, m] = theta[:, 0]
        X[sl, m + 1] = theta[:, 3]
        dy = theta[:, reg_i]  # columns: rho, delta1, delta2, r
        X[sl, m + 2] = dy
        if mixed:
            other = theta[:, 3 - reg_i]
            ok = (dy > 0.0) & (other > 0.0)  # gap undefined at pinned zeros
            with np.errstate(divide="ignore", invalid="ignore"):
                X[sl, m + 3] = np.where(ok, np.log(dy) - np.log(other), 0.0)
        u[sl] = U[:, 0]
        done += B
    return X, u


def scale_features(X, m, delta_gap_scale=DELTA_GAP_SCALE):
    """Network input scaling: bounded columns pass through, log-ratio shrunk."""
    Xs = np.array(X, float, copy=True)
    Xs[..., m + 3] /= delta_gap_scale
    return Xs


def mixture_logdensity(pi, B):
    """(T,) log sum_k pi_tk B_tk; the single place this reduction happens,
    so cached and from-scratch likelihood paths agree bitwise."""
    return np.log(np.einsum("tk,tk->t", pi, B))


def train_site(X, u, netspec, basis, rng, optimizer="adam", polish=True,
               verbose=False):
    """Fit one site network; returns (weights, loss trace).

    The main leg runs at netspec's learning rate and epoch count. With
    polish=True a continuation leg at a fifth of the rate and half the epochs
    follows; constant-rate Adam alone leaves a noise floor on the loss that
    shows up as avoidable log-density error.
    """
    Xs = scale_features(X, netspec.input_dim - 4)
    B = basis.m_matrix(np.clip(u, U_EPS, 1.0 - U_EPS))
    weights, trace = network.train(Xs, B, netspec, rng, optimizer=optimizer,
                                   verbose=verbose)
    if polish:
        fine = network.NetSpec(
            input_dim=netspec.input_dim, hidden=netspec.hidden,
            output_dim=netspec.output_dim,
            learning_rate=0.2 * netspec.learning_rate,
            epochs=max(1, netspec.epochs // 2),
            batch_size=netspec.batch_size)
        weights, trace2 = network.train(Xs, B, fine, rng, optimizer=optimizer,
                                        init=weights, verbose=verbose)
        trace = np.concatenate([trace, trace2])
    return weights, trace


class SurrogateModel:
    """Per-site networks + shared basis over a fixed Vecchia structure."""

    def __init__(self, structure, basis, netspec, weights, design,
                 delta_gap_scale=DELTA_GAP_SCALE, meta=None):
        self.structure = structure
        self.basis = basis
        self.netspec = netspec
        self.weights = weights  # dict ordered-site -> weight list
        self.design = design
        self.delta_gap_scale = float(delta_gap_scale)
        self.meta = dict(meta or {})
        if netspec.input_dim != structure.m + 4:
            raise ValueError("network input dimension must equal m + 4")
        if netspec.output_dim != basis.n_basis:
            raise ValueError("network output dimension must match the basis")

    # -- evaluation ---------------------------------------------------------

    def _net_input(self, X):
        return scale_features(X, self.structure.m, self.delta_gap_scale)

    def pi_rows(self, i, X):
        """(T, K) softmax mixture weights for ordered site i."""
        return network.forward(self.weights[i], self._net_input(X))

    def logdensity_rows(self, i, u, X):
        """(T,) log conditional density of responses u under features X."""
        pi = self.pi_rows(i, X)
        B = self.basis.m_matrix(np.clip(u, U_EPS, 1.0 - U_EPS))
        return mixture_logdensity(pi, B)

    def cdf_rows(self, i, u, X):
        """(T,) conditional CDF via the integrated (I-spline) mixture."""
        pi = self.pi_rows(i, X)
        I = self.basis.i_matrix(np.clip(u, 0.0, 1.0))
        return np.einsum("tk,tk->t", pi, I)

    def quantile_rows(self, i, tau, X, tol=1e-9):
        """Inverse conditional CDF by bisection (monotone in u)."""
        pi = self.pi_rows(i, X)
        tau = np.broadcast_to(np.asarray(tau, float), (X.shape[0],))
        lo = np.zeros(X.shape[0])
        hi = np.ones(X.shape[0])
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            F = np.einsum("tk,tk->t", pi, self.basis.i_matrix(mid))
            less = F < tau
            lo = np.where(less, mid, lo)
            hi = np.where(less, hi, mid)
            if np.max(hi - lo) < tol:
                break
        return 0.5 * (lo + hi)

    def sample_rows(self, i, X, rng):
        """One response draw per feature row, from the site's own mixture."""
        return self.quantile_rows(i, rng.uniform(size=X.shape[0]), X)

    def synthetic_loglik(self, u, rho, r, deltas):
        """Vecchia synthetic log likelihood of scores u (T, n_sites).

        u is in original site order; deltas is the (2, T) region-weight
        series. The first ordered factor is uniform (contributes 0).
        """
        u = np.atleast_2d(np.asarray(u, float))
        if u.shape[1] != self.structure.n:
            raise ValueError("score matrix does not match the site count")
        u_ord = u[:, self.structure.order]
        total = 0.0
        for i in range(1, self.structure.n):
            X = feature_matrix(self.structure, i, u_ord, rho, r, deltas)
            total += float(np.sum(self.logdensity_rows(i, u_ord[:, i], X)))
        return total

    def check_structure(self, structure):
        if structure.structure_hash() != self.structure.structure_hash():
            raise ValueError(
                "surrogate was trained on a different site structure")

    # -- persistence --------------------------------------------------------

    def save(self, path):
        header = {
            "format_version": 1,
            "structure": self.structure.to_dict(),
            "structure_hash": self.structure.structure_hash(),
            "basis": self.basis.to_dict(),
            "netspec": self.netspec.to_dict(),
            "design": self.design.to_dict(),
            "delta_gap_scale": self.delta_gap_scale,
            "meta": self.meta,
            "sites": sorted(self.weights),
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for i in sorted(self.weights):
                vec = network.flatten_weights(self.weights[i])
                fh.write(vec.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError("not a surrogate checkpoint (bad magic)")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode())
            if header["format_version"] != 1:
                raise ValueError("unsupported checkpoint version")
            structure = VecchiaStructure.from_dict(header["structure"])
            if structure.structure_hash() != header["structure_hash"]:
                raise ValueError("structure hash mismatch in checkpoint")
            basis = SplineBasis.from_dict(header["basis"])
            netspec = network.NetSpec.from_dict(header["netspec"])
            design = DesignSpec.from_dict(header["design"])
            nper = sum(
                din * dout + dout
                for din, dout in zip(netspec.layer_dims()[:-1],
                                     netspec.layer_dims()[1:]))
            weights = {}
            for i in header["sites"]:
                raw = fh.read(nper * 8)
                if len(raw) != nper * 8:
                    raise ValueError("truncated checkpoint")
                vec = np.frombuffer(raw, dtype="<f8").astype(float)
                weights[int(i)] = network.unflatten_weights(vec, netspec)
        return cls(structure, basis, netspec, weights, design,
                   delta_gap_scale=header["delta_gap_scale"],
                   meta=header.get("meta", {}))


def train_surrogate(structure, seed, n_rows, design=None, basis=None,
                    netspec=None, optimizer="adam", alpha=1.0,
                    rho_ratio=RHO_RATIO, verbose=False):
    """Generate data and train every site network; deterministic per seed.

    Each ordered site gets an independent child RNG stream, so results do
    not depend on execution order (the training of distinct sites is
    embarrassingly parallel in principle; this runs them sequentially).
    """
    design = design or DesignSpec()
    basis = basis or SplineBasis()
    netspec = netspec or network.NetSpec(input_dim=structure.m + 4,
                                         output_dim=basis.n_basis)
    weights = {}
    traces = {}
    for i in range(1, structure.n):
        rng = make_rng(child_seq(seed, (7001, i)))
        X, u = generate_training(structure, i, design, n_rows, rng,
                                 alpha=alpha, rho_ratio=rho_ratio)
        w, trace = train_site(X, u, netspec, basis, rng, optimizer=optimizer,
                              verbose=verbose)
        weights[i] = w
        traces[i] = trace
        if verbose:
            print(f"site {i}/{structure.n - 1}: final loss {trace[-1]:.4f}")
    meta = {"train_rows": int(n_rows), "seed_entropy": str(seed)}
    model = SurrogateModel(structure, basis, netspec, weights, design,
                           meta=meta)
    model.training_traces = traces
    return model


# -- diagnostics -------------------------------------------------------------

def pit_diagnostic(model, i, X, u):
    """Probability integral transform scores; uniform under a correct fit."""
    return model.cdf_rows(i, u, X)


def variable_importance(model, i, X, taus, rng):
    """Permutation importance of each feature column on the quantile scale.

    Returns (n_features, len(taus)): mean absolute quantile change when one
    column is shuffled across rows.
    """
    taus = np.asarray(taus, float)
    base = np.stack([model.quantile_rows(i, t, X) for t in taus])
    out = np.zeros((X.shape[1], taus.size))
    for f in range(X.shape[1]):
        Xp = X.copy()
        Xp[:, f] = Xp[rng.permutation(X.shape[0]), f]
        pert = np.stack([model.quantile_rows(i, t, Xp) for t in taus])
        out[f] = np.mean(np.abs(pert - base), axis=1)
    return out
