"""Vecchia factorization structure: site ordering, neighbors, features.

The joint density of the uniform scores is approximated by a product of
conditionals, each conditioning only on a small set of previously ordered
nearby sites. The surrogate networks are trained per ordered site against
feature vectors of fixed width m+4:

    [u at the m neighbors (zero-padded, nearest first), rho, r,
     delta_y, delta_gap]

where delta_y is the response site's region weight at that time index and
delta_gap = log(delta_y) - log(delta_other) when the neighbor set spans the
other region, else 0.
"""

import hashlib
import json

import numpy as np

from .processes import pairwise_dists


def order_sites(coords):
    """Max-min ordering. First the site closest to the coordinate centroid,
    then repeatedly the site maximizing its minimum distance to the already
    ordered ones; ties broken by original site index."""
    coords = np.atleast_2d(np.asarray(coords, float))
    n = coords.shape[0]
    centroid = coords.mean(axis=0)
    d0 = np.sqrt(((coords - centroid) ** 2).sum(axis=1))
    first = int(np.argmin(d0))  # argmin takes the lowest index on ties
    order = [first]
    dmin = np.sqrt(((coords - coords[first]) ** 2).sum(axis=1))
    dmin[first] = -np.inf
    for _ in range(n - 1):
        nxt = int(np.argmax(dmin))
        order.append(nxt)
        dn = np.sqrt(((coords - coords[nxt]) ** 2).sum(axis=1))
        dmin = np.minimum(dmin, dn)
        dmin[nxt] = -np.inf
    return np.asarray(order, int)


class VecchiaStructure:
    """Ordering plus per-site neighbor sets (ordered positions, nearest first)."""

    def __init__(self, coords, regions, m, order=None):
        coords = np.atleast_2d(np.asarray(coords, float))
        self.coords = coords
        self.regions = np.asarray(regions, int)
        if self.regions.shape[0] != coords.shape[0]:
            raise ValueError("one region label per site required")
        self.m = int(m)
        if self.m < 1:
            raise ValueError("m must be at least 1")
        self.order = order_sites(coords) if order is None else np.asarray(order, int)
        self.n = coords.shape[0]
        oc = coords[self.order]
        D = pairwise_dists(oc)
        self.neighbors = [np.empty(0, int)]
        for i in range(1, self.n):
            k = min(i, self.m)
            # stable sort keeps ordering-position ties deterministic
            idx = np.argsort(D[i, :i], kind="stable")[:k]
            self.neighbors.append(idx.astype(int))
        self.ordered_regions = self.regions[self.order]

    def feature_dim(self):
        return self.m + 4

    def mask(self, i):
        """Validity of the m neighbor slots for ordered site i."""
        valid = np.zeros(self.m, bool)
        valid[:len(self.neighbors[i])] = True
        return valid

    def to_dict(self):
        return {
            "m": self.m,
            "coords": [[float(a) for a in row] for row in self.coords],
            "regions": [int(r) for r in self.regions],
            "order": [int(i) for i in self.order],
            "neighbors": [[int(j) for j in nb] for nb in self.neighbors],
        }

    @classmethod
    def from_dict(cls, d):
        s = cls(np.asarray(d["coords"], float), np.asarray(d["regions"], int),
                d["m"], order=np.asarray(d["order"], int))
        stored = [np.asarray(nb, int) for nb in d["neighbors"]]
        for a, b in zip(s.neighbors, stored):
            if not np.array_equal(a, b):
                raise ValueError("stored neighbor sets do not match geometry")
        return s

    def structure_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def delta_features(structure, i, deltas):
    """(T,) delta_y and delta_gap columns for ordered site i.

    deltas: (2, T) per-region weights. delta_gap is the log-ratio of the
    response region's weight to the other region's, zero when every neighbor
    lies in the response's region.
    """
    deltas = np.atleast_2d(np.asarray(deltas, float))
    reg_i = structure.ordered_regions[i]
    delta_y = deltas[reg_i - 1]
    nb = structure.neighbors[i]
    if nb.size and np.any(structure.ordered_regions[nb] != reg_i):
        other = deltas[2 - reg_i]  # the other of the two regions
        gap = np.log(delta_y) - np.log(other)
    else:
        gap = np.zeros_like(delta_y)
    return delta_y, gap


def feature_matrix(structure, i, u_ordered, rho, r, deltas):
    """(T, m+4) feature rows for ordered site i.

    u_ordered: (T, n) scores in ordered-site columns; rho, r scalars or (T,);
    deltas: (2, T).
    """
    u_ordered = np.atleast_2d(np.asarray(u_ordered, float))
    T = u_ordered.shape[0]
    X = np.zeros((T, structure.m + 4))
    nb = structure.neighbors[i]
    if nb.size:
        X[:, :nb.size] = u_ordered[:, nb]
    X[:, structure.m] = rho
    X[:, structure.m + 1] = r
    dy, gap = delta_features(structure, i, deltas)
    X[:, structure.m + 2] = dy
    X[:, structure.m + 3] = gap
    return X


def build_features(structure, i, u_ordered, rho, r, deltas, t=0):
    """Single feature vector for ordered site i at time t (contract form)."""
    u_ordered = np.atleast_2d(np.asarray(u_ordered, float))
    nb = structure.neighbors[i]
    if np.any(~np.isfinite(u_ordered[t, nb])):
        raise ValueError(f"missing neighbor score for ordered site {i}")
    return feature_matrix(structure, i, u_ordered[t:t + 1], rho, r,
                          np.atleast_2d(np.asarray(deltas, float))[:, t:t + 1])[0]
