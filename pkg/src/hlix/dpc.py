"""Density-peaks clustering used to divide point sets during index builds.

Densities use a Gaussian kernel with cutoff d_c chosen from the pairwise
distance distribution so an average neighborhood holds about 2% of the set.
Each point's separation delta is its distance to the nearest denser point
(the densest point takes the maximum pairwise distance). Cluster centers are
the gamma = rho * delta outliers (3 sigma above the mean), topped up to a
requested minimum from the gamma ranking; everything else follows its nearest
denser neighbor's label. Sets above `sample_cap` are clustered on a seeded
sample and the rest join their nearest center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHUNK = 1024
DC_QUANTILE = 0.02
DC_SAMPLE = 2048


class SingleClusterError(ValueError):
    """The set cannot be split into two or more clusters."""


@dataclass
class DPCResult:
    labels: np.ndarray      # (m,) cluster ids, 0..k-1 in gamma order
    centers: np.ndarray     # (k,) indices of center points
    d_c: float
    rho: np.ndarray | None = None
    delta: np.ndarray | None = None
    gamma: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.centers)


def _sq_dist_chunk(P: np.ndarray, norms2: np.ndarray, a: int, b: int) -> np.ndarray:
    d2 = norms2[a:b, None] + norms2[None, :] - 2.0 * (P[a:b] @ P.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _estimate_dc(P: np.ndarray, rng: np.random.Generator) -> float:
    m = len(P)
    idx = rng.choice(m, size=min(m, DC_SAMPLE), replace=False)
    sub = P[idx]
    norms2 = np.einsum("ij,ij->i", sub, sub)
    d2 = norms2[:, None] + norms2[None, :] - 2.0 * (sub @ sub.T)
    np.maximum(d2, 0.0, out=d2)
    tri = d2[np.triu_indices(len(sub), k=1)]
    if tri.size == 0 or float(np.max(tri)) == 0.0:
        raise SingleClusterError("all points coincide")
    d_c = float(np.sqrt(np.quantile(tri, DC_QUANTILE)))
    if d_c == 0.0:
        pos = tri[tri > 0]
        d_c = float(np.sqrt(np.min(pos)))
    return d_c


def _full_dpc(P: np.ndarray, min_centers: int, rng: np.random.Generator) -> DPCResult:
    m = len(P)
    if m < 2:
        raise SingleClusterError("need at least 2 points")
    d_c = _estimate_dc(P, rng)
    norms2 = np.einsum("ij,ij->i", P, P)
    inv_dc2 = 1.0 / (d_c * d_c)

    rho = np.empty(m)
    for a in range(0, m, CHUNK):
        b = min(a + CHUNK, m)
        d2 = _sq_dist_chunk(P, norms2, a, b)
        rho[a:b] = np.exp(-d2 * inv_dc2).sum(axis=1) - 1.0   # drop self term

    # strict density order: ties broken by index so ranks are a permutation
    order = np.lexsort((np.arange(m), -rho))
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)

    delta = np.empty(m)
    parent = np.full(m, -1, dtype=np.int64)
    for a in range(0, m, CHUNK):
        b = min(a + CHUNK, m)
        d2 = _sq_dist_chunk(P, norms2, a, b)
        higher = rank[None, :] < rank[a:b, None]
        masked = np.where(higher, d2, np.inf)
        has_higher = higher.any(axis=1)
        arg = np.argmin(masked, axis=1)
        rows = np.arange(b - a)
        delta[a:b] = np.where(has_higher, np.sqrt(masked[rows, arg]),
                              np.sqrt(d2.max(axis=1)))
        parent[a:b] = np.where(has_higher, arg, -1)

    gamma = rho * delta
    want = int(np.sum(gamma > gamma.mean() + 3.0 * gamma.std()))
    n_centers = min(m, max(want, max(2, min_centers)))
    by_gamma = np.lexsort((np.arange(m), -gamma))
    centers = list(by_gamma[:n_centers])
    densest = int(order[0])
    if densest not in centers:
        centers[-1] = densest   # the density maximum anchors its own cluster
    centers_arr = np.asarray(sorted(set(centers), key=lambda i: -gamma[i]),
                             dtype=np.int64)

    labels = np.full(m, -1, dtype=np.int64)
    for cid, ci in enumerate(centers_arr):
        labels[ci] = cid
    for i in order:
        if labels[i] < 0:
            labels[i] = labels[parent[i]]

    labels, centers_arr = _compact(labels, centers_arr)
    if len(centers_arr) < 2:
        raise SingleClusterError("division produced a single cluster")
    return DPCResult(labels, centers_arr, d_c, rho, delta, gamma)


def _compact(labels: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop empty clusters: relabel densely, keep one center per survivor."""
    used = np.unique(labels)
    remap = {int(c): i for i, c in enumerate(used)}
    new_labels = np.asarray([remap[int(l)] for l in labels], dtype=np.int64)
    by_cluster: dict[int, int] = {}
    for c in centers:
        by_cluster.setdefault(remap[int(labels[c])], int(c))
    new_centers = np.asarray([by_cluster[i] for i in range(len(used))], dtype=np.int64)
    return new_labels, new_centers


def dpc_cluster(points: np.ndarray, min_centers: int = 2,
                sample_cap: int = 20000, seed: int = 0) -> DPCResult:
    """Cluster `points`; raises SingleClusterError when no split exists."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or len(P) < 2:
        raise SingleClusterError("need at least 2 points")
    rng = np.random.default_rng(seed)
    if len(P) <= sample_cap:
        return _full_dpc(P, min_centers, rng)

    idx = np.sort(rng.choice(len(P), size=sample_cap, replace=False))
    sub = _full_dpc(P[idx], min_centers, rng)
    centers = idx[sub.centers]
    labels = np.empty(len(P), dtype=np.int64)
    labels[idx] = sub.labels
    rest = np.setdiff1d(np.arange(len(P), dtype=np.int64), idx, assume_unique=False)
    C = P[centers]
    for a in range(0, len(rest), 8192):
        b = min(a + 8192, len(rest))
        block = P[rest[a:b]]
        d2 = (np.einsum("ij,ij->i", block, block)[:, None]
              + np.einsum("ij,ij->i", C, C)[None, :] - 2.0 * (block @ C.T))
        labels[rest[a:b]] = np.argmin(d2, axis=1)
    labels, centers = _compact(labels, centers)
    if len(centers) < 2:
        raise SingleClusterError("division produced a single cluster")
    return DPCResult(labels, centers, sub.d_c)
