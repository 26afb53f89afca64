"""Unsupervised learning primitives: PCA, DBSCAN and seeded k-means.

All three are deterministic: PCA fixes eigenvector signs, DBSCAN breaks
border ties by distance then index, and k-means draws its k-means++ seeds
from ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import AnalysisError

NOISE = -1


@dataclass(frozen=True, eq=False)
class PcaResult:
    components: np.ndarray     # (k, p) orthonormal rows
    eigenvalues: np.ndarray    # (k,) non-increasing
    scores: np.ndarray         # (n, k)
    mean: np.ndarray           # (p,)
    total_variance: float = 0.0

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def reconstruct(self, scores: np.ndarray | None = None) -> np.ndarray:
        scores = self.scores if scores is None else scores
        return scores @ self.components + self.mean

    def transform(self, matrix) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) @ self.components.T


def pca(matrix, n_components: int) -> PcaResult:
    """Eigen-decomposition of the sample covariance of mean-centred rows."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise AnalysisError("PCA needs a 2-D matrix with at least 2 rows")
    n, p = x.shape
    limit = min(n - 1, p)
    if not 1 <= n_components <= limit:
        raise AnalysisError(f"n_components must be in [1, {limit}], got {n_components}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    # sign convention: largest-magnitude loading of each component is positive
    pivot = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(p), pivot])
    vecs *= np.where(signs == 0, 1.0, signs)[:, None]
    comps = vecs[:n_components]
    return PcaResult(comps, vals[:n_components], xc @ comps.T, mean, float(np.trace(cov)))


def kth_neighbor_distance(points, k: int = 4) -> np.ndarray:
    """Distance from each point to its k-th nearest other point."""
    x = np.asarray(points, dtype=np.float64)
    if len(x) <= k:
        raise AnalysisError(f"need more than {k} points for a {k}-NN distance")
    d, _ = cKDTree(x).query(x, k=k + 1)
    return d[:, k]


def default_eps(points, k: int = 4) -> float:
    """Median k-th nearest-neighbour distance."""
    return float(np.median(kth_neighbor_distance(points, k)))


def dbscan(points, eps: float, min_pts: int = 5) -> np.ndarray:
    """Density-based clustering; returns labels 0..m-1 or NOISE.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Clusters are the connected components of the core graph,
    numbered by their lowest-index core.  A border point joins the cluster of
    its nearest core neighbour (lowest index on exact ties), which keeps the
    partition independent of input order.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    if np.isinf(eps):
        if n >= min_pts:
            labels[:] = 0
        return labels

    ij = cKDTree(x).query_pairs(eps, output_type="ndarray")
    i, j = (ij[:, 0], ij[:, 1]) if len(ij) else (np.zeros(0, np.int64), np.zeros(0, np.int64))
    degree = np.bincount(np.concatenate([i, j]), minlength=n) + 1
    core = degree >= min_pts
    if not core.any():
        return labels

    cc = core[i] & core[j]
    graph = coo_matrix((np.ones(cc.sum()), (i[cc], j[cc])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    core_idx = np.flatnonzero(core)
    # renumber components by first core index
    first = {}
    for c in comp[core_idx]:
        if c not in first:
            first[c] = len(first)
    labels[core_idx] = [first[c] for c in comp[core_idx]]

    # border points: non-core with at least one core neighbour
    a = np.concatenate([i, j])
    b = np.concatenate([j, i])
    sel = ~core[a] & core[b]
    if sel.any():
        a, b = a[sel], b[sel]
        dist = np.linalg.norm(x[a] - x[b], axis=1)
        order = np.lexsort((b, dist, a))     # per border: nearest core, then lowest index
        a, b = a[order], b[order]
        keep = np.concatenate([[True], a[1:] != a[:-1]])
        labels[a[keep]] = labels[b[keep]]
    return labels


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list = field(default_factory=list)   # inertia after each Lloyd iteration
    n_iter: int = 0


def _sq_dists(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x, k, rng) -> np.ndarray:
    n = len(x)
    centers = [int(rng.integers(n))]
    d2 = ((x - x[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return x[centers].copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start.

    Iterates until the assignment no longer changes (or ``max_iter``).  An
    empty cluster is re-seeded at the point farthest from its centroid.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if not 1 <= k <= n:
        raise AnalysisError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_c = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for c in range(k):
            if counts[c]:
                new_c[c] = x[labels == c].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            far = ((x - new_c[labels]) ** 2).sum(axis=1)
            for c, idx in zip(empty, np.argsort(-far, kind="stable")):
                new_c[c] = x[idx]
        d = _sq_dists(x, new_c)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new_labels].sum()))
        centroids = new_c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    labels = new_labels
    return KMeansResult(centroids, labels.astype(np.int64), history[-1], history, n_iter)


def relabel_by_order(labels: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Renumber non-noise labels so that cluster ids follow ascending ``key``."""
    labels = np.asarray(labels)
    ids = [c for c in np.unique(labels) if c != NOISE]
    order = sorted(ids, key=lambda c: (float(np.median(key[labels == c])), c))
    lut = {old: new for new, old in enumerate(order)}
    return np.array([lut.get(int(v), NOISE) for v in labels], dtype=np.int64)
