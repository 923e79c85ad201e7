"""Feature scaling and the five clustering algorithms.

Every stochastic fit takes an explicit integer seed; identical data, params
and seed reproduce the labels exactly. Row order is part of the input.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence

import numpy as np
from scipy.cluster import hierarchy
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp

log = logging.getLogger(__name__)

METHODS = ("kmeans", "hac_ward", "gmm", "fcm", "dbscan")
GMM_RIDGE = 1e-6


class ConvergenceError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def transform(self, raw: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (np.asarray(raw, dtype=np.float64) - self.mean) / safe, 0.0)


def zscore_fit_transform(raw: np.ndarray, columns: Sequence[str] | None = None) -> FeatureMatrix:
    """Column-wise (x - mean) / sd with the N-1 standard deviation.

    Constant columns map to zero (with a warning).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least 2 rows")
    if not np.all(np.isfinite(raw)):
        raise ValueError("feature matrix contains missing or non-finite values")
    columns = tuple(columns) if columns is not None else tuple(f"x{i}" for i in range(raw.shape[1]))
    mean = raw.mean(axis=0)
    std = raw.std(axis=0, ddof=1)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    for name in np.asarray(columns)[constant]:
        log.warning("constant feature column %r mapped to 0", str(name))
    std = np.where(constant, 0.0, std)
    fm = FeatureMatrix(np.empty(0), columns, mean, std)
    return dataclasses.replace(fm, values=fm.transform(raw))


@dataclasses.dataclass
class ClusterModel:
    method: str
    labels: np.ndarray
    centroids: np.ndarray
    k: int | None = None
    soft_memberships: np.ndarray | None = None
    seed: int | None = None
    params: dict = dataclasses.field(default_factory=dict)
    # objective trace: WCSS per Lloyd step, log-likelihood per EM step, ...
    history: list[float] = dataclasses.field(default_factory=list)
    log_likelihood: float | None = None
    n_params: int | None = None

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.labels[self.labels >= 0]).size)


def _check_k(X: np.ndarray, k: int, low: int = 1) -> None:
    if not low <= k <= X.shape[0]:
        raise ValueError(f"k={k} outside [{low}, {X.shape[0]}]")


def _as_array(X) -> np.ndarray:
    return np.asarray(X.values if isinstance(X, FeatureMatrix) else X, dtype=np.float64)


def cluster_means(X: np.ndarray, labels: np.ndarray, k: int | None = None) -> np.ndarray:
    """Mean vector of each label 0..k-1 (NaN rows for empty clusters)."""
    k = int(labels.max()) + 1 if k is None else k
    out = np.full((k, X.shape[1]), np.nan)
    for j in range(k):
        members = labels == j
        if members.any():
            out[j] = X[members].mean(axis=0)
    return out


def wcss(X: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    mask = labels >= 0
    return float(np.sum((X[mask] - centroids[labels[mask]]) ** 2))


# -- k-means -----------------------------------------------------------------

def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    history = []
    labels = np.zeros(X.shape[0], dtype=int)
    for _ in range(max_iter):
        d2 = cdist(X, centers, "sqeuclidean")
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(X.shape[0]), labels].sum()))
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    d2 = cdist(X, centers, "sqeuclidean")
    labels = np.argmin(d2, axis=1)
    history.append(float(d2[np.arange(X.shape[0]), labels].sum()))
    return labels, centers, history


def fit_kmeans(X, k: int, seed: int, n_init: int = 10, max_iter: int = 300,
               tol: float = 1e-6) -> ClusterModel:
    """Lloyd iterations from k-means++ seeds; the lowest-WCSS of ``n_init`` runs is kept.

    ``history`` holds the WCSS after every assignment step of the kept run.
    An empty cluster keeps its previous centre.
    """
    X = _as_array(X)
    _check_k(X, k)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centers, history = _lloyd(X, kmeans_plus_plus(X, k, rng), max_iter, tol)
        if best is None or history[-1] < best[2][-1]:
            best = (labels, centers, history)
    labels, centers, history = best
    return ClusterModel("kmeans", labels, centers, k=k, seed=seed,
                        params={"n_init": n_init, "max_iter": max_iter, "tol": tol},
                        history=history)


# -- hierarchical (Ward) -------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Dendrogram:
    """Merges in order; leaves are ids 0..n-1, merge ``i`` creates node ``n + i``."""

    merges: list[tuple[int, int, float, int]]
    n_leaves: int

    def to_json(self) -> list[dict]:
        return [{"a": a, "b": b, "height": h, "size": s} for a, b, h, s in self.merges]

    def cut(self, k: int) -> np.ndarray:
        """Labels of the ``k`` clusters left after the first ``n - k`` merges.

        Labels are numbered by first appearance in row order.
        """
        n = self.n_leaves
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside [1, {n}]")
        parent = list(range(2 * n - 1))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, (a, b, _, _) in enumerate(self.merges[: n - k]):
            parent[find(a)] = n + i
            parent[find(b)] = n + i
        roots = [find(i) for i in range(n)]
        ids: dict[int, int] = {}
        return np.array([ids.setdefault(r, len(ids)) for r in roots])


def fit_hac_ward(X) -> Dendrogram:
    """Ward agglomeration on Euclidean distances.

    Heights are Ward merge distances, sqrt(2 * |A||B| / (|A|+|B|)) * ||c_A - c_B||,
    the Lance-Williams Ward recurrence on unsquared distances.
    """
    X = _as_array(X)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    # condensed distances, so a square symmetric feature matrix is never mistaken for one
    Z = hierarchy.linkage(pdist(X), method="ward")
    merges = [(int(a), int(b), float(h), int(s)) for a, b, h, s in Z]
    return Dendrogram(merges, X.shape[0])


def cut(dendrogram: Dendrogram, k: int, X=None) -> ClusterModel:
    labels = dendrogram.cut(k)
    centroids = cluster_means(_as_array(X), labels, k) if X is not None else np.empty((k, 0))
    return ClusterModel("hac_ward", labels, centroids, k=k)


def fit_hac(X, k: int) -> ClusterModel:
    return cut(fit_hac_ward(X), k, X)


# -- Gaussian mixture ----------------------------------------------------------

def gmm_n_params(k: int, d: int) -> int:
    """Free parameters of a full-covariance mixture: means, covariances, weights."""
    return k * d + k * d * (d + 1) // 2 + (k - 1)


def _gaussian_logpdf(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("covariance not positive definite") from exc
    sol = np.linalg.solve(chol, (X - mean).T)
    d = X.shape[1]
    return -0.5 * (d * np.log(2 * np.pi) + np.sum(sol ** 2, axis=0)) - np.sum(np.log(np.diag(chol)))


def _estep(X, weights, means, covs):
    logp = np.column_stack([np.log(w) + _gaussian_logpdf(X, m, c)
                            for w, m, c in zip(weights, means, covs)])
    norm = logsumexp(logp, axis=1)
    return np.exp(logp - norm[:, None]), float(norm.sum())


def _mstep(X, resp, ridge):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = (resp.T @ X) / nk[:, None]
    covs = []
    for j in range(resp.shape[1]):
        diff = X - means[j]
        covs.append((resp[:, j, None] * diff).T @ diff / nk[j] + ridge * np.eye(X.shape[1]))
    return nk / X.shape[0], means, np.array(covs)


def fit_gmm(X, k: int, seed: int, max_iter: int = 200, tol: float = 1e-6,
            ridge: float = GMM_RIDGE) -> ClusterModel:
    """EM for a full-covariance mixture, initialised from seeded k-means labels.

    The diagonal ridge makes the M-step inexact, so a step can lose
    likelihood once a component is nearly degenerate; EM stops there and
    keeps the previous parameters. ``history`` (log-likelihood per accepted
    step) is therefore non-decreasing.
    """
    X = _as_array(X)
    n, d = X.shape
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    init = fit_kmeans(X, k, seed, n_init=1)
    params = _mstep(X, np.eye(k)[init.labels], ridge)
    resp, ll = _estep(X, *params)
    history = [ll]
    for _ in range(max_iter):
        new_params = _mstep(X, resp, ridge)
        new_resp, new_ll = _estep(X, *new_params)
        if new_ll < ll:
            break
        converged = new_ll - ll < tol * max(1.0, abs(new_ll))
        params, resp, ll = new_params, new_resp, new_ll
        history.append(ll)
        if converged:
            break
    weights, means, covs = params
    labels = np.argmax(resp, axis=1)
    return ClusterModel("gmm", labels, means, k=k, soft_memberships=resp, seed=seed,
                        params={"weights": weights, "covariances": covs, "ridge": ridge},
                        history=history, log_likelihood=ll, n_params=gmm_n_params(k, d))


# -- fuzzy c-means -------------------------------------------------------------

def fcm_memberships(X: np.ndarray, centers: np.ndarray, m: float = 2.0) -> np.ndarray:
    """u_ij = 1 / sum_l (d_ij / d_il)^(2/(m-1)); a point on a centre belongs to it fully."""
    d = cdist(X, centers)
    u = np.empty_like(d)
    zero = d == 0
    hit = zero.any(axis=1)
    if hit.any():
        u[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
    rest = ~hit
    if rest.any():
        inv = d[rest] ** (-2.0 / (m - 1))
        u[rest] = inv / inv.sum(axis=1, keepdims=True)
    return u


def fit_fcm(X, k: int, seed: int, m: float = 2.0, max_iter: int = 1000,
            tol: float = 1e-6) -> ClusterModel:
    """Alternating centre/membership updates until memberships move less than ``tol``."""
    X = _as_array(X)
    if k < 2:
        raise ValueError("fcm needs k >= 2")
    _check_k(X, k, 2)
    if m <= 1:
        raise ValueError("fuzzifier must exceed 1")
    rng = np.random.default_rng(seed)
    u = rng.dirichlet(np.ones(k), size=X.shape[0])
    history = []
    for _ in range(max_iter):
        um = u ** m
        centers = (um.T @ X) / um.sum(axis=0)[:, None]
        history.append(float(np.sum(um * cdist(X, centers, "sqeuclidean"))))
        new = fcm_memberships(X, centers, m)
        change = np.max(np.abs(new - u))
        u = new
        if change < tol:
            break
    um = u ** m
    centers = (um.T @ X) / um.sum(axis=0)[:, None]
    return ClusterModel("fcm", np.argmax(u, axis=1), centers, k=k, soft_memberships=u,
                        seed=seed, params={"m": m}, history=history)


# -- DBSCAN --------------------------------------------------------------------

def fit_dbscan(X, eps: float, min_pts: int) -> ClusterModel:
    """Density clustering; ``min_pts`` counts the point itself. Noise is labelled -1.

    Clusters are numbered in order of their first core point by row.
    """
    X = _as_array(X)
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    tree = cKDTree(X)
    neighbors = tree.query_ball_point(X, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(X.shape[0], -1)
    cluster = 0
    for i in range(X.shape[0]):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            p = stack.pop()
            for q in sorted(neighbors[p]):
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        stack.append(q)
        cluster += 1
    centroids = cluster_means(X, labels, cluster) if cluster else np.empty((0, X.shape[1]))
    return ClusterModel("dbscan", labels, centroids, k=None,
                        params={"eps": eps, "min_pts": min_pts})


def fit(method: str, X, k: int | None = None, seed: int | None = None, **params) -> ClusterModel:
    """Dispatch to one of the fitters by name."""
    if method == "kmeans":
        return fit_kmeans(X, k, seed, **params)
    if method == "hac_ward":
        return fit_hac(X, k)
    if method == "gmm":
        return fit_gmm(X, k, seed, **params)
    if method == "fcm":
        return fit_fcm(X, k, seed, **params)
    if method == "dbscan":
        return fit_dbscan(X, **params)
    raise ValueError(f"unknown clustering method {method!r}")


# -- post-hoc ------------------------------------------------------------------

def representative_calls(X, model: ClusterModel, percentile: float = 5.0) -> dict[int, list[tuple[int, float]]]:
    """Per cluster, the rows within the given percentile of distance to the cluster mean.

    Returns ``{cluster: [(row, distance), ...]}`` sorted by distance.
    """
    X = _as_array(X)
    labels = model.labels
    k = model.k if model.k is not None else model.n_clusters
    out = {}
    for j in range(k):
        rows = np.flatnonzero(labels == j)
        if rows.size == 0:
            out[j] = []
            continue
        centre = X[rows].mean(axis=0)
        dist = np.linalg.norm(X[rows] - centre, axis=1)
        cutoff = np.percentile(dist, percentile)
        keep = dist <= cutoff
        order = np.lexsort((rows[keep], dist[keep]))
        out[j] = [(int(r), float(d)) for r, d in zip(rows[keep][order], dist[keep][order])]
    return out


def match_clusters(centroids_a: np.ndarray, centroids_b: np.ndarray) -> list[tuple[int, int, float]]:
    """Minimum-total-distance pairing of two centroid sets (heuristic cross-group correspondence)."""
    cost = cdist(centroids_a, centroids_b)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j), float(cost[i, j])) for i, j in zip(rows, cols)]
