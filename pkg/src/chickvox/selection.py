"""Cluster validity indices and the K grid search."""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.spatial.distance import cdist

from . import clustering
from .clustering import ClusterModel, cluster_means

GRID_COLUMNS = ("method", "k", "silhouette", "chi", "wcss", "fpc", "aic", "bic")


@dataclasses.dataclass(frozen=True)
class ValidityReport:
    method: str
    k: int
    silhouette: float | None = None
    chi: float | None = None
    wcss: float | None = None
    fpc: float | None = None
    aic: float | None = None
    bic: float | None = None

    def row(self) -> dict:
        return {c: getattr(self, c) for c in GRID_COLUMNS}


def silhouette(X: np.ndarray, labels: np.ndarray, chunk: int = 2048) -> float | None:
    """Mean of (b - a) / max(a, b) over non-noise points; singleton clusters score 0.

    ``None`` when fewer than 2 clusters (or fewer than 2 non-noise points) remain.
    """
    X = np.asarray(X, dtype=np.float64)
    mask = labels >= 0
    X, labels = X[mask], labels[mask]
    uniq, inv = np.unique(labels, return_inverse=True)
    k = uniq.size
    if k < 2:
        return None
    counts = np.bincount(inv, minlength=k).astype(np.float64)
    onehot = np.eye(k)[inv]
    s = np.empty(X.shape[0])
    for i in range(0, X.shape[0], chunk):
        sums = cdist(X[i:i + chunk], X) @ onehot  # distance sums to each cluster
        own = inv[i:i + chunk]
        rows = np.arange(own.size)
        own_n = counts[own]
        a = np.where(own_n > 1, sums[rows, own] / np.maximum(own_n - 1, 1), 0.0)
        means = sums / counts
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            si = np.where(denom > 0, (b - a) / denom, 0.0)
        s[i:i + chunk] = np.where(own_n > 1, si, 0.0)
    return float(s.mean())


def calinski_harabasz(X: np.ndarray, labels: np.ndarray) -> float | None:
    """(B / (k - 1)) / (W / (n - k)) over non-noise points."""
    X = np.asarray(X, dtype=np.float64)
    mask = labels >= 0
    X, labels = X[mask], labels[mask]
    uniq, inv = np.unique(labels, return_inverse=True)
    k, n = uniq.size, X.shape[0]
    if k < 2 or n <= k:
        return None
    centres = cluster_means(X, inv, k)
    counts = np.bincount(inv, minlength=k)
    grand = X.mean(axis=0)
    between = float(np.sum(counts * np.sum((centres - grand) ** 2, axis=1)))
    within = float(np.sum((X - centres[inv]) ** 2))
    if within == 0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def within_cluster_ss(X: np.ndarray, labels: np.ndarray) -> float:
    """Squared distances to the mean of each hard cluster, noise excluded."""
    X = np.asarray(X, dtype=np.float64)
    mask = labels >= 0
    if not mask.any():
        return 0.0
    X, labels = X[mask], labels[mask]
    _, inv = np.unique(labels, return_inverse=True)
    centres = cluster_means(X, inv)
    return float(np.sum((X - centres[inv]) ** 2))


def fuzzy_partition_coefficient(u: np.ndarray) -> float:
    return float(np.sum(u ** 2) / u.shape[0])


def aic(log_likelihood: float, n_params: int) -> float:
    return 2 * n_params - 2 * log_likelihood


def bic(log_likelihood: float, n_params: int, n: int) -> float:
    return n_params * math.log(n) - 2 * log_likelihood


def validity_metrics(X, model: ClusterModel) -> ValidityReport:
    X = clustering._as_array(X)
    labels = model.labels
    k = model.k if model.k is not None else model.n_clusters
    rep = dict(method=model.method, k=k, silhouette=silhouette(X, labels),
               chi=calinski_harabasz(X, labels), wcss=within_cluster_ss(X, labels))
    if model.method == "fcm" and model.soft_memberships is not None:
        rep["fpc"] = fuzzy_partition_coefficient(model.soft_memberships)
    if model.method == "gmm" and model.log_likelihood is not None:
        rep["aic"] = aic(model.log_likelihood, model.n_params)
        rep["bic"] = bic(model.log_likelihood, model.n_params, X.shape[0])
    return ValidityReport(**rep)


def _single_cluster_report(X: np.ndarray, method: str, seed: int) -> ValidityReport:
    # K = 1 only feeds the elbow (WCSS) and the information criteria
    rep = dict(method=method, k=1, wcss=float(np.sum((X - X.mean(axis=0)) ** 2)))
    if method == "gmm":
        model = clustering.fit_gmm(X, 1, seed)
        rep["aic"] = aic(model.log_likelihood, model.n_params)
        rep["bic"] = bic(model.log_likelihood, model.n_params, X.shape[0])
    elif method == "fcm":
        rep["fpc"] = 1.0
    return ValidityReport(**rep)


def elbow_k(ks: Sequence[int], wcss_values: Sequence[float]) -> int | None:
    """K whose (K, WCSS) point lies farthest from the chord joining the first and last points."""
    ks = np.asarray(ks, dtype=np.float64)
    w = np.asarray(wcss_values, dtype=np.float64)
    if ks.size < 3:
        return None
    # scale both axes to [0, 1] so the distance is unit-free
    kx = (ks - ks[0]) / (ks[-1] - ks[0])
    span = w.max() - w.min()
    wy = (w - w.min()) / span if span > 0 else np.zeros_like(w)
    p0, p1 = np.array([kx[0], wy[0]]), np.array([kx[-1], wy[-1]])
    direction = (p1 - p0) / np.linalg.norm(p1 - p0)
    rel = np.column_stack([kx, wy]) - p0
    dist = np.abs(rel[:, 0] * direction[1] - rel[:, 1] * direction[0])
    return int(ks[int(np.argmax(dist))])


@dataclasses.dataclass
class GridResult:
    reports: list[ValidityReport]
    recommended: dict[str, dict[str, int | None]]
    models: dict[tuple[str, int], ClusterModel]

    def rows(self) -> list[dict]:
        return [r.row() for r in self.reports]


def _best(reports: list[ValidityReport], attr: str, sign: int) -> int | None:
    vals = [(getattr(r, attr), r.k) for r in reports if getattr(r, attr) is not None]
    if not vals:
        return None
    # earliest K wins ties
    return max(vals, key=lambda v: (sign * v[0], -v[1]))[1]


def grid_search(X, methods: Sequence[str] = ("kmeans", "hac_ward"), k_range: Sequence[int] = range(2, 11),
                seed: int = 0, dbscan: dict | None = None, include_k1: bool = True,
                workers: int = 1) -> GridResult:
    """Fit every (method, K) cell and report per-metric recommended K.

    Recommendations: argmax silhouette and CHI, argmin AIC and BIC, and the
    WCSS elbow (K = 1 included in the elbow when ``include_k1``). DBSCAN is
    not parameterised by K; with ``dbscan={"eps": .., "min_pts": ..}`` it
    contributes one row at the K it finds.
    """
    X = clustering._as_array(X)
    n = X.shape[0]
    ks = [k for k in k_range if 2 <= k <= n - 1]
    hac = None
    if "hac_ward" in methods:
        hac = clustering.fit_hac_ward(X)

    def run(cell):
        method, k = cell
        if method == "hac_ward":
            return clustering.cut(hac, k, X)
        return clustering.fit(method, X, k, seed)

    cells = [(m, k) for m in methods if m != "dbscan" for k in ks]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        fitted = list(pool.map(run, cells))
    models = dict(zip(cells, fitted))

    reports, recommended = [], {}
    for method in methods:
        if method == "dbscan":
            if dbscan is None:
                continue
            model = clustering.fit_dbscan(X, **dbscan)
            models[("dbscan", model.n_clusters)] = model
            reports.append(validity_metrics(X, model))
            continue
        rows = [validity_metrics(X, models[(method, k)]) for k in ks]
        if include_k1:
            rows.insert(0, _single_cluster_report(X, method, seed))
        reports.extend(rows)
        recommended[method] = {
            "silhouette": _best(rows, "silhouette", +1),
            "chi": _best(rows, "chi", +1),
            "wcss_elbow": elbow_k([r.k for r in rows], [r.wcss for r in rows]),
            "fpc": _best([r for r in rows if r.k >= 2], "fpc", +1),
            "aic": _best(rows, "aic", -1),
            "bic": _best(rows, "bic", -1),
        }
    return GridResult(reports, recommended, models)
