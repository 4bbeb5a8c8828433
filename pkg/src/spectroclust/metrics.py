"""Clusterability and internal cluster-validation metrics.

Hopkins statistic, VAT/iVAT reordering, Silhouette (macro and sample
averages), Davies-Bouldin, and a sweep over the number of clusters.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cluster import kmeans
from .errors import ConfigError, DataError, DegenerateDataError

log = logging.getLogger(__name__)

METRICS = ("hopkins", "silhouette", "davies_bouldin")


class ClusterMetricWarning(UserWarning):
    pass


def _points(points):
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"points must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("points contain non-finite values")
    return X


def _labels(labels, n):
    labels = np.asarray(labels).ravel()
    if labels.size != n:
        raise DataError(f"{labels.size} labels for {n} points")
    uniq, inv = np.unique(labels, return_inverse=True)
    return uniq, inv


def pairwise_distances(points) -> np.ndarray:
    X = _points(points)
    d = cdist(X, X)
    np.fill_diagonal(d, 0.0)
    return d


def default_hopkins_m(n: int) -> int:
    return max(1, min(int(0.05 * n), 500))


def hopkins(points, m: int | None = None, seed: int = 0) -> float:
    """Hopkins statistic, oriented so that ~0.5 is uniform and ~1 is clustered.

    ``m`` real points are sampled without replacement and ``m`` synthetic
    points are drawn uniformly in the data's bounding box; the score is
    ``sum(u) / (sum(u) + sum(w))`` where ``u`` are synthetic-to-data
    nearest-neighbour distances and ``w`` real-to-other-real distances.
    """
    X = _points(points)
    n = X.shape[0]
    m = default_hopkins_m(n) if m is None else int(m)
    if m < 1 or n < 2 * m:
        raise ConfigError(f"Hopkins sample size m={m} needs 1 <= m <= N/2 (N={n})")
    lo, hi = X.min(axis=0), X.max(axis=0)
    if np.all(hi == lo):
        raise DegenerateDataError("all points are identical; the bounding box has zero volume")
    rng = np.random.default_rng(seed)
    sample = X[rng.choice(n, size=m, replace=False)]
    synthetic = rng.uniform(lo, hi, size=(m, X.shape[1]))
    tree = cKDTree(X)
    u = tree.query(synthetic, k=1)[0]
    w = tree.query(sample, k=2)[0][:, 1]
    su, sw = float(u.sum()), float(w.sum())
    if su + sw == 0:
        return 0.5
    return su / (su + sw)


@dataclass
class VATResult:
    permutation: np.ndarray
    ordered: np.ndarray
    mode: str


def _dissimilarity(d, tol=1e-9):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataError(f"dissimilarity matrix must be square, got {d.shape}")
    scale = max(1.0, float(np.abs(d).max())) if d.size else 1.0
    if np.any(np.abs(d - d.T) > tol * scale) or np.any(np.abs(np.diag(d)) > tol * scale) or np.any(d < 0):
        raise DataError("dissimilarity matrix must be symmetric, non-negative, with zero diagonal")
    return d


def vat_order(d) -> VATResult:
    """Prim-style VAT ordering starting from an endpoint of the largest distance."""
    d = _dissimilarity(d)
    n = d.shape[0]
    if n == 0:
        return VATResult(np.zeros(0, dtype=np.int64), d.copy(), "vat")
    start = int(np.unravel_index(np.argmax(d), d.shape)[0])
    order = [start]
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    best = d[start].copy()
    best[visited] = np.inf
    for _ in range(n - 1):
        nxt = int(np.argmin(best))  # first minimum -> lowest index
        order.append(nxt)
        visited[nxt] = True
        best = np.minimum(best, d[nxt])
        best[visited] = np.inf
    perm = np.asarray(order, dtype=np.int64)
    return VATResult(perm, d[np.ix_(perm, perm)], "vat")


def ivat(d) -> VATResult:
    """VAT ordering followed by the minimax-path (iVAT) transform."""
    vat = vat_order(d)
    D = vat.ordered
    n = D.shape[0]
    out = np.zeros_like(D)
    for r in range(1, n):
        j = int(np.argmin(D[r, :r]))
        row = np.maximum(D[r, j], out[j, :r])
        row[j] = D[r, j]
        out[r, :r] = row
        out[:r, r] = row
    return VATResult(vat.permutation, out, "ivat")


@dataclass
class SilhouetteResult:
    per_sample: np.ndarray
    per_cluster: np.ndarray
    cluster_ids: np.ndarray
    overall: float
    sample_mean: float


def _cluster_distance_sums(X, inv, k, chunk=2048):
    sums = np.empty((X.shape[0], k))
    onehot = np.zeros((X.shape[0], k))
    onehot[np.arange(X.shape[0]), inv] = 1.0
    for s in range(0, X.shape[0], chunk):
        sums[s : s + chunk] = cdist(X[s : s + chunk], X) @ onehot
    return sums


def silhouette(points, labels) -> SilhouetteResult:
    """Silhouette values; ``overall`` is the unweighted mean of cluster means.

    Singleton members and points with ``a = b = 0`` score 0.
    """
    X = _points(points)
    uniq, inv = _labels(labels, X.shape[0])
    k = uniq.size
    if k < 2:
        raise DataError("silhouette needs at least 2 clusters")
    counts = np.bincount(inv, minlength=k)
    sums = _cluster_distance_sums(X, inv, k)
    idx = np.arange(X.shape[0])
    own = counts[inv]
    a = np.where(own > 1, sums[idx, inv] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts[None, :]
    means[idx, inv] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own == 1] = 0.0
    per_cluster = np.bincount(inv, weights=s, minlength=k) / counts
    return SilhouetteResult(s, per_cluster, uniq, float(per_cluster.mean()), float(s.mean()))


def davies_bouldin(points, labels) -> float:
    """Mean over clusters of the worst ``(S_i + S_j) / M_ij`` ratio.

    Coincident centroids give an infinite score and a ``ClusterMetricWarning``.
    """
    X = _points(points)
    uniq, inv = _labels(labels, X.shape[0])
    k = uniq.size
    if k < 2:
        raise DataError("Davies-Bouldin needs at least 2 clusters")
    counts = np.bincount(inv, minlength=k)
    centroids = np.zeros((k, X.shape[1]))
    np.add.at(centroids, inv, X)
    centroids /= counts[:, None]
    spread = np.bincount(inv, weights=np.linalg.norm(X - centroids[inv], axis=1), minlength=k) / counts
    sep = cdist(centroids, centroids)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (spread[:, None] + spread[None, :]) / sep
    coincident = (sep == 0) & ~np.eye(k, dtype=bool)
    ratio[coincident] = np.inf
    np.fill_diagonal(ratio, -np.inf)
    if coincident.any():
        pairs = [(uniq[i].item(), uniq[j].item()) for i, j in zip(*np.nonzero(np.triu(coincident)))]
        warnings.warn(f"coincident cluster centroids {pairs}; Davies-Bouldin is infinite",
                      ClusterMetricWarning, stacklevel=2)
    return float(ratio.max(axis=1).mean())


def _sweep_one(k, model_factory, X, metrics, seed, hopkins_m):
    if callable(model_factory):
        est = model_factory(k, seed)
        est.fit(X)
        z, labels = est.features_, est.labels_
    else:
        z = np.asarray(model_factory, dtype=np.float64)
        labels = kmeans(z, k, seed=seed, n_init=10).assignments
    row = {"k": int(k)}
    if "hopkins" in metrics:
        row["hopkins"] = hopkins(z, m=hopkins_m, seed=seed + int(k))
    if "silhouette" in metrics:
        sil = silhouette(z, labels)
        row["silhouette"] = sil.overall
        row["silhouette_sample_mean"] = sil.sample_mean
    if "davies_bouldin" in metrics:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ClusterMetricWarning)
            row["davies_bouldin"] = davies_bouldin(z, labels)
    return row


def sweep_k(model, X=None, k_range: Iterable[int] = range(2, 31), metrics=METRICS, seed: int = 0,
            hopkins_m: int | None = None, n_jobs: int = 1) -> dict:
    """Evaluate clusterings for each k.

    ``model`` is either a factory ``(k, seed) -> estimator`` whose fitted
    estimator exposes ``features_`` and ``labels_`` (the model is retrained
    per k on ``X``), or a fixed feature matrix that is re-clustered with
    K-means per k. Returns a dict of equally long lists keyed by metric.
    """
    metrics = tuple(metrics)
    bad = set(metrics) - set(METRICS)
    if bad:
        raise ConfigError(f"unknown metrics {sorted(bad)}; choose from {METRICS}")
    ks = [int(k) for k in k_range]
    if not ks or min(ks) < 2:
        raise ConfigError("k_range must be non-empty with every k >= 2")
    if n_jobs == 1:
        rows = [_sweep_one(k, model, X, metrics, seed, hopkins_m) for k in ks]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_sweep_one)(k, model, X, metrics, seed, hopkins_m) for k in ks)
    curves = {"k": ks}
    for key in rows[0]:
        if key != "k":
            curves[key] = [r[key] for r in rows]
    return curves
