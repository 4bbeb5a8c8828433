"""Lloyd K-means with deterministic tie-breaking and empty-cluster repair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.metrics import normalized_mutual_info_score
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DataError, InfeasibleError
from .io import read_container, write_container

_CHUNK = 4096


@dataclass
class ClusterModel:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    k: int
    seed: int = 0
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)

    def predict(self, points) -> np.ndarray:
        return assign(self, points)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def save(self, path, **meta):
        info = {"k": self.k, "seed": self.seed, "inertia": self.inertia, "n_iter": self.n_iter,
                "assignments": self.assignments.tolist()}
        info.update(meta)
        return write_container(path, self.centers, info)

    @classmethod
    def load(cls, path) -> "ClusterModel":
        centers, meta = read_container(path)
        return cls(centers.astype(np.float64), np.asarray(meta["assignments"], dtype=np.int64),
                   float(meta["inertia"]), int(meta["k"]), int(meta.get("seed", 0)), int(meta.get("n_iter", 0)))


def _sq_distances(X, C):
    """Exact squared distances by explicit differences (keeps ties exact)."""
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], _CHUNK):
        diff = X[s : s + _CHUNK, None, :] - C[None, :, :]
        out[s : s + _CHUNK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _nearest(X, C):
    d2 = _sq_distances(X, C)
    labels = d2.argmin(axis=1)  # first minimum -> lowest center index
    return labels, d2[np.arange(X.shape[0]), labels]


def _repair_empty(X, centers, labels, d2):
    """Give each empty cluster the farthest member of the highest-inertia cluster."""
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    for e in np.flatnonzero(counts == 0):
        cluster_inertia = np.bincount(labels, weights=d2, minlength=k)
        cluster_inertia[counts <= 1] = -1.0
        donor = int(cluster_inertia.argmax())
        members = np.flatnonzero(labels == donor)
        far = int(members[d2[members].argmax()])
        centers[e] = X[far]
        labels[far] = e
        d2[far] = 0.0
        counts[donor] -= 1
        counts[e] = 1
    return centers, labels, d2


def _centroids(X, labels, k, previous):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    out = previous.copy()
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz, None]
    return out


def _lloyd(X, k, rng, max_iter, tol):
    centers = X[rng.choice(X.shape[0], size=k, replace=False)].copy()
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        labels, d2 = _nearest(X, centers)
        centers, labels, d2 = _repair_empty(X, centers, labels, d2)
        history.append(float(d2.sum()))
        new = _centroids(X, labels, k, centers)
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    labels, d2 = _nearest(X, centers)
    if np.bincount(labels, minlength=k).min() == 0:
        # only reachable with duplicate points; keep the repaired labelling
        centers, labels, d2 = _repair_empty(X, centers, labels, d2)
    inertia = float(d2.sum())
    history.append(inertia)
    return centers, labels, inertia, n_iter, history


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-4, n_init: int = 1) -> ClusterModel:
    """Cluster ``points`` into ``k`` groups, keeping the best of ``n_init`` restarts.

    Each restart seeds its centers with ``k`` points drawn uniformly without
    replacement. Iteration stops once no center moves by ``tol`` or more.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"points must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("points contain non-finite values")
    k = int(k)
    if k < 1 or X.shape[0] < k:
        raise InfeasibleError(f"cannot form {k} clusters from {X.shape[0]} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        result = _lloyd(X, k, rng, max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    centers, labels, inertia, n_iter, history = best
    return ClusterModel(centers, labels.astype(np.int64), inertia, k, seed, n_iter, history)


def assign(model: ClusterModel, points) -> np.ndarray:
    """Nearest-center labels (lowest index wins ties); the model is not modified."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.centers.shape[1]:
        raise DataError(f"expected points with {model.centers.shape[1]} columns, got shape {X.shape}")
    return _nearest(X, model.centers)[0].astype(np.int64)


def nmi(labels_a, labels_b) -> float:
    """Normalised mutual information, arithmetic-mean normalisation."""
    a, b = np.asarray(labels_a).ravel(), np.asarray(labels_b).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("NMI of empty labelings is undefined")
    if a.size != b.size:
        raise DataError(f"labelings differ in length: {a.size} vs {b.size}")
    return float(normalized_mutual_info_score(a, b, average_method="arithmetic"))


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters=8, max_iter=100, tol=1e-4, n_init=1, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.tol = tol
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.model_ = kmeans(X, self.n_clusters, seed=self.random_state, max_iter=self.max_iter,
                             tol=self.tol, n_init=self.n_init)
        self.cluster_centers_ = self.model_.centers
        self.labels_ = self.model_.assignments
        self.inertia_ = self.model_.inertia
        self.n_iter_ = self.model_.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return assign(self.model_, X)
