"""Descriptor extraction, flattening, PCA with EVR-based dimension selection,
and L2 normalisation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.extmath import randomized_svd, svd_flip
from sklearn.utils.validation import check_array, check_is_fitted

from .data import TileCorpus
from .errors import ConfigError, DataError, ZeroVarianceError
from .io import read_container, write_container

log = logging.getLogger(__name__)

EXACT_SVD_LIMIT = 2**26


@dataclass
class FeatureSet:
    descriptors: np.ndarray
    source: str
    epoch_tag: int = 0

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors)
        if self.descriptors.ndim != 2:
            raise DataError(f"descriptors must be 2-D, got shape {self.descriptors.shape}")
        if not np.all(np.isfinite(self.descriptors)):
            raise DataError("descriptors contain non-finite values")

    def __len__(self):
        return self.descriptors.shape[0]

    def save(self, path, **meta):
        return write_container(path, self.descriptors, {"source": self.source, "epoch_tag": self.epoch_tag, **meta})

    @classmethod
    def load(cls, path) -> "FeatureSet":
        arr, meta = read_container(path)
        return cls(arr, meta.get("source", "unknown"), int(meta.get("epoch_tag", 0)))


def _tile_array(tiles) -> np.ndarray:
    if isinstance(tiles, TileCorpus):
        return tiles.pixels
    arr = np.asarray(tiles, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"tiles must have shape (N, W, W), got {arr.shape}")
    return arr


def upscale(tile, target: int) -> np.ndarray:
    """Bilinear upscaling of one ``(W, W)`` tile or a ``(N, W, W)`` stack."""
    arr = np.asarray(tile, dtype=np.float32)
    single = arr.ndim == 2
    stack = arr[None] if single else arr
    W = stack.shape[-1]
    if target < W:
        raise ConfigError(f"upscale target {target} is smaller than tile size {W}; downscaling is unsupported")
    if target == W:
        return arr.copy()
    out = _upscale_tensor(torch.from_numpy(np.ascontiguousarray(stack))[:, None], target)[:, 0].numpy()
    return out[0] if single else out


def _upscale_tensor(x: torch.Tensor, target: int) -> torch.Tensor:
    return F.interpolate(x, size=(target, target), mode="bilinear", align_corners=False).clamp_(0.0, 1.0)


def flatten(tiles) -> FeatureSet:
    arr = _tile_array(tiles)
    return FeatureSet(arr.reshape(arr.shape[0], -1).copy(), source="flatten")


@torch.no_grad()
def extract_features(network, tiles, batch_size: int = 256, epoch_tag: int = 0, resize: bool = False) -> FeatureSet:
    """Pooled conv descriptors for every tile, computed in inference mode.

    Normalisation layers use their stored running statistics. With
    ``resize`` tiles smaller than the network input are upscaled batch by
    batch; otherwise a size mismatch is an error.
    """
    arr = _tile_array(tiles)
    size = network.config.input_size
    W = arr.shape[-1]
    if W != size and not (resize and W < size):
        raise DataError(f"tile size {W} does not match network input size {size}")
    was_training = network.training
    network.eval()
    out = np.empty((arr.shape[0], network.config.descriptor_dim), dtype=np.float32)
    try:
        for start in range(0, arr.shape[0], batch_size):
            x = torch.from_numpy(np.ascontiguousarray(arr[start : start + batch_size]))[:, None]
            if W != size:
                x = _upscale_tensor(x, size)
            out[start : start + x.shape[0]] = network.descriptors(x).numpy()
    finally:
        network.train(was_training)
    return FeatureSet(out, source=f"cnn_{network.config.variant}", epoch_tag=epoch_tag)


class PCAReducer(TransformerMixin, BaseEstimator):
    """Mean-centred PCA whose dimension is fixed or chosen by cumulative EVR.

    With ``n_components`` set, exactly that many components are kept.
    Otherwise the smallest D whose cumulative explained variance ratio
    reaches ``evr_threshold`` is used, optionally capped by
    ``max_components``.

    Attributes after ``fit``: ``mean_``, ``components_`` (D x F, orthonormal
    rows), ``explained_variance_``, ``explained_variance_ratio_``,
    ``n_components_``, ``cumulative_evr_`` (over every computed component,
    for EVR curves) and ``solver_``.
    """

    def __init__(self, evr_threshold=0.9, n_components=None, max_components=None,
                 svd_solver="auto", random_state=0):
        self.evr_threshold = evr_threshold
        self.n_components = n_components
        self.max_components = max_components
        self.svd_solver = svd_solver
        self.random_state = random_state

    def _check_params(self, n, f):
        if n < 2:
            raise DataError(f"PCA needs at least 2 samples, got {n}")
        if self.n_components is not None:
            d = int(self.n_components)
            if not 1 <= d <= min(n - 1, f):
                raise ConfigError(f"n_components={d} must be in [1, min(N-1, F)] = [1, {min(n - 1, f)}]")
        elif not (self.evr_threshold is not None and 0 < self.evr_threshold <= 1):
            raise ConfigError(f"evr_threshold must be in (0, 1], got {self.evr_threshold}")
        if self.max_components is not None and self.max_components < 1:
            raise ConfigError("max_components must be >= 1")

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, f = X.shape
        self._check_params(n, f)
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        total = float(np.einsum("ij,ij->", Xc, Xc)) / (n - 1)
        if total <= 0 and self.n_components is None:
            raise ZeroVarianceError("all samples are identical; explained variance ratio is undefined")

        solver = self.svd_solver
        if solver == "auto":
            solver = "full" if n * f <= EXACT_SVD_LIMIT else "randomized"
        if solver == "full":
            U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
        elif solver == "randomized":
            U, S, Vt = self._randomized(Xc, total, n, f)
        else:
            raise ConfigError(f"unknown svd_solver {self.svd_solver!r}")
        U, Vt = svd_flip(U, Vt)
        var = S**2 / (n - 1)
        evr = var / total if total > 0 else np.zeros_like(var)
        cum = np.cumsum(evr)

        if self.n_components is not None:
            d = int(self.n_components)
        else:
            # tolerance guards against the cumulative sum landing a hair below t
            reached = np.flatnonzero(cum >= self.evr_threshold - 1e-12)
            d = int(reached[0]) + 1 if reached.size else len(cum)
            if self.max_components is not None:
                d = min(d, int(self.max_components))
        d = min(d, Vt.shape[0])

        self.solver_ = solver
        self.components_ = Vt[:d]
        self.explained_variance_ = var[:d]
        self.explained_variance_ratio_ = evr[:d]
        self.cumulative_evr_ = cum
        self.total_variance_ = total
        self.n_components_ = d
        self.n_features_in_ = f
        return self

    def _randomized(self, Xc, total, n, f):
        limit = min(n, f)
        k = min(limit, self.n_components or self.max_components or 64)
        while True:
            U, S, Vt = randomized_svd(Xc, n_components=k, random_state=self.random_state)
            if self.n_components is not None or k >= limit:
                return U, S, Vt
            cum = np.cumsum(S**2 / (n - 1)) / total
            if cum[-1] >= self.evr_threshold or (self.max_components and k >= self.max_components):
                return U, S, Vt
            k = min(limit, 2 * k)

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got shape {X.shape}")
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z) @ self.components_ + self.mean_

    def save(self, path, **meta):
        check_is_fitted(self, "components_")
        payload = np.vstack([self.mean_[None], self.components_])
        info = {
            "D": self.n_components_,
            "evr": self.explained_variance_ratio_.tolist(),
            "cumulative_evr": self.cumulative_evr_.tolist(),
            "explained_variance": self.explained_variance_.tolist(),
            "params": self.get_params(),
        }
        info.update(meta)
        return write_container(path, payload, info)

    @classmethod
    def load(cls, path) -> "PCAReducer":
        payload, meta = read_container(path)
        model = cls(**meta.get("params", {}))
        model.mean_ = payload[0].astype(np.float64)
        model.components_ = payload[1:].astype(np.float64)
        model.explained_variance_ratio_ = np.asarray(meta["evr"])
        model.explained_variance_ = np.asarray(meta.get("explained_variance", []))
        model.cumulative_evr_ = np.asarray(meta.get("cumulative_evr", []))
        model.n_components_ = int(meta["D"])
        model.n_features_in_ = payload.shape[1]
        return model


def fit_pca(features, evr_threshold=None, fixed_d=None, max_components=None, random_state=0) -> PCAReducer:
    """Fit PCA with either ``evr_threshold`` or ``fixed_d`` (exactly one)."""
    if (evr_threshold is None) == (fixed_d is None):
        raise ConfigError("give exactly one of evr_threshold or fixed_d")
    X = features.descriptors if isinstance(features, FeatureSet) else features
    return PCAReducer(
        evr_threshold=evr_threshold, n_components=fixed_d,
        max_components=max_components, random_state=random_state,
    ).fit(X)


def transform_pca(model: PCAReducer, features) -> np.ndarray:
    X = features.descriptors if isinstance(features, FeatureSet) else features
    return model.transform(X)


def l2_normalize(vectors, return_zero_count=False):
    """Scale each row to unit Euclidean norm; zero rows pass through unchanged."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    out = X.copy()
    out[~zero] /= norms[~zero, None]
    n_zero = int(zero.sum())
    if n_zero:
        warnings.warn(f"{n_zero} zero vector(s) left unnormalised", RuntimeWarning, stacklevel=2)
    if return_zero_count:
        return out, n_zero
    return out
