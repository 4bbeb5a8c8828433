"""Self-supervised deep clustering and the PCA + K-means baseline.

Each training epoch alternates two branches:

1. unsupervised: descriptors (eval mode) -> PCA -> L2 -> K-means pseudo-labels
2. supervised: reset the last classifier layer, then one pass of
   cross-entropy training against the pseudo-labels
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .cluster import ClusterModel, assign, kmeans, nmi
from .data import TileCorpus
from .errors import ConfigError, DataError, InfeasibleError, NumericalError
from .features import PCAReducer, _tile_array, extract_features, fit_pca, flatten, l2_normalize, _upscale_tensor
from .io import read_container, read_json, write_container, write_json, write_jsonl
from .networks import NetworkConfig, SpectrogramNet, build_network

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"RN": 200, "VGG": 30, "TOY": 30}
VGG_INPUT = 224


@dataclass
class EpochRecord:
    epoch: int
    cross_entropy_loss: float
    inertia: float
    pseudo_label_nmi_vs_prev: float | None
    cluster_size_histogram: list
    pca_components: int = 0
    zero_vectors: int = 0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.cross_entropy_loss for r in self.records])

    def to_records(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    def save(self, path):
        return write_jsonl(path, self.to_records())


@dataclass
class Seeds:
    weights: int = 0
    kmeans: int = 1
    shuffle: int = 2

    @classmethod
    def from_base(cls, seed: int) -> "Seeds":
        return cls(weights=seed, kmeans=seed + 7919, shuffle=seed + 104729)


@dataclass
class SSLRunConfig:
    k: int = 6
    variant: str = "TOY"
    epochs: int | None = None
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_milestones: tuple = ()
    lr_gamma: float = 0.1
    batch_size: int = 256
    extract_batch_size: int = 256
    evr_threshold: float | None = None
    n_components: int | None = 20
    max_components: int | None = 20
    descriptor_dim: int = 64
    toy_width: int = 16
    input_size: int | None = None
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    kmeans_n_init: int = 1
    final_pass: bool = True
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        if isinstance(self.seeds, dict):
            self.seeds = Seeds(**self.seeds)
        self.variant = str(self.variant).upper()
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS.get(self.variant, 30)
        self.lr_milestones = tuple(self.lr_milestones)

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.k < 2:
            raise InfeasibleError(f"pseudo-labelling needs k >= 2 clusters, got k={self.k}", epoch=1)
        if self.k > 30:
            raise ConfigError(f"k must be in [2, 30], got {self.k}")
        if self.batch_size < 1 or self.extract_batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if (self.evr_threshold is None) == (self.n_components is None):
            raise ConfigError("give exactly one of evr_threshold or n_components")
        return self

    def network_config(self, tile_size: int) -> NetworkConfig:
        size = self.input_size or (max(VGG_INPUT, tile_size) if self.variant == "VGG" else tile_size)
        cfg = NetworkConfig(variant=self.variant, input_size=size, num_classes=self.k,
                            descriptor_dim=self.descriptor_dim, toy_width=self.toy_width, seed=self.seeds.weights)
        dims = self.n_components or self.max_components
        if dims is not None and cfg.descriptor_dim < dims:
            raise ConfigError(f"descriptor_dim {cfg.descriptor_dim} is smaller than the PCA dimension {dims}")
        return cfg

    def to_dict(self):
        return asdict(self)


class SSLResult(NamedTuple):
    network: SpectrogramNet
    pca: PCAReducer
    clusters: ClusterModel
    history: TrainHistory
    features: np.ndarray


def _check_scaled(arr):
    if not np.all(np.isfinite(arr)):
        raise DataError("tiles contain non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DataError("tiles must be scaled to [0, 1] before training")


def _process(pca_params, descriptors, seed):
    pca = PCAReducer(random_state=seed, **pca_params).fit(descriptors)
    z, n_zero = l2_normalize(pca.transform(descriptors), return_zero_count=True)
    return pca, z, n_zero


def _reset_norm_statistics(network: nn.Module):
    """Restart running statistics so they average over the coming epoch only."""
    for m in network.modules():
        if isinstance(m, nn.modules.batchnorm._BatchNorm):
            m.reset_running_stats()
            m.momentum = None


def classifier_epoch(network: SpectrogramNet, tiles, pseudo_labels, optimizers, batch_size=256,
                     generator: torch.Generator | None = None, reset_norm_stats=True) -> float:
    """One shuffled training pass on pseudo-labels; returns mean per-sample cross-entropy."""
    arr = _tile_array(tiles)
    labels = np.asarray(pseudo_labels, dtype=np.int64)
    k = network.config.num_classes
    if labels.shape != (arr.shape[0],):
        raise DataError(f"{labels.size} pseudo-labels for {arr.shape[0]} tiles")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"pseudo-labels must lie in [0, {k})")
    if isinstance(optimizers, torch.optim.Optimizer):
        optimizers = [optimizers]
    size = network.config.input_size
    if reset_norm_stats:
        _reset_norm_statistics(network)
    network.train()
    criterion = nn.CrossEntropyLoss(reduction="sum")
    order = torch.randperm(arr.shape[0], generator=generator).numpy()
    y_all = torch.from_numpy(labels)
    total = 0.0
    for start in range(0, arr.shape[0], batch_size):
        idx = order[start : start + batch_size]
        x = torch.from_numpy(np.ascontiguousarray(arr[idx]))[:, None]
        if x.shape[-1] != size:
            x = _upscale_tensor(x, size)
        loss = criterion(network(x), y_all[idx])
        for opt in optimizers:
            opt.zero_grad(set_to_none=True)
        (loss / len(idx)).backward()
        for opt in optimizers:
            opt.step()
        total += float(loss.detach())
    return total / max(1, arr.shape[0])


def _optimizer(params, cfg: SSLRunConfig, lr=None):
    return torch.optim.SGD(params, lr=cfg.lr if lr is None else lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def _lr_at(cfg: SSLRunConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_gamma ** sum(1 for m in cfg.lr_milestones if epoch > m)


def train_ssl(corpus, config: SSLRunConfig, callback=None) -> SSLResult:
    """Run the alternating self-supervised loop for ``config.epochs`` epochs.

    With ``config.final_pass`` the unsupervised branch runs once more after
    the last update so the returned PCA/clusters describe the returned
    network; otherwise they come from the start of the final epoch.
    """
    cfg = config.validate()
    arr = _tile_array(corpus)
    _check_scaled(arr)
    if arr.shape[0] < cfg.k:
        raise InfeasibleError(f"cannot form {cfg.k} clusters from {arr.shape[0]} tiles", epoch=1)
    net_cfg = cfg.network_config(arr.shape[-1])
    resize = arr.shape[-1] != net_cfg.input_size
    network = build_network(net_cfg)
    pca_params = dict(evr_threshold=cfg.evr_threshold if cfg.n_components is None else None,
                      n_components=cfg.n_components, max_components=cfg.max_components)
    body_opt = _optimizer(network.body_parameters(), cfg)
    gen = torch.Generator().manual_seed(cfg.seeds.shuffle)
    history = TrainHistory()
    prev = None

    def unsupervised(epoch):
        feats = extract_features(network, arr, cfg.extract_batch_size, epoch_tag=epoch, resize=resize)
        pca, z, n_zero = _process(pca_params, feats.descriptors, cfg.seeds.kmeans + epoch)
        try:
            clusters = kmeans(z, cfg.k, seed=cfg.seeds.kmeans + epoch, max_iter=cfg.kmeans_max_iter,
                              tol=cfg.kmeans_tol, n_init=cfg.kmeans_n_init)
        except InfeasibleError as exc:
            raise InfeasibleError(str(exc), epoch=epoch) from None
        return pca, z, n_zero, clusters

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        pca, z, n_zero, clusters = unsupervised(epoch)
        lr = _lr_at(cfg, epoch)
        for group in body_opt.param_groups:
            group["lr"] = lr
        network.reset_final_layer(seed=cfg.seeds.weights * 1_000_003 + epoch)
        head_opt = _optimizer(network.final_layer.parameters(), cfg, lr=lr)
        opts = [body_opt, head_opt]
        loss = classifier_epoch(network, arr, clusters.assignments, opts, cfg.batch_size, gen)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        rec = EpochRecord(
            epoch=epoch,
            cross_entropy_loss=loss,
            inertia=clusters.inertia,
            pseudo_label_nmi_vs_prev=None if prev is None else nmi(prev, clusters.assignments),
            cluster_size_histogram=clusters.sizes().tolist(),
            pca_components=pca.n_components_,
            zero_vectors=n_zero,
        )
        history.records.append(rec)
        prev = clusters.assignments
        log.info("epoch %d loss %.4f inertia %.3f nmi_prev %s (%.1fs)", epoch, loss, clusters.inertia,
                 rec.pseudo_label_nmi_vs_prev, time.perf_counter() - t0)
        if callback is not None:
            callback(rec, network)

    if cfg.final_pass:
        pca, z, _, clusters = unsupervised(cfg.epochs + 1)
    network.eval()
    return SSLResult(network, pca, clusters, history, z)


def train_baseline(corpus, k: int, evr_threshold=None, fixed_d=20, seed=0, n_init=10,
                   max_iter=100, tol=1e-4):
    """Flatten -> PCA -> L2 -> K-means. Returns ``(pca, clusters, features)``."""
    feats = flatten(corpus)
    pca = fit_pca(feats, evr_threshold=evr_threshold, fixed_d=fixed_d, random_state=seed)
    z = l2_normalize(pca.transform(feats.descriptors))
    clusters = kmeans(z, k, seed=seed, max_iter=max_iter, tol=tol, n_init=n_init)
    return pca, clusters, z


def _validate_tiles(X):
    if isinstance(X, TileCorpus):
        X = X.pixels
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        raise DataError("expected a stack of tiles with shape (N, W, W); flattened input is not supported")
    arr = _tile_array(arr)
    if arr.shape[1] != arr.shape[2]:
        raise DataError(f"tiles must be square, got {arr.shape[1:]}")
    _check_scaled(arr)
    return arr


class DeepClusterSSL(ClusterMixin, TransformerMixin, BaseEstimator):
    """Self-supervised CNN clustering of scaled spectrogram tiles.

    ``fit`` runs :func:`train_ssl`; ``transform`` returns the PCA-reduced,
    L2-normalised descriptors of the trained network; ``predict`` assigns
    them to the final cluster centers.
    """

    def __init__(self, n_clusters=6, variant="TOY", epochs=None, batch_size=256, lr=0.01, momentum=0.9,
                 weight_decay=0.0, evr_threshold=None, n_components=20, max_components=20,
                 descriptor_dim=64, toy_width=16, input_size=None, kmeans_n_init=1, final_pass=True,
                 random_state=0):
        self.n_clusters = n_clusters
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.evr_threshold = evr_threshold
        self.n_components = n_components
        self.max_components = max_components
        self.descriptor_dim = descriptor_dim
        self.toy_width = toy_width
        self.input_size = input_size
        self.kmeans_n_init = kmeans_n_init
        self.final_pass = final_pass
        self.random_state = random_state

    def run_config(self) -> SSLRunConfig:
        return SSLRunConfig(
            k=self.n_clusters, variant=self.variant, epochs=self.epochs, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            evr_threshold=None if self.n_components is not None else self.evr_threshold,
            n_components=self.n_components, max_components=self.max_components,
            descriptor_dim=self.descriptor_dim, toy_width=self.toy_width, input_size=self.input_size,
            kmeans_n_init=self.kmeans_n_init, final_pass=self.final_pass,
            seeds=Seeds.from_base(int(self.random_state)),
        )

    def fit(self, X, y=None):
        arr = _validate_tiles(X)
        result = train_ssl(arr, self.run_config())
        self.network_ = result.network
        self.pca_ = result.pca
        self.cluster_model_ = result.clusters
        self.history_ = result.history
        self.features_ = result.features
        self.labels_ = result.clusters.assignments
        self.cluster_centers_ = result.clusters.centers
        self.tile_size_ = arr.shape[-1]
        return self

    def descriptors(self, X):
        check_is_fitted(self, "network_")
        arr = _validate_tiles(X)
        return extract_features(self.network_, arr, resize=arr.shape[-1] != self.network_.config.input_size).descriptors

    def transform(self, X):
        return l2_normalize(self.pca_.transform(self.descriptors(X)))

    def predict(self, X):
        return assign(self.cluster_model_, self.transform(X))

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class PCAKMeansBaseline(ClusterMixin, TransformerMixin, BaseEstimator):
    """Flattened pixels -> PCA -> L2 -> K-means."""

    def __init__(self, n_clusters=6, n_components=20, evr_threshold=None, n_init=10, random_state=0):
        self.n_clusters = n_clusters
        self.n_components = n_components
        self.evr_threshold = evr_threshold
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X, y=None):
        arr = _validate_tiles(X)
        self.pca_, self.cluster_model_, self.features_ = train_baseline(
            arr, self.n_clusters, evr_threshold=self.evr_threshold,
            fixed_d=None if self.evr_threshold is not None else self.n_components,
            seed=self.random_state, n_init=self.n_init,
        )
        self.labels_ = self.cluster_model_.assignments
        self.cluster_centers_ = self.cluster_model_.centers
        return self

    def transform(self, X):
        check_is_fitted(self, "pca_")
        arr = _validate_tiles(X)
        return l2_normalize(self.pca_.transform(flatten(arr).descriptors))

    def predict(self, X):
        return assign(self.cluster_model_, self.transform(X))

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


def _state_payload(network: nn.Module):
    index, chunks, offset = [], [], 0
    for name, tensor in network.state_dict().items():
        flat = tensor.detach().cpu().reshape(-1).to(torch.float32).numpy()
        index.append({"name": name, "shape": list(tensor.shape), "offset": offset,
                      "dtype": str(tensor.dtype).replace("torch.", "")})
        chunks.append(flat)
        offset += flat.size
    return (np.concatenate(chunks) if chunks else np.zeros(0, np.float32)), index


def save_checkpoint(directory, network: SpectrogramNet, run_config: SSLRunConfig | None = None,
                    epoch: int | None = None) -> Path:
    directory = Path(directory)
    payload, index = _state_payload(network)
    weights = write_container(directory / "weights.bin", payload, {"tensors": index})
    manifest = {
        "network": network.config.to_dict(),
        "config": run_config.to_dict() if run_config is not None else None,
        "epoch": epoch,
        "seeds": asdict(run_config.seeds) if run_config is not None else {"weights": network.config.seed},
        "hashes": {"weights.bin": hashlib.sha256(weights.read_bytes()).hexdigest(),
                   "trunk": network.trunk_hash()},
    }
    write_json(directory / "manifest.json", manifest)
    return directory


def load_checkpoint(directory) -> SpectrogramNet:
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    network = build_network(NetworkConfig(**manifest["network"]))
    payload, meta = read_container(directory / "weights.bin")
    state = {}
    for entry in meta["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        values = torch.from_numpy(payload[entry["offset"] : entry["offset"] + n].copy()).reshape(entry["shape"])
        state[entry["name"]] = values.to(getattr(torch, entry["dtype"]))
    network.load_state_dict(state)
    network.eval()
    return network
