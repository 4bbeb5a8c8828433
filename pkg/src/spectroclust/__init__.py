"""Self-supervised clustering of radio-spectrum spectrogram tiles."""

__version__ = "0.1.0"

from .cluster import KMeans, kmeans, nmi  # noqa: E402
from .features import PCAReducer, extract_features, l2_normalize  # noqa: E402
from .metrics import davies_bouldin, hopkins, ivat, silhouette, sweep_k, vat_order  # noqa: E402
from .trainer import DeepClusterSSL, PCAKMeansBaseline, SSLRunConfig, train_baseline, train_ssl  # noqa: E402

__all__ = [
    "DeepClusterSSL", "KMeans", "PCAKMeansBaseline", "PCAReducer", "SSLRunConfig",
    "davies_bouldin", "extract_features", "hopkins", "ivat", "kmeans", "l2_normalize", "nmi",
    "silhouette", "sweep_k", "train_baseline", "train_ssl", "vat_order",
]
