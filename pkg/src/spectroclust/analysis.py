"""Per-cluster interpretation: statistics table, averaged spectrograms,
sub-band histograms, activity grouping and detection scoring."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .cluster import ClusterModel
from .data import ACTIVE, INACTIVE, UNKNOWN, TileCorpus
from .errors import ConfigError, DataError
from .io import read_json

log = logging.getLogger(__name__)

GROUPS = ("Stripes", "Dotted", "Edges", "Idle", "HighIntensity", "Undefined")
BURST_GROUPS = ("Stripes", "Dotted", "HighIntensity")
OCCUPIED_GROUPS = BURST_GROUPS


def _pixels(tiles) -> np.ndarray:
    arr = tiles.pixels if isinstance(tiles, TileCorpus) else np.asarray(tiles, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"tiles must have shape (N, W, W), got {arr.shape}")
    return arr


def average_spectrogram(tiles) -> np.ndarray:
    arr = _pixels(tiles)
    if arr.shape[0] == 0:
        raise DataError("cannot average an empty cluster")
    return np.clip(arr.mean(axis=0, dtype=np.float64), 0.0, 1.0)


def frequency_histogram(band_index, num_subbands: int) -> np.ndarray:
    """Number of tiles per frequency sub-band."""
    band_index = np.asarray(band_index, dtype=np.int64).ravel()
    if num_subbands < 1:
        raise ConfigError("num_subbands must be >= 1")
    if band_index.size and (band_index.min() < 0 or band_index.max() >= num_subbands):
        raise DataError(f"band index out of range [0, {num_subbands})")
    return np.bincount(band_index, minlength=num_subbands)


@dataclass
class ClusterStatsRow:
    cluster_id: int
    size: int
    size_pct: float
    mean_feature_dist: float
    mean_image_mse: float
    group: str = "Undefined"


@dataclass
class ClusterStats:
    rows: list
    overall_mean: dict
    overall_std: dict

    def to_records(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "overall_mean": self.overall_mean,
            "overall_std": self.overall_std,
        }

    def with_groups(self, groups: dict) -> "ClusterStats":
        rows = [ClusterStatsRow(**{**asdict(r), "group": groups.get(r.cluster_id, r.group)}) for r in self.rows]
        return ClusterStats(rows, self.overall_mean, self.overall_std)

    def write_csv(self, path) -> Path:
        path = Path(path)
        names = [f.name for f in fields(ClusterStatsRow)]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows:
                w.writerow([getattr(r, n) for n in names])
            for label, agg in (("overall_mean", self.overall_mean), ("overall_std", self.overall_std)):
                w.writerow([label] + [agg.get(n, "") for n in names[1:]])
        return path


_NUMERIC = ("size", "size_pct", "mean_feature_dist", "mean_image_mse")


def cluster_stats(model: ClusterModel, features, tiles, assignments=None) -> ClusterStats:
    """Size, mean member-to-center feature distance and mean member-to-average
    image MSE for every non-empty cluster, largest first."""
    labels = np.asarray(model.assignments if assignments is None else assignments, dtype=np.int64)
    Z = np.asarray(features, dtype=np.float64)
    pix = _pixels(tiles)
    n = labels.size
    if Z.shape[0] != n or pix.shape[0] != n:
        raise DataError(f"inconsistent sizes: {n} labels, {Z.shape[0]} features, {pix.shape[0]} tiles")
    if Z.shape[1] != model.centers.shape[1]:
        raise DataError("feature dimension does not match the cluster centers")
    dist = np.linalg.norm(Z - model.centers[labels], axis=1)
    rows = []
    for c in np.unique(labels):
        members = labels == c
        avg = average_spectrogram(pix[members])
        mse = ((pix[members].astype(np.float64) - avg) ** 2).mean(axis=(1, 2))
        rows.append(ClusterStatsRow(int(c), int(members.sum()), 100.0 * members.sum() / n,
                                    float(dist[members].mean()), float(mse.mean())))
    rows.sort(key=lambda r: (-r.size, r.cluster_id))
    table = np.array([[getattr(r, k) for k in _NUMERIC] for r in rows])
    mean = dict(zip(_NUMERIC, table.mean(axis=0).tolist()))
    std = dict(zip(_NUMERIC, table.std(axis=0).tolist()))
    return ClusterStats(rows, mean, std)


@dataclass
class GroupingRules:
    """Thresholds of the rule-based grouping.

    Pixel thresholds are multiples of the robust noise scale measured on
    the residual after removing each frequency bin's median background.
    """

    active_sigma: float = 4.0
    high_sigma: float = 18.0
    high_min_pixels: int = 40
    stripe_column_frac: float = 0.6
    min_blob_size: int = 2
    max_blob_size: int = 12
    dots_min: int = 2
    occupied_share: float = 0.5
    edge_mass: float = 0.6
    edge_bands: tuple | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "GroupingRules":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown grouping thresholds: {sorted(bad)}")
        bands = d.get("edge_bands")
        if isinstance(bands, str):
            bands = [b for b in bands.split(",") if b.strip()]
        if bands is not None:
            d["edge_bands"] = tuple(int(b) for b in bands)
        for f in fields(cls):
            if f.name != "edge_bands" and f.name in d:
                d[f.name] = type(f.default)(d[f.name])
        return cls(**d)


@dataclass
class TileEvidence:
    """Per-tile activity kind and the measurements behind it."""

    kind: np.ndarray
    active_frac: np.ndarray
    stripe_columns: np.ndarray
    blobs: np.ndarray
    high_pixels: np.ndarray
    noise_scale: float


_QUIET = "quiet"


def tile_evidence(tiles, band_index=None, rules: GroupingRules | None = None) -> TileEvidence:
    rules = rules or GroupingRules()
    pix = _pixels(tiles)
    if band_index is None:
        band_index = tiles.band_index if isinstance(tiles, TileCorpus) else np.zeros(pix.shape[0], np.int64)
    band_index = np.asarray(band_index, dtype=np.int64)
    n, W, _ = pix.shape
    background = np.zeros((int(band_index.max(initial=0)) + 1, W), dtype=np.float64)
    for b in np.unique(band_index):
        background[b] = np.median(pix[band_index == b].transpose(1, 0, 2).reshape(W, -1), axis=1)
    resid = pix - background[band_index][:, :, None]
    scale = 1.4826 * float(np.median(np.abs(resid - np.median(resid))))
    scale = max(scale, 1e-6)
    active = resid > rules.active_sigma * scale
    high = resid > rules.high_sigma * scale

    active_frac = active.mean(axis=(1, 2))
    col_frac = active.mean(axis=1)
    stripe_cols = (col_frac >= rules.stripe_column_frac).sum(axis=1)
    high_pixels = high.sum(axis=(1, 2))
    blobs = np.zeros(n, dtype=np.int64)
    kind = np.full(n, _QUIET, dtype=object)
    for i in range(n):
        if high_pixels[i] >= rules.high_min_pixels:
            kind[i] = "HighIntensity"
            continue
        if stripe_cols[i] > 0:
            kind[i] = "Stripes"
            continue
        lab, nlab = ndimage.label(active[i])
        if nlab:
            sizes = np.bincount(lab.ravel())[1:]
            blobs[i] = int(((sizes >= rules.min_blob_size) & (sizes <= rules.max_blob_size)).sum())
        if blobs[i] >= rules.dots_min:
            kind[i] = "Dotted"
    return TileEvidence(kind.astype(str), active_frac, stripe_cols, blobs, high_pixels, scale)


def group_clusters(assignments, evidence: TileEvidence, histograms: dict, rules: GroupingRules | None = None,
                   manual: dict | str | Path | None = None) -> dict:
    """Assign one of ``GROUPS`` to every cluster.

    A cluster is active when at least ``occupied_share`` of its tiles show a
    burst; it then takes the most common burst kind. Quiet clusters are
    ``Edges`` if more than ``edge_mass`` of their tiles lie in the edge
    sub-bands and ``Idle`` otherwise. Entries of ``manual`` (a dict or a JSON
    file mapping cluster id to group) override the rules.
    """
    rules = rules or GroupingRules()
    labels = np.asarray(assignments, dtype=np.int64)
    if labels.size != evidence.kind.size:
        raise DataError("assignments and tile evidence differ in length")
    groups = {}
    for c in np.unique(labels):
        kinds = evidence.kind[labels == c]
        burst = [g for g in kinds if g in BURST_GROUPS]
        if len(burst) >= rules.occupied_share * kinds.size:
            names, counts = np.unique(burst, return_counts=True)
            groups[int(c)] = str(names[int(np.argmax(counts))])
            continue
        hist = np.asarray(histograms[int(c)], dtype=np.float64)
        edges = rules.edge_bands if rules.edge_bands is not None else (0, hist.size - 1)
        if any(not 0 <= b < hist.size for b in edges):
            raise ConfigError(f"edge bands {edges} outside [0, {hist.size})")
        mass = hist[list(set(edges))].sum() / max(hist.sum(), 1.0)
        groups[int(c)] = "Edges" if mass > rules.edge_mass else "Idle"
    if manual is not None:
        if not isinstance(manual, dict):
            manual = read_json(manual)
        for key, group in manual.items():
            if group not in GROUPS:
                raise ConfigError(f"unknown group {group!r} for cluster {key}; expected one of {GROUPS}")
            groups[int(key)] = group
    return groups


@dataclass
class DetectionReport:
    precision: float | None
    recall: float | None
    f1: float | None
    counts: dict
    occupied_cluster_ids: list
    excluded_unknown: int = 0
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_detection(assignments, tile_labels, occupied_cluster_ids) -> DetectionReport:
    """Tiles in occupied clusters are predicted active; unknown labels are skipped."""
    labels = np.asarray(assignments, dtype=np.int64)
    truth = np.asarray(tile_labels).astype(str)
    if labels.size != truth.size:
        raise DataError(f"{labels.size} assignments for {truth.size} labels")
    bad = set(np.unique(truth)) - {ACTIVE, INACTIVE, UNKNOWN}
    if bad:
        raise DataError(f"unexpected tile labels {sorted(bad)}")
    known = truth != UNKNOWN
    if not known.any():
        raise DataError("no active or inactive tiles to evaluate")
    occupied = sorted(int(c) for c in occupied_cluster_ids)
    pred = np.isin(labels[known], occupied)
    pos = truth[known] == ACTIVE
    tp = int((pred & pos).sum())
    fp = int((pred & ~pos).sum())
    fn = int((~pred & pos).sum())
    tn = int((~pred & ~pos).sum())
    undefined = []
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None:
        undefined.append("precision")
    if recall is None:
        undefined.append("recall")
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
        undefined.append("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return DetectionReport(precision, recall, f1, {"tp": tp, "fp": fp, "fn": fn, "tn": tn}, occupied,
                           int((~known).sum()), undefined)


def occupied_clusters(groups: dict, occupied_groups=OCCUPIED_GROUPS) -> list:
    return sorted(c for c, g in groups.items() if g in occupied_groups)


def occupancy_summary(stats: ClusterStats, groups: dict, occupied_groups=OCCUPIED_GROUPS) -> dict:
    """Corpus share per group; ``occupied_pct`` sums the occupied groups."""
    per_group = {g: 0.0 for g in GROUPS}
    for row in stats.rows:
        per_group[groups.get(row.cluster_id, "Undefined")] += row.size_pct
    return {
        "occupied_pct": sum(per_group[g] for g in occupied_groups),
        "idle_pct": per_group["Idle"],
        "edges_pct": per_group["Edges"],
        "per_group_pct": per_group,
    }
