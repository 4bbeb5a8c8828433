"""PSD sweep matrices, square tile segmentation, scaling and label adaptation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyGridError, IngestionError
from .io import read_container, read_jsonl, write_container, write_jsonl

ACTIVE = "active"
INACTIVE = "inactive"
UNKNOWN = "unknown"
LABELS = (ACTIVE, INACTIVE, UNKNOWN)


@dataclass
class SweepMatrix:
    """Dense PSD grid in dBm, shape ``(num_bins, num_sweeps)``."""

    values: np.ndarray
    bin_hz: float = 187.5
    sweep_rate: float = 5.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"sweep matrix must be 2-D and non-empty, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("sweep matrix contains non-finite values")
        self.values = values

    @property
    def num_bins(self) -> int:
        return self.values.shape[0]

    @property
    def num_sweeps(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BoundingBoxLabel:
    """Inclusive bin/sweep rectangle around one transmission."""

    bin_start: int
    bin_end: int
    sweep_start: int
    sweep_end: int
    kind: str | None = None

    def validate(self, num_bins: int, num_sweeps: int):
        if not (0 <= self.bin_start <= self.bin_end < num_bins):
            raise DataError(f"box bins [{self.bin_start}, {self.bin_end}] outside [0, {num_bins})")
        if not (0 <= self.sweep_start <= self.sweep_end < num_sweeps):
            raise DataError(f"box sweeps [{self.sweep_start}, {self.sweep_end}] outside [0, {num_sweeps})")

    @property
    def area(self) -> int:
        return (self.bin_end - self.bin_start + 1) * (self.sweep_end - self.sweep_start + 1)

    def to_record(self) -> dict:
        rec = {
            "bin_start": self.bin_start,
            "bin_end": self.bin_end,
            "sweep_start": self.sweep_start,
            "sweep_end": self.sweep_end,
        }
        if self.kind is not None:
            rec["kind"] = self.kind
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "BoundingBoxLabel":
        try:
            return cls(
                int(rec["bin_start"]),
                int(rec["bin_end"]),
                int(rec["sweep_start"]),
                int(rec["sweep_end"]),
                rec.get("kind"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed bounding box record {rec!r}: {exc}") from None


@dataclass(frozen=True)
class SegmentTile:
    """One W x W window; axis 0 is frequency bins, axis 1 is time sweeps."""

    pixels: np.ndarray
    band_index: int
    time_index: int
    label: str = UNKNOWN


@dataclass
class TileCorpus:
    """Array-backed collection of tiles sharing one grid geometry.

    ``pixels`` has shape ``(T, W, W)``; tiles are in row-major
    ``(band, time)`` order as produced by :func:`segment`.
    """

    pixels: np.ndarray
    band_index: np.ndarray
    time_index: np.ndarray
    labels: np.ndarray
    window: int
    num_bins: int
    num_sweeps: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __iter__(self) -> Iterator[SegmentTile]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> SegmentTile:
        return SegmentTile(self.pixels[i], int(self.band_index[i]), int(self.time_index[i]), str(self.labels[i]))

    @property
    def num_bands(self) -> int:
        return self.num_bins // self.window

    @property
    def num_windows(self) -> int:
        return self.num_sweeps // self.window

    def subset(self, idx) -> "TileCorpus":
        idx = np.asarray(idx)
        return replace(
            self,
            pixels=self.pixels[idx],
            band_index=self.band_index[idx],
            time_index=self.time_index[idx],
            labels=self.labels[idx],
            meta=dict(self.meta),
        )

    def tile_extent(self, i: int) -> tuple[int, int, int, int]:
        """Inclusive ``(bin_start, bin_end, sweep_start, sweep_end)`` of tile ``i``."""
        W = self.window
        b, t = int(self.band_index[i]), int(self.time_index[i])
        return b * W, b * W + W - 1, t * W, t * W + W - 1


def write_sweeps(path, matrix: SweepMatrix, meta: dict | None = None) -> Path:
    header = {"bin_hz": matrix.bin_hz, "sweep_rate": matrix.sweep_rate, "unit": "dBm"}
    header.update(meta or {})
    return write_container(path, matrix.values, header)


def load_sweeps(path) -> SweepMatrix:
    values, meta = read_container(path)
    if values.ndim != 2 or 0 in values.shape:
        raise IngestionError(f"sweep container must hold a non-empty 2-D array, got {list(values.shape)}", offset=0, path=path)
    try:
        bin_hz = float(meta.get("bin_hz", 187.5))
        sweep_rate = float(meta.get("sweep_rate", 5.0))
    except (TypeError, ValueError):
        raise IngestionError("malformed bin_hz/sweep_rate in header", offset=0, path=path) from None
    return SweepMatrix(values, bin_hz=bin_hz, sweep_rate=sweep_rate)


def segment(matrix: SweepMatrix, W: int) -> TileCorpus:
    """Cut the matrix into non-overlapping W x W tiles; remainders are dropped."""
    if not isinstance(W, (int, np.integer)) or W < 2:
        raise ConfigError(f"window size must be an integer >= 2, got {W!r}")
    W = int(W)
    nb, ns = matrix.num_bins // W, matrix.num_sweeps // W
    if nb == 0 or ns == 0:
        raise EmptyGridError(
            f"window {W} does not fit a {matrix.num_bins} x {matrix.num_sweeps} matrix"
        )
    block = matrix.values[: nb * W, : ns * W]
    # (nb, W, ns, W) -> (nb, ns, W, W): band-major, then time
    pixels = block.reshape(nb, W, ns, W).transpose(0, 2, 1, 3).reshape(nb * ns, W, W)
    bands, times = np.divmod(np.arange(nb * ns), ns)
    return TileCorpus(
        pixels=np.ascontiguousarray(pixels, dtype=np.float32),
        band_index=bands.astype(np.int64),
        time_index=times.astype(np.int64),
        labels=np.full(nb * ns, UNKNOWN, dtype="<U8"),
        window=W,
        num_bins=matrix.num_bins,
        num_sweeps=matrix.num_sweeps,
        meta={"bin_hz": matrix.bin_hz, "sweep_rate": matrix.sweep_rate, "scaled": False},
    )


def scale_tiles(corpus: TileCorpus, lo: float | None = None, hi: float | None = None) -> TileCorpus:
    """Map dBm to [0, 1] with one global pair of constants for the whole corpus."""
    lo = float(corpus.pixels.min()) if lo is None else float(lo)
    hi = float(corpus.pixels.max()) if hi is None else float(hi)
    if not lo < hi:
        raise ConfigError(f"scaling requires lo < hi, got lo={lo}, hi={hi}")
    scaled = (corpus.pixels.astype(np.float64) - lo) / (hi - lo)
    out = replace(corpus, pixels=np.clip(scaled, 0.0, 1.0).astype(np.float32), meta=dict(corpus.meta))
    out.meta.update(scaled=True, scale_lo=lo, scale_hi=hi)
    return out


def adapt_labels(
    corpus: TileCorpus, boxes: Sequence[BoundingBoxLabel], exhaustive: bool = False
) -> TileCorpus:
    """Mark tiles overlapping any box as active.

    Untouched tiles stay ``unknown`` unless the labeling is declared
    exhaustive, in which case they become ``inactive``.
    """
    W = corpus.window
    hit = np.zeros((corpus.num_bands, corpus.num_windows), dtype=bool)
    for box in boxes:
        box.validate(corpus.num_bins, corpus.num_sweeps)
        b0, b1 = box.bin_start // W, min(box.bin_end // W, corpus.num_bands - 1)
        t0, t1 = box.sweep_start // W, min(box.sweep_end // W, corpus.num_windows - 1)
        if b0 <= b1 and t0 <= t1:
            hit[b0 : b1 + 1, t0 : t1 + 1] = True
    active = hit[corpus.band_index, corpus.time_index]
    labels = corpus.labels.copy()
    labels[active] = ACTIVE
    if exhaustive:
        labels[~active & (labels != ACTIVE)] = INACTIVE
    out = replace(corpus, labels=labels, meta=dict(corpus.meta))
    out.meta["exhaustive_labels"] = bool(exhaustive or corpus.meta.get("exhaustive_labels", False))
    return out


def read_boxes(path) -> list[BoundingBoxLabel]:
    return [BoundingBoxLabel.from_record(r) for r in read_jsonl(path)]


def write_boxes(path, boxes: Sequence[BoundingBoxLabel]) -> Path:
    return write_jsonl(path, (b.to_record() for b in boxes))


def write_corpus(directory, corpus: TileCorpus, extra_records: dict | None = None) -> tuple[Path, Path]:
    """Persist as ``tiles.bin`` (pixels) plus ``tiles.jsonl`` (per-tile records)."""
    directory = Path(directory)
    meta = dict(corpus.meta)
    meta.update(window=corpus.window, num_bins=corpus.num_bins, num_sweeps=corpus.num_sweeps)
    bin_path = write_container(directory / "tiles.bin", corpus.pixels, meta)
    extra_records = extra_records or {}
    records = []
    for i in range(len(corpus)):
        rec = {
            "band_index": int(corpus.band_index[i]),
            "time_index": int(corpus.time_index[i]),
            "label": str(corpus.labels[i]),
        }
        for key, values in extra_records.items():
            rec[key] = values[i]
        records.append(rec)
    jsonl_path = write_jsonl(directory / "tiles.jsonl", records)
    return bin_path, jsonl_path


def read_corpus(directory) -> tuple[TileCorpus, list[dict]]:
    directory = Path(directory)
    pixels, meta = read_container(directory / "tiles.bin")
    records = read_jsonl(directory / "tiles.jsonl")
    if pixels.ndim != 3 or pixels.shape[1] != pixels.shape[2]:
        raise IngestionError(f"tiles container must be (T, W, W), got {list(pixels.shape)}", offset=0,
                             path=directory / "tiles.bin")
    if len(records) != pixels.shape[0]:
        raise DataError(f"{len(records)} tile records for {pixels.shape[0]} tiles in {directory}")
    labels = np.array([r.get("label", UNKNOWN) for r in records], dtype="<U8")
    if not set(labels.tolist()) <= set(LABELS):
        raise DataError(f"unknown tile label in {directory / 'tiles.jsonl'}")
    corpus = TileCorpus(
        pixels=pixels,
        band_index=np.array([r["band_index"] for r in records], dtype=np.int64),
        time_index=np.array([r["time_index"] for r in records], dtype=np.int64),
        labels=labels,
        window=int(meta.get("window", pixels.shape[1])),
        num_bins=int(meta.get("num_bins", 0)),
        num_sweeps=int(meta.get("num_sweeps", 0)),
        meta=meta,
    )
    return corpus, records
