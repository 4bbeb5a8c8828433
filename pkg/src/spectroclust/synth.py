"""Seeded generator of PSD sweep matrices with ground-truth boxes.

Activity archetypes:

* ``stripe`` - full-bandwidth rows lasting a few sweeps
* ``dotted`` - vertical trains of small isolated blobs at one frequency
* ``high_intensity`` - tall, moderately wide blocks near saturation
* ``edge_gradient`` - additive dB ramp on the outer bins of the band

Everything not covered by a burst is noise floor (``idle``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import BoundingBoxLabel, SweepMatrix
from .errors import ConfigError

CLASS_NAMES = ("idle", "stripe", "dotted", "high_intensity", "edge_left", "edge_right")
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}
BURST_KINDS = ("stripe", "dotted", "high_intensity")

# blob shapes (sweeps, bins) for dotted trains
_BLOB_SHAPES = [(1, 2), (2, 1), (1, 3), (3, 1), (2, 2), (2, 3), (3, 2)]


def _pair(value, name):
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (low, high) pair, got {value!r}") from None
    if lo > hi:
        raise ConfigError(f"{name} range is empty: {value!r}")
    return lo, hi


@dataclass
class ActivitySpec:
    """Parameters of one archetype.

    ``rate`` is the expected number of events per 1000 sweeps; for
    ``edge_gradient`` any positive rate switches the ramp on. ``events``
    overrides the Poisson draw with an exact count. ``intensity`` is in dB
    above the noise floor. Geometry ranges are inclusive and in sweeps
    (``height``, ``spacing``) or bins (``width``). ``zone`` restricts burst
    placement to a fraction range of the band, like a channel plan.
    """

    rate: float = 0.0
    intensity: tuple = (10.0, 20.0)
    height: tuple = (1, 4)
    width: tuple = (1, 1)
    count: tuple = (1, 1)
    spacing: tuple = (1, 1)
    size: tuple = (2, 6)
    zone: tuple = (0.0, 1.0)
    events: int | None = None

    def validate(self, name):
        if self.rate < 0:
            raise ConfigError(f"{name}.rate must be >= 0, got {self.rate}")
        if self.events is not None and self.events < 0:
            raise ConfigError(f"{name}.events must be >= 0")
        for attr in ("intensity", "height", "width", "count", "spacing", "size", "zone"):
            setattr(self, attr, _pair(getattr(self, attr), f"{name}.{attr}"))
        if not 0.0 <= self.zone[0] < self.zone[1] <= 1.0:
            raise ConfigError(f"{name}.zone must satisfy 0 <= low < high <= 1")
        for attr in ("height", "width", "count", "spacing", "size"):
            if getattr(self, attr)[0] < 1:
                raise ConfigError(f"{name}.{attr} must be >= 1")

    @property
    def enabled(self):
        return self.rate > 0 or bool(self.events)


def _default_stripe():
    return ActivitySpec(intensity=(12.0, 25.0), height=(1, 4))


def _default_dotted():
    return ActivitySpec(intensity=(15.0, 25.0), count=(4, 8), spacing=(4, 10), size=(2, 6))


def _default_high():
    return ActivitySpec(intensity=(45.0, 55.0), height=(20, 80), width=(10, 30))


def _default_edge():
    return ActivitySpec(intensity=(8.0, 12.0))


@dataclass
class SynthScenario:
    duration_sweeps: int = 4096
    num_bins: int = 1024
    window: int = 128
    noise_floor_dbm: float = -110.0
    noise_sigma_db: float = 2.0
    saturation_dbm: float = -40.0
    edge_fraction: float = 0.125
    bin_hz: float = 187.5
    sweep_rate: float = 5.0
    stripe: ActivitySpec = field(default_factory=_default_stripe)
    dotted: ActivitySpec = field(default_factory=_default_dotted)
    high_intensity: ActivitySpec = field(default_factory=_default_high)
    edge_gradient: ActivitySpec = field(default_factory=_default_edge)
    seed: int = 0

    def validate(self):
        if self.duration_sweeps < 1 or self.num_bins < 1:
            raise ConfigError("duration_sweeps and num_bins must be >= 1")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.noise_sigma_db < 0:
            raise ConfigError("noise_sigma_db must be >= 0")
        if not 0 < self.edge_fraction <= 0.5:
            raise ConfigError("edge_fraction must be in (0, 0.5]")
        for name in ("stripe", "dotted", "high_intensity", "edge_gradient"):
            getattr(self, name).validate(name)
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SynthScenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"idle"}
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key == "idle":
                continue
            if key in ("stripe", "dotted", "high_intensity", "edge_gradient"):
                base = asdict(getattr(cls(), key))
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                bad = set(value) - set(base)
                if bad:
                    raise ConfigError(f"unknown keys for {key}: {sorted(bad)}")
                base.update(value)
                kwargs[key] = ActivitySpec(**base)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def _draw_int(rng, bounds):
    lo, hi = int(round(bounds[0])), int(round(bounds[1]))
    return int(rng.integers(lo, hi + 1))


def _event_count(rng, spec: ActivitySpec, duration):
    if spec.events is not None:
        return int(spec.events)
    if spec.rate <= 0:
        return 0
    return int(rng.poisson(spec.rate * duration / 1000.0))


def _zone_bins(spec, nb, width):
    """Inclusive range of admissible start bins for a burst ``width`` bins wide."""
    lo = int(np.floor(spec.zone[0] * nb))
    hi = int(np.ceil(spec.zone[1] * nb)) - width
    return lo, max(lo, hi)


def _power(dbm):
    return np.power(10.0, np.asarray(dbm) / 10.0)


def synthesize(scenario: SynthScenario):
    """Generate ``(SweepMatrix, boxes, tile_classes)``.

    ``tile_classes[i]`` is the ground-truth class id (see ``CLASS_NAMES``)
    of tile ``i`` in the row-major ``(band, time)`` grid for
    ``scenario.window``.
    """
    sc = scenario.validate()
    rng = np.random.default_rng(sc.seed)
    nb, ns = sc.num_bins, sc.duration_sweeps

    floor_db = sc.noise_floor_dbm + sc.noise_sigma_db * rng.standard_normal((nb, ns))
    n_edge = max(1, int(round(sc.edge_fraction * nb)))
    if sc.edge_gradient.enabled:
        amp = rng.uniform(*sc.edge_gradient.intensity)
        ramp = amp * (1.0 - np.arange(n_edge) / n_edge)
        floor_db[:n_edge] += ramp[:, None]
        floor_db[nb - n_edge :] += ramp[::-1, None]
    power = _power(floor_db)

    boxes: list[BoundingBoxLabel] = []

    def burst(b0, b1, s0, s1, level_db):
        power[b0 : b1 + 1, s0 : s1 + 1] += _power(sc.noise_floor_dbm + level_db)

    spec = sc.stripe
    for _ in range(_event_count(rng, spec, ns)):
        h = min(_draw_int(rng, spec.height), ns)
        s0 = int(rng.integers(0, ns - h + 1))
        burst(0, nb - 1, s0, s0 + h - 1, rng.uniform(*spec.intensity))
        boxes.append(BoundingBoxLabel(0, nb - 1, s0, s0 + h - 1, "stripe"))

    spec = sc.dotted
    shapes = [s for s in _BLOB_SHAPES if spec.size[0] <= s[0] * s[1] <= spec.size[1]] or [(1, 2)]
    for _ in range(_event_count(rng, spec, ns)):
        n_blobs = _draw_int(rng, spec.count)
        level = rng.uniform(*spec.intensity)
        lo, hi = _zone_bins(spec, nb, 3)
        f0 = int(rng.integers(lo, hi + 1))
        s = int(rng.integers(0, ns))
        bmin, bmax, smin, smax = nb, -1, ns, -1
        for j in range(n_blobs):
            if j:
                s += _draw_int(rng, spec.spacing)
            if s >= ns:
                break
            dh, dw = shapes[int(rng.integers(len(shapes)))]
            b0 = min(max(0, f0 + int(rng.integers(-1, 2))), nb - 1)
            b1 = min(b0 + dw - 1, nb - 1)
            s1 = min(s + dh - 1, ns - 1)
            burst(b0, b1, s, s1, level)
            bmin, bmax, smin, smax = min(bmin, b0), max(bmax, b1), min(smin, s), max(smax, s1)
            s = s1
        if bmax >= 0:
            boxes.append(BoundingBoxLabel(bmin, bmax, smin, smax, "dotted"))

    spec = sc.high_intensity
    for _ in range(_event_count(rng, spec, ns)):
        h = min(_draw_int(rng, spec.height), ns)
        w = min(_draw_int(rng, spec.width), nb)
        s0 = int(rng.integers(0, ns - h + 1))
        lo, hi = _zone_bins(spec, nb, w)
        b0 = min(int(rng.integers(lo, hi + 1)), nb - w)
        burst(b0, b0 + w - 1, s0, s0 + h - 1, rng.uniform(*spec.intensity))
        boxes.append(BoundingBoxLabel(b0, b0 + w - 1, s0, s0 + h - 1, "high_intensity"))

    values = np.minimum(10.0 * np.log10(power), sc.saturation_dbm).astype(np.float32)
    matrix = SweepMatrix(values, bin_hz=sc.bin_hz, sweep_rate=sc.sweep_rate)
    classes = tile_classes(boxes, nb, ns, sc.window, n_edge if sc.edge_gradient.enabled else 0)
    return matrix, boxes, classes


def tile_classes(boxes, num_bins, num_sweeps, W, n_edge=0):
    """Dominant ground-truth class per tile.

    The class with the largest total box overlap wins (ties go to the lowest
    class id). Tiles without any burst are ``edge_left``/``edge_right`` when
    they intersect an edge ramp of ``n_edge`` bins, otherwise ``idle``.
    """
    n_bands, n_win = num_bins // W, num_sweeps // W
    area = np.zeros((len(CLASS_NAMES), n_bands, n_win), dtype=np.int64)
    for box in boxes:
        cid = CLASS_IDS[box.kind]
        for b in range(box.bin_start // W, min(box.bin_end // W, n_bands - 1) + 1):
            ob = min(box.bin_end, b * W + W - 1) - max(box.bin_start, b * W) + 1
            for t in range(box.sweep_start // W, min(box.sweep_end // W, n_win - 1) + 1):
                ot = min(box.sweep_end, t * W + W - 1) - max(box.sweep_start, t * W) + 1
                area[cid, b, t] += ob * ot
    cls = area.argmax(axis=0)
    empty = area.sum(axis=0) == 0
    cls[empty] = CLASS_IDS["idle"]
    if n_edge > 0:
        band_lo = np.arange(n_bands) * W
        left = band_lo < n_edge
        right = band_lo + W - 1 >= num_bins - n_edge
        cls[empty & left[:, None]] = CLASS_IDS["edge_left"]
        cls[empty & right[:, None] & ~left[:, None]] = CLASS_IDS["edge_right"]
    return cls.reshape(-1).astype(np.int64)


def _zoned_scenario(seed, num_windows, stripe_rate, dotted_rate, high_rate) -> SynthScenario:
    # six 64-bin bands: edge | dotted zone (2 bands) | high-intensity zone (2 bands) | edge
    return SynthScenario(
        duration_sweeps=64 * num_windows,
        num_bins=384,
        window=64,
        edge_fraction=1 / 6,
        stripe=ActivitySpec(rate=stripe_rate, intensity=(12.0, 25.0), height=(1, 4)),
        dotted=ActivitySpec(rate=dotted_rate, intensity=(15.0, 25.0), count=(4, 8), spacing=(4, 10),
                            size=(2, 6), zone=(1 / 6, 3 / 6)),
        high_intensity=ActivitySpec(rate=high_rate, intensity=(45.0, 55.0), height=(20, 80), width=(10, 30),
                                    zone=(3 / 6, 5 / 6)),
        edge_gradient=ActivitySpec(rate=1.0, intensity=(8.0, 12.0)),
        seed=seed,
    ).validate()


def six_class_scenario(seed: int = 0, num_windows: int = 334) -> SynthScenario:
    """Roughly balanced six-class corpus; 2,004 tiles of 64 x 64 by default."""
    return _zoned_scenario(seed, num_windows, 3.5, 17.0, 11.0)


def detection_scenario(seed: int = 0, num_windows: int = 334) -> SynthScenario:
    """Same layout with sparser activity, about 40 % active tiles."""
    return _zoned_scenario(seed, num_windows, 2.4, 11.0, 7.0)


PRESETS = {"six-class": six_class_scenario, "detection": detection_scenario}
