import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectroclust.data import (ACTIVE, INACTIVE, UNKNOWN, BoundingBoxLabel, SweepMatrix, adapt_labels, load_sweeps,
                               read_boxes, read_corpus, scale_tiles, segment, write_boxes, write_corpus, write_sweeps)
from spectroclust.errors import ConfigError, DataError, EmptyGridError, IngestionError
from spectroclust.io import decode_container, encode_container, read_jsonl, write_container, write_jsonl
from spectroclust.synth import (CLASS_IDS, ActivitySpec, SynthScenario, detection_scenario, six_class_scenario,
                                synthesize, tile_classes)

from oracles import brute_force_active


def matrix(bins, sweeps, seed=0):
    return SweepMatrix(np.random.default_rng(seed).normal(-100, 5, size=(bins, sweeps)).astype(np.float32))


# container

def test_container_roundtrip(tmp_path):
    a = np.arange(12, dtype=np.float32).reshape(4, 3)
    path = write_container(tmp_path / "a.bin", a, {"bins": 4})
    head = path.read_bytes().split(b"\n", 1)[0]
    header = json.loads(head)
    assert header["version"] == 1 and header["dtype"] == "f32" and header["shape"] == [4, 3]
    b, meta = decode_container(path.read_bytes())
    assert np.array_equal(a, b) and meta == {"bins": 4}


def test_container_payload_is_little_endian_f32():
    blob = encode_container(np.array([1.0], dtype=np.float32))
    assert blob.split(b"\n", 1)[1] == np.array([1.0], dtype="<f4").tobytes()


def test_container_short_payload(tmp_path):
    blob = encode_container(np.zeros((4, 3), dtype=np.float32))
    with pytest.raises(IngestionError, match="byte offset"):
        decode_container(blob[:-4], path="x.bin")


def test_container_nonfinite_offset():
    blob = encode_container(np.array([0.0, np.nan, 1.0], dtype=np.float32))
    header_len = blob.index(b"\n") + 1
    with pytest.raises(IngestionError, match=f"byte offset {header_len + 4}"):
        decode_container(blob)


def test_container_bad_header():
    with pytest.raises(IngestionError):
        decode_container(b'{"version": 2, "dtype": "f32", "shape": [1], "meta": {}}\n' + bytes(4))
    with pytest.raises(IngestionError):
        decode_container(b"not json\n")


def test_jsonl_roundtrip_and_bad_line(tmp_path):
    p = write_jsonl(tmp_path / "r.jsonl", [{"a": 1}, {"a": 2}])
    assert read_jsonl(p) == [{"a": 1}, {"a": 2}]
    p.write_text('{"a": 1}\n{oops\n')
    with pytest.raises(IngestionError, match="byte offset 9"):
        read_jsonl(p)


# sweeps

def test_load_sweeps_4x3(tmp_path):
    m = SweepMatrix(np.arange(12, dtype=np.float32).reshape(4, 3) - 100, bin_hz=100.0, sweep_rate=2.0)
    out = load_sweeps(write_sweeps(tmp_path / "s.bin", m))
    assert out.values.shape == (4, 3) and out.bin_hz == 100.0 and out.sweep_rate == 2.0


def test_load_sweeps_shape_mismatch(tmp_path):
    blob = encode_container(np.zeros((4, 3), dtype=np.float32))
    (tmp_path / "s.bin").write_bytes(blob[:-4])
    with pytest.raises(IngestionError, match="shape"):
        load_sweeps(tmp_path / "s.bin")


def test_synthetic_save_load_bit_identical(tmp_path):
    m, _, _ = synthesize(SynthScenario(duration_sweeps=300, num_bins=128, window=64, seed=3))
    back = load_sweeps(write_sweeps(tmp_path / "s.bin", m))
    assert back.values.tobytes() == m.values.tobytes()


def test_sweep_matrix_rejects_nonfinite():
    with pytest.raises(DataError):
        SweepMatrix(np.array([[0.0, np.inf]], dtype=np.float32))


# segmentation

def test_segment_exact_division():
    c = segment(matrix(1024, 1024), 128)
    assert len(c) == 64 and c.num_bands == 8 and c.num_windows == 8


def test_segment_drops_remainder():
    m = matrix(1024, 300)
    c = segment(m, 128)
    assert len(c) == 16
    assert c.num_sweeps - c.num_windows * 128 == 44


def test_segment_row_major_and_content():
    m = matrix(6, 9)
    c = segment(m, 3)
    assert c.band_index.tolist() == [0, 0, 0, 1, 1, 1]
    assert c.time_index.tolist() == [0, 1, 2, 0, 1, 2]
    assert np.array_equal(c.pixels[4], m.values[3:6, 3:6])


def test_segment_errors():
    with pytest.raises(ConfigError):
        segment(matrix(8, 8), 0)
    with pytest.raises(EmptyGridError):
        segment(matrix(8, 8), 16)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(2, 12))
def test_segment_partition_property(bins, sweeps, W):
    m = matrix(bins, sweeps)
    if W > bins or W > sweeps:
        with pytest.raises(EmptyGridError):
            segment(m, W)
        return
    c = segment(m, W)
    assert c.pixels.size == (bins // W) * W * (sweeps // W) * W
    pairs = set(zip(c.band_index.tolist(), c.time_index.tolist()))
    assert len(pairs) == len(c)
    rebuilt = c.pixels.reshape(bins // W, sweeps // W, W, W).transpose(0, 2, 1, 3).reshape(bins // W * W, -1)
    assert np.array_equal(rebuilt, m.values[: bins // W * W, : sweeps // W * W])


# scaling

def test_scale_endpoints_and_midpoint():
    m = SweepMatrix(np.array([[-110, -90], [-70, -90]], dtype=np.float32))
    c = scale_tiles(segment(m, 2), -110, -70)
    assert sorted(set(c.pixels.ravel().tolist())) == [0.0, 0.5, 1.0]
    assert c.meta["scale_lo"] == -110 and c.meta["scale_hi"] == -70


def test_scale_clamps_and_defaults():
    c = segment(matrix(8, 8), 4)
    s = scale_tiles(c)
    assert s.pixels.min() == 0.0 and s.pixels.max() == 1.0
    clipped = scale_tiles(c, -100, -99)
    assert clipped.pixels.min() >= 0 and clipped.pixels.max() <= 1


def test_scale_rejects_bad_range():
    with pytest.raises(ConfigError):
        scale_tiles(segment(matrix(4, 4), 2), 1.0, 1.0)


def test_scale_idempotent_on_unit_range():
    s = scale_tiles(segment(matrix(8, 8), 4))
    again = scale_tiles(s, 0.0, 1.0)
    assert np.array_equal(s.pixels, again.pixels)


# labels

def test_box_covering_one_tile():
    c = segment(matrix(8, 8), 4)
    out = adapt_labels(c, [BoundingBoxLabel(4, 7, 0, 3)])
    assert out.labels.tolist() == [UNKNOWN, UNKNOWN, ACTIVE, UNKNOWN]


def test_box_spanning_four_tiles_by_one_pixel():
    c = segment(matrix(12, 12), 4)
    out = adapt_labels(c, [BoundingBoxLabel(3, 4, 3, 4)], exhaustive=True)
    assert sorted(np.flatnonzero(out.labels == ACTIVE).tolist()) == [0, 1, 3, 4]
    assert (out.labels == INACTIVE).sum() == 5


def test_box_out_of_range():
    c = segment(matrix(8, 8), 4)
    with pytest.raises(DataError):
        adapt_labels(c, [BoundingBoxLabel(0, 8, 0, 1)])


def test_labels_match_brute_force():
    m, boxes, _ = synthesize(SynthScenario(duration_sweeps=1280, num_bins=256, window=64, seed=4))
    c = adapt_labels(segment(m, 64), boxes, exhaustive=True)
    ref = brute_force_active(c.num_bands, c.num_windows, 64, boxes)
    assert np.array_equal(c.labels == ACTIVE, ref)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 31), st.integers(0, 31), st.integers(0, 31), st.integers(0, 31)),
                min_size=1, max_size=6))
def test_label_monotone_in_boxes(raw):
    c = segment(matrix(32, 32), 8)
    boxes = [BoundingBoxLabel(min(a, b), max(a, b), min(s, t), max(s, t)) for a, b, s, t in raw]
    before = adapt_labels(c, boxes[:-1]).labels == ACTIVE
    after = adapt_labels(c, boxes).labels == ACTIVE
    assert np.all(after[before])


def test_boxes_roundtrip(tmp_path):
    boxes = [BoundingBoxLabel(0, 3, 1, 2, "stripe"), BoundingBoxLabel(5, 9, 0, 0)]
    assert read_boxes(write_boxes(tmp_path / "b.jsonl", boxes)) == boxes


def test_corpus_roundtrip(tmp_path):
    c = adapt_labels(scale_tiles(segment(matrix(16, 24), 8)), [BoundingBoxLabel(0, 1, 0, 1)], exhaustive=True)
    write_corpus(tmp_path, c, {"class": list(range(len(c)))})
    back, records = read_corpus(tmp_path)
    assert np.array_equal(back.pixels, c.pixels)
    assert back.labels.tolist() == c.labels.tolist()
    assert [r["class"] for r in records] == list(range(len(c)))
    assert back.window == 8 and back.num_bins == 16


# synthesis

def test_synth_all_rates_zero_is_idle():
    off = ActivitySpec(rate=0.0)
    sc = SynthScenario(duration_sweeps=256, num_bins=128, window=64, stripe=off, dotted=off,
                       high_intensity=off, edge_gradient=ActivitySpec(rate=0.0), seed=1)
    m, boxes, classes = synthesize(sc)
    assert boxes == [] and np.all(classes == CLASS_IDS["idle"])


def test_synth_single_stripe_box():
    off = ActivitySpec(rate=0.0)
    sc = SynthScenario(duration_sweeps=256, num_bins=128, window=64, dotted=off, high_intensity=off,
                       edge_gradient=ActivitySpec(rate=0.0),
                       stripe=ActivitySpec(events=1, height=(3, 3), intensity=(20, 20)), seed=2)
    m, boxes, _ = synthesize(sc)
    assert len(boxes) == 1
    b = boxes[0]
    assert (b.bin_start, b.bin_end) == (0, 127) and b.sweep_end - b.sweep_start + 1 == 3
    rows = m.values[:, b.sweep_start : b.sweep_end + 1]
    assert rows.mean() > m.values.mean() + 10


def test_synth_deterministic():
    a = synthesize(six_class_scenario(5, num_windows=20))
    b = synthesize(six_class_scenario(5, num_windows=20))
    assert a[0].values.tobytes() == b[0].values.tobytes()
    assert a[1] == b[1] and np.array_equal(a[2], b[2])


def test_synth_archetype_geometry():
    m, boxes, _ = synthesize(six_class_scenario(0, num_windows=60))
    kinds = {b.kind for b in boxes}
    assert kinds == {"stripe", "dotted", "high_intensity"}
    for b in boxes:
        h = b.sweep_end - b.sweep_start + 1
        w = b.bin_end - b.bin_start + 1
        if b.kind == "stripe":
            assert w == m.num_bins and 1 <= h <= 4
        if b.kind == "high_intensity":
            assert 20 <= h <= 80 and 10 <= w <= 30


def test_tile_classes_largest_overlap_then_lowest_id():
    W = 4
    boxes = [BoundingBoxLabel(0, 3, 0, 0, "stripe"), BoundingBoxLabel(0, 1, 0, 1, "dotted")]
    assert tile_classes(boxes, 4, 4, W).tolist() == [CLASS_IDS["stripe"]]
    boxes = [BoundingBoxLabel(0, 3, 0, 0, "stripe"), BoundingBoxLabel(0, 1, 0, 2, "dotted")]
    assert tile_classes(boxes, 4, 4, W).tolist() == [CLASS_IDS["dotted"]]


def test_presets_have_six_classes_and_forty_percent_active():
    m, b, c = synthesize(six_class_scenario(0))
    assert len(c) >= 2000 and set(c.tolist()) == set(range(6))
    assert np.bincount(c).min() / len(c) > 0.08
    m, b, _ = synthesize(detection_scenario(0))
    labels = adapt_labels(segment(m, 64), b, exhaustive=True).labels
    assert abs((labels == ACTIVE).mean() - 0.4) < 0.06


def test_scenario_from_dict_validation():
    sc = SynthScenario.from_dict({"duration_sweeps": 128, "stripe": {"rate": 2.0}, "idle": {}})
    assert sc.stripe.rate == 2.0
    with pytest.raises(ConfigError):
        SynthScenario.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        SynthScenario.from_dict({"stripe": {"rate": -1.0}})
