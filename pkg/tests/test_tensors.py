import numpy as np
import pytest

from compseg.tensors import (
    Box,
    DimensionError,
    FeatureMap,
    FormatError,
    LabelGrid,
    MalformedHeaderError,
    TruncatedPayloadError,
    load_feature_map,
    load_feature_map_with_report,
    load_label_grid,
    normalize,
    save_feature_map,
    save_label_grid,
)


def test_normalize_simple():
    assert np.array_equal(normalize(np.array([3.0, 4.0])), np.array([0.6, 0.8]))


def test_normalize_zero_vector_maps_to_e1():
    assert np.array_equal(normalize(np.zeros(4)), np.array([1.0, 0.0, 0.0, 0.0]))


def test_normalize_rejects_non_finite():
    with pytest.raises(ValueError):
        normalize(np.array([1.0, np.nan]))


def test_normalize_exact_idempotence():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.standard_normal(rng.integers(2, 64)) * 10.0 ** float(rng.integers(-6, 6))
        once = normalize(v)
        assert np.array_equal(normalize(once), once)


def test_feature_map_invariants():
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((3, 4, 8))
    fmap, report = FeatureMap.from_raw(raw)
    assert np.allclose(np.linalg.norm(fmap.data, axis=2), 1.0, atol=1e-6)
    assert report.zero_vectors == 0
    with pytest.raises(ValueError):
        FeatureMap(raw)  # unnormalized
    with pytest.raises(DimensionError):
        FeatureMap(np.ones((0, 4, 8)))
    with pytest.raises(DimensionError):
        FeatureMap.from_raw(np.ones((2, 2, 1)))


def test_feature_map_is_immutable():
    fmap, _ = FeatureMap.from_raw(np.random.default_rng(2).standard_normal((2, 2, 4)))
    with pytest.raises(ValueError):
        fmap.data[0, 0, 0] = 5.0


def test_constant_payload_normalizes_to_half(tmp_path):
    raw = np.full((2, 2, 4), 7.25, dtype=np.float32)
    path = tmp_path / "c.fmap"
    fmap, _ = FeatureMap.from_raw(raw)
    save_feature_map(fmap, path)
    loaded = load_feature_map(path)
    assert np.array_equal(loaded.data, np.full((2, 2, 4), 0.5))


def test_zero_vectors_counted_and_replaced(tmp_path):
    raw = np.zeros((1, 2, 4), dtype=np.float32)
    raw[0, 1] = (0, 1, 0, 0)
    path = tmp_path / "z.fmap"
    with open(path, "wb") as fh:
        import struct

        fh.write(struct.pack("<4sHIII2s", b"FMAP", 1, 1, 2, 4, b"\x00\x00"))
        fh.write(raw.tobytes())
    fmap, report = load_feature_map_with_report(path)
    assert report.zero_vectors == 1
    assert np.array_equal(fmap.data[0, 0], [1, 0, 0, 0])


def test_fmap_header_and_size(tmp_path):
    fmap, _ = FeatureMap.from_raw(np.random.default_rng(3).standard_normal((3, 5, 8)))
    path = tmp_path / "a.fmap"
    save_feature_map(fmap, path)
    blob = path.read_bytes()
    assert blob[:4] == b"FMAP"
    # 20-byte header per the byte layout (magic 4, version 2, dims 12, pad 2)
    assert len(blob) == 20 + 3 * 5 * 8 * 4


def test_fmap_roundtrip_bitwise():
    import io
    import tempfile

    rng = np.random.default_rng(4)
    with tempfile.TemporaryDirectory() as td:
        for i in range(100):
            h, w, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(2, 17)
            fmap, _ = FeatureMap.from_raw(rng.standard_normal((h, w, d)))
            p1 = f"{td}/m{i}_1.fmap"
            p2 = f"{td}/m{i}_2.fmap"
            save_feature_map(fmap, p1)
            save_feature_map(load_feature_map(p1), p2)
            assert open(p1, "rb").read() == open(p2, "rb").read()


def test_fmap_load_errors(tmp_path):
    import struct

    good_header = struct.pack("<4sHIII2s", b"FMAP", 1, 2, 2, 4, b"\x00\x00")
    payload = np.ones((2, 2, 4), dtype="<f4").tobytes()

    p = tmp_path / "bad_magic"
    p.write_bytes(b"XMAP" + good_header[4:] + payload)
    with pytest.raises(MalformedHeaderError):
        load_feature_map(p)

    p = tmp_path / "bad_version"
    p.write_bytes(struct.pack("<4sHIII2s", b"FMAP", 2, 2, 2, 4, b"\x00\x00") + payload)
    with pytest.raises(MalformedHeaderError):
        load_feature_map(p)

    p = tmp_path / "bad_pad"
    p.write_bytes(struct.pack("<4sHIII2s", b"FMAP", 1, 2, 2, 4, b"\x01\x00") + payload)
    with pytest.raises(MalformedHeaderError):
        load_feature_map(p)

    p = tmp_path / "zero_h"
    p.write_bytes(struct.pack("<4sHIII2s", b"FMAP", 1, 0, 2, 4, b"\x00\x00") + payload)
    with pytest.raises(DimensionError):
        load_feature_map(p)

    p = tmp_path / "overflow"
    p.write_bytes(struct.pack("<4sHIII2s", b"FMAP", 1, 5000, 2, 4, b"\x00\x00") + payload)
    with pytest.raises(DimensionError):
        load_feature_map(p)

    p = tmp_path / "truncated"
    p.write_bytes(good_header + payload[:-8])
    with pytest.raises(TruncatedPayloadError):
        load_feature_map(p)

    p = tmp_path / "trailing"
    p.write_bytes(good_header + payload + b"xx")
    with pytest.raises(FormatError):
        load_feature_map(p)


def test_label_grid_validation_and_roundtrip(tmp_path):
    grid = LabelGrid(np.array([[1, 0, -1], [0, 0, 1]]))
    path = tmp_path / "labels.txt"
    save_label_grid(grid, path)
    text = path.read_text().splitlines()
    assert text[0] == "2 3"
    loaded = load_label_grid(path)
    assert np.array_equal(loaded.labels, grid.labels)
    with pytest.raises(ValueError):
        LabelGrid(np.array([[2, 0]]))


def test_box_basics():
    box = Box.from_cells(2, 3, 4, 5)
    assert (box.cx, box.cy, box.h, box.w) == (4.0, 5.5, 4.0, 5.0)
    assert box.cell_window() == (2, 3, 4, 5)
    with pytest.raises(ValueError):
        Box(0, 0, 0, 1)
    a = Box(5, 5, 2, 4)
    b = Box(5, 7, 2, 4)  # shifted to half overlap: 2x4 each, inter 2x2
    assert a.iou(b) == pytest.approx((2 * 2) / (2 * 4 * 2 - 4))
    assert Box(5, 5, 10, 10).contains_box(a)
    assert not a.contains_box(Box(5, 5, 10, 10))
