import json

import numpy as np
import pytest
from PIL import Image

from fmap_exporter import ExportJob, Proposal, export, write_fmap
from fmap_exporter.backbone import Backbone

# cross-component check: the consuming engine's loader must accept our bytes
from compseg.tensors import load_feature_map_with_report

LATTICE = (14, 14)


def make_image(path, size=(96, 96), flat=None, seed=0):
    rng = np.random.default_rng(seed)
    if flat is not None:
        arr = np.full((size[1], size[0], 3), flat, dtype=np.uint8)
    else:
        arr = rng.integers(0, 255, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)
    return path


@pytest.fixture(scope="module")
def backbone():
    return Backbone(arch="resnet18", layer="layer2", seed=0)


def test_stride_and_channels(backbone):
    assert backbone.stride == 8
    assert backbone.channels == 128


def test_activation_lattice_dims(backbone):
    rng = np.random.default_rng(1)
    crop = rng.integers(0, 255, size=(64, 80, 3), dtype=np.uint8)
    act = backbone.activations(crop, LATTICE)
    assert act.shape == (14, 14, 128)
    assert np.all(np.isfinite(act))


def test_export_two_proposals(tmp_path):
    img = make_image(tmp_path / "scene.png", seed=2)
    job = ExportJob(
        images=[img],
        proposals=[[Proposal(box=(40, 40, 60, 60)), Proposal(box=(50, 60, 30, 40), label=1)]],
        layer="layer2",
        lattice=LATTICE,
        out_dir=tmp_path / "out",
    )
    manifest = export(job)
    assert len(manifest["records"]) == 2
    doc = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert doc["channels"] == 128
    assert doc["records"][1]["class"] == 1
    assert doc["records"][0]["modal_box"] == [40.0, 40.0, 60.0, 60.0]


def test_exported_files_load_through_engine(tmp_path):
    """[SECONDARY] conformance: zero validation errors via the primary loader."""
    img = make_image(tmp_path / "scene.png", seed=3)
    job = ExportJob(
        images=[img],
        proposals=[[Proposal(box=(48, 48, 64, 64)), Proposal(box=(30, 50, 40, 52))]],
        layer="layer2",
        lattice=LATTICE,
        out_dir=tmp_path / "out",
    )
    manifest = export(job)
    for row in manifest["records"]:
        fmap, report = load_feature_map_with_report(tmp_path / "out" / row["fmap"])
        assert (fmap.height, fmap.width, fmap.depth) == (14, 14, 128)
        assert np.allclose(np.linalg.norm(fmap.data, axis=2), 1.0, atol=1e-6)


def test_flat_crop_yields_near_constant_rows(tmp_path):
    """[SECONDARY] a constant-color crop gives pairwise per-cell cosine >= 0.99."""
    img = make_image(tmp_path / "flat.png", flat=(128, 64, 200))
    job = ExportJob(
        images=[img],
        proposals=[[Proposal(box=(48, 48, 80, 80))]],
        layer="layer2",
        lattice=LATTICE,
        out_dir=tmp_path / "out",
    )
    manifest = export(job)
    fmap, _ = load_feature_map_with_report(tmp_path / "out" / manifest["records"][0]["fmap"])
    cells = fmap.data.reshape(-1, fmap.depth)
    cos = cells @ cells.T
    assert cos.min() >= 0.99


def test_channel_mismatch_rejected(tmp_path):
    img = make_image(tmp_path / "scene.png", seed=4)
    job = ExportJob(
        images=[img],
        proposals=[[Proposal(box=(48, 48, 40, 40))]],
        layer="layer2",
        lattice=LATTICE,
        out_dir=tmp_path / "out",
        channels=64,
    )
    with pytest.raises(ValueError, match="channels"):
        export(job)


def test_unreadable_image_rejected(tmp_path):
    bad = tmp_path / "nope.png"
    bad.write_bytes(b"not an image")
    job = ExportJob(
        images=[bad],
        proposals=[[Proposal(box=(10, 10, 8, 8))]],
        layer="layer2",
        lattice=LATTICE,
        out_dir=tmp_path / "out",
    )
    with pytest.raises(ValueError, match="unreadable"):
        export(job)


def test_out_of_bounds_box_rejected(tmp_path):
    img = make_image(tmp_path / "scene.png", seed=5)
    job = ExportJob(
        images=[img],
        proposals=[[Proposal(box=(10, 10, 40, 40))]],  # pokes above/left
        layer="layer2",
        lattice=LATTICE,
        out_dir=tmp_path / "out",
    )
    with pytest.raises(ValueError, match="outside image bounds"):
        export(job)


def test_write_fmap_validation(tmp_path):
    with pytest.raises(ValueError):
        write_fmap(np.ones((2, 2)), tmp_path / "x.fmap")
    with pytest.raises(ValueError):
        write_fmap(np.full((2, 2, 4), np.nan), tmp_path / "x.fmap")


def test_deterministic_given_seed(tmp_path):
    img = make_image(tmp_path / "scene.png", seed=6)
    outs = []
    for name in ("a", "b"):
        job = ExportJob(
            images=[img],
            proposals=[[Proposal(box=(48, 48, 64, 64))]],
            layer="layer2",
            lattice=LATTICE,
            out_dir=tmp_path / name,
            seed=11,
        )
        export(job)
        outs.append((tmp_path / name / "crop_00000.fmap").read_bytes())
    assert outs[0] == outs[1]
