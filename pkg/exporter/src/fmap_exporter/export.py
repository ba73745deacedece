"""Batch export: proposal crops -> FMAP files + manifest.

The manifest follows the engine's dataset schema: a ``records`` list with
``fmap`` paths and modal boxes as [cx, cy, h, w] (axis 0 = row), so the
output directory can be fed to ``compseg segment`` / ``eval`` directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import Backbone
from .fmap import write_fmap


@dataclass
class Proposal:
    box: tuple[float, float, float, float]  # cx, cy, h, w in image pixels
    label: int | None = None


@dataclass
class ExportJob:
    images: list  # paths
    proposals: list  # list of lists of Proposal, parallel to images
    layer: str
    lattice: tuple[int, int]
    out_dir: str
    arch: str = "resnet18"
    weights_path: str | None = None
    channels: int | None = None  # expected D; validated against the layer
    margin: int = 4
    seed: int = 0


def _crop(image: Image.Image, box) -> np.ndarray:
    cx, cy, h, w = box
    left, upper = cy - w / 2.0, cx - h / 2.0
    right, lower = cy + w / 2.0, cx + h / 2.0
    iw, ih = image.size
    if left < 0 or upper < 0 or right > iw or lower > ih:
        raise ValueError(f"box {box} outside image bounds {ih}x{iw}")
    if h <= 0 or w <= 0:
        raise ValueError(f"degenerate box {box}")
    region = image.crop((round(left), round(upper), round(right), round(lower)))
    return np.asarray(region.convert("RGB"))


def export(job: ExportJob) -> dict:
    """Run the backbone over every proposal crop; returns the manifest."""
    backbone = Backbone(
        arch=job.arch, layer=job.layer, weights_path=job.weights_path, seed=job.seed
    )
    if job.channels is not None and backbone.channels != job.channels:
        raise ValueError(
            f"layer {job.layer!r} emits {backbone.channels} channels, "
            f"config expects {job.channels}"
        )
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "backbone": job.arch,
        "layer": job.layer,
        "lattice": list(job.lattice),
        "channels": backbone.channels,
        "records": [],
    }
    idx = 0
    for image_path, props in zip(job.images, job.proposals):
        try:
            image = Image.open(image_path)
            image.load()
        except OSError as exc:
            raise ValueError(f"unreadable image {image_path}: {exc}") from exc
        for prop in props:
            crop = _crop(image, prop.box)
            act = backbone.activations(crop, job.lattice, margin=job.margin)
            name = f"crop_{idx:05d}.fmap"
            write_fmap(act, out / name)
            row = {
                "id": idx,
                "fmap": name,
                "image": str(image_path),
                "modal_box": [float(v) for v in prop.box],
                "amodal_box": [float(v) for v in prop.box],
                "class": prop.label if prop.label is not None else -1,
            }
            manifest["records"].append(row)
            idx += 1
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest
