"""Backbone loading and per-crop activation extraction.

Any torchvision classification model works; the layer is named by its
feature-extraction node (e.g. "layer2" for ResNets). Pretrained weights are
read from a local state-dict file when given, otherwise the architecture
runs with its random initialization (fine for format-level work; bring
weights for real features).

Each crop is resized so the chosen layer yields exactly the canonical
lattice, with a context margin around it that is cut away afterwards so
zero-padding artifacts at the feature-map border never reach the output.
"""

from __future__ import annotations

import numpy as np
import torch
from torchvision import models
from torchvision.models.feature_extraction import create_feature_extractor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Backbone:
    def __init__(
        self,
        arch: str = "resnet18",
        layer: str = "layer2",
        weights_path: str | None = None,
        seed: int = 0,
    ):
        if not hasattr(models, arch):
            raise ValueError(f"unknown torchvision architecture {arch!r}")
        torch.manual_seed(seed)
        model = getattr(models, arch)(weights=None)
        if weights_path:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        model.eval()
        try:
            self.extractor = create_feature_extractor(model, return_nodes={layer: "feat"})
        except ValueError as exc:
            raise ValueError(f"model {arch!r} has no node named {layer!r}") from exc
        self.arch = arch
        self.layer = layer
        self.stride, self.channels = self._probe()

    def _probe(self) -> tuple[int, int]:
        size = 224
        with torch.no_grad():
            out = self.extractor(torch.zeros(1, 3, size, size))["feat"]
        _, c, h, w = out.shape
        if size % h != 0 or size % w != 0 or h != w:
            raise ValueError(f"layer {self.layer!r} stride is not uniform on {size}")
        return size // h, int(c)

    def activations(self, crop: np.ndarray, lattice: tuple[int, int], margin: int = 4) -> np.ndarray:
        """(H, W, C) float32 activations of one RGB crop at the lattice dims."""
        lh, lw = lattice
        in_h = (lh + 2 * margin) * self.stride
        in_w = (lw + 2 * margin) * self.stride
        # PIL-backed arrays are read-only; torch wants writable memory
        x = torch.from_numpy(np.array(crop, copy=True)).float().permute(2, 0, 1) / 255.0
        x = (x - torch.tensor(IMAGENET_MEAN)[:, None, None]) / torch.tensor(
            IMAGENET_STD
        )[:, None, None]
        x = torch.nn.functional.interpolate(
            x[None], size=(in_h, in_w), mode="bilinear", align_corners=False
        )
        with torch.no_grad():
            feat = self.extractor(x)["feat"][0]  # (C, H+2m, W+2m)
        feat = feat[:, margin : margin + lh, margin : margin + lw]
        return feat.permute(1, 2, 0).numpy().astype(np.float32)
