"""Modal (binary) and amodal (tri-state) segmentation plus rasterization.

Tri-state rule per cell, with F = prior * p(f|A), C = (1-prior) * p(f|chi),
O = prior * p(f|outlier):

    z =  1  if log F strictly exceeds both others,
    z =  0  if log C strictly exceeds both others,
    z = -1  otherwise (outlier wins, and every exact tie).

Modal segmentation drops the outlier branch; its ties go to context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import (
    ClassModel,
    OutlierModel,
    branch_terms,
    grid_log_likelihood,
)
from .tensors import Box, FeatureMap, LabelGrid
from .vmf import cosine_grid

PGM_CONTEXT = 0
PGM_OCCLUDED = 128
PGM_FOREGROUND = 255


@dataclass(frozen=True)
class MaskSet:
    """Cell masks from one tri-state segmentation.

    Cell coordinates are (row, col) tuples on the segmented window's grid.
    ``posterior`` is the continuous foreground posterior used in training.
    """

    labels: LabelGrid
    posterior: np.ndarray

    def __post_init__(self):
        if self.posterior.shape != self.labels.labels.shape:
            raise ValueError("posterior grid must match the label grid")
        if np.any(self.posterior < 0) or np.any(self.posterior > 1):
            raise ValueError("posterior values must lie in [0, 1]")

    @property
    def modal_mask(self) -> frozenset:
        return _cells(self.labels.labels == 1)

    @property
    def occluded_mask(self) -> frozenset:
        return _cells(self.labels.labels == -1)

    @property
    def amodal_mask(self) -> frozenset:
        return self.modal_mask | self.occluded_mask


def _cells(mask: np.ndarray) -> frozenset:
    rr, cc = np.nonzero(mask)
    return frozenset(zip(rr.tolist(), cc.tolist()))


def modal_segment(fmap: FeatureMap, m: int, model: ClassModel) -> LabelGrid:
    """Binary foreground/context labels by the likelihood-ratio rule."""
    fg, ctx = branch_terms(fmap, m, model)
    return LabelGrid((fg > ctx).astype(np.int8))


def tri_state_terms(
    fmap: FeatureMap,
    m: int,
    model: ClassModel,
    outliers: OutlierModel,
    origin: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(gF, gC, gO) log-term grids for a window placed on the lattice.

    ``origin`` is the representation cell under the window's (0, 0); the
    window must lie fully on the lattice.
    """
    rh, rw = model.lattice
    r0, c0 = origin
    fh, fw = fmap.height, fmap.width
    if r0 < 0 or c0 < 0 or r0 + fh > rh or c0 + fw > rw:
        raise ValueError(
            f"window {fh}x{fw}@{origin} is misaligned with the {rh}x{rw} lattice"
        )
    scores = model.dictionary.sigma * cosine_grid(fmap, model.dictionary)
    p = model.prior[m, r0 : r0 + fh, c0 : c0 + fw]
    fg_ll = grid_log_likelihood(scores, model.fg_coeffs[m, r0 : r0 + fh, c0 : c0 + fw])
    ctx_ll = grid_log_likelihood(scores, model.ctx_coeffs[m, r0 : r0 + fh, c0 : c0 + fw])
    out_ll = np.stack(
        [grid_log_likelihood(scores, outliers.coeffs[j]) for j in range(outliers.n)]
    ).max(axis=0)
    g_f = np.log(p) + fg_ll
    g_c = np.log1p(-p) + ctx_ll
    g_o = np.log(p) + out_ll
    return g_f, g_c, g_o


def amodal_segment(
    fmap: FeatureMap,
    m: int,
    model: ClassModel,
    outliers: OutlierModel,
    origin: tuple[int, int] = (0, 0),
) -> tuple[LabelGrid, MaskSet]:
    """Tri-state labels plus the stable foreground posterior grid."""
    g_f, g_c, g_o = tri_state_terms(fmap, m, model, outliers, origin)
    z = np.full(g_f.shape, -1, dtype=np.int8)
    z[(g_f > g_c) & (g_f > g_o)] = 1
    z[(g_c > g_f) & (g_c > g_o)] = 0
    hi = np.maximum(np.maximum(g_f, g_c), g_o)
    e_f = np.exp(g_f - hi)
    posterior = e_f / (e_f + np.exp(g_c - hi) + np.exp(g_o - hi))
    labels = LabelGrid(z)
    return labels, MaskSet(labels=labels, posterior=posterior)


def rasterize(
    mask: MaskSet,
    amodal_box_image: Box,
    image_dims: tuple[int, int],
) -> np.ndarray:
    """Nearest-neighbor upsampling of window labels into the box footprint.

    Returns a uint8 image-resolution mask with PGM_* values; pixels outside
    the box stay context. A box exceeding the image is clipped.
    """
    if amodal_box_image.frame != "image":
        raise ValueError("rasterize expects an image-frame box")
    ih, iw = image_dims
    out = np.zeros((ih, iw), dtype=np.uint8)
    gh, gw = mask.labels.height, mask.labels.width
    x0, x1 = amodal_box_image.x0, amodal_box_image.x1
    y0, y1 = amodal_box_image.y0, amodal_box_image.y1
    px0, px1 = max(0, int(np.floor(x0))), min(ih, int(np.ceil(x1)))
    py0, py1 = max(0, int(np.floor(y0))), min(iw, int(np.ceil(y1)))
    if px0 >= px1 or py0 >= py1:
        return out
    rows = np.arange(px0, px1)
    cols = np.arange(py0, py1)
    # nearest cell: pixel centers mapped into lattice coordinates
    rr = np.clip(((rows + 0.5 - x0) / (x1 - x0) * gh).astype(np.int64), 0, gh - 1)
    cc = np.clip(((cols + 0.5 - y0) / (y1 - y0) * gw).astype(np.int64), 0, gw - 1)
    lab = mask.labels.labels[np.ix_(rr, cc)]
    lut = {1: PGM_FOREGROUND, -1: PGM_OCCLUDED, 0: PGM_CONTEXT}
    block = np.zeros_like(lab, dtype=np.uint8)
    for value, pix in lut.items():
        block[lab == value] = pix
    out[px0:px1, py0:py1] = block
    return out


def label_grid_to_pgm_values(grid: LabelGrid) -> np.ndarray:
    out = np.zeros(grid.labels.shape, dtype=np.uint8)
    out[grid.labels == 1] = PGM_FOREGROUND
    out[grid.labels == -1] = PGM_OCCLUDED
    return out


def write_pgm(values: np.ndarray, path) -> None:
    """Binary PGM (P5), maxval 255."""
    if values.dtype != np.uint8 or values.ndim != 2:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(values.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    parts = data.split(b"\n", 3)
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[3][: h * w], dtype=np.uint8).reshape(h, w)
