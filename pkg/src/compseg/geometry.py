"""Alignment of partial proposals onto the combined representation, and
amodal box completion by mirrored displacement.

Coordinate convention (global for the package): axis 0 ("x") is the row
axis and pairs with extent h; axis 1 ("y") is the column axis and pairs
with w. Cells are unit squares, cell (r, c) spanning [r, r+1) x [c, c+1),
so a window of h rows starting at r0 has center r0 + h/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ClassModel, combined_representation, grid_log_likelihood
from .tensors import Box, FeatureMap
from .vmf import cosine_grid

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Alignment:
    """Placement of a proposal crop on the representation lattice."""

    d: tuple[float, float]  # aligned crop center (row, col), continuous
    origin: tuple[int, int]  # top-left rep cell of the placed crop
    crop_shape: tuple[int, int]
    m_hat: int
    score: float


@dataclass(frozen=True)
class Displacement:
    j_h: float
    j_w: float

    def __post_init__(self):
        if self.j_h < 0 or self.j_w < 0:
            raise ValueError("displacement extents must be non-negative")


def placement_scores(
    fmap: FeatureMap,
    model: ClassModel,
    normalize: str = "sum",
) -> tuple[np.ndarray, tuple[int, int]]:
    """Scores of every placement: (n_r, n_c, M) array plus the origin of the
    placement grid (the r0/c0 of placement [0, 0]).

    Placement (r0, c0) puts crop cell (dr, dc) on representation cell
    (r0+dr, c0+dc). A zero feature vector has cosine 0 to every kernel, so
    with the shared-constant convention an out-of-overlap cell contributes
    exactly log(sum_k psi_k) = 0: the zero-padding construction reduces to
    the sum over overlapping cells, which is the default scoring. "mean"
    divides by the overlap count instead (it can favor small accidental
    overlaps and exists for comparison only). Legal placements keep the
    crop center on the lattice, so at least half the crop overlaps along
    each axis.
    """
    rh, rw = model.lattice
    fh, fw = fmap.height, fmap.width
    if fh > rh or fw > rw:
        raise ValueError(f"proposal {fh}x{fw} larger than lattice {rh}x{rw}")
    if normalize not in ("mean", "sum"):
        raise ValueError("normalize must be 'mean' or 'sum'")

    # center r0 + fh/2 in [0, rh]  =>  r0 in [-fh/2, rh - fh/2]
    r_lo, r_hi = -(fh // 2), rh - fh + (fh - fh // 2)
    c_lo, c_hi = -(fw // 2), rw - fw + (fw - fw // 2)
    n_r, n_c = r_hi - r_lo + 1, c_hi - c_lo + 1

    scores = model.dictionary.sigma * cosine_grid(fmap, model.dictionary)  # (fh,fw,K)
    smax = scores.max(axis=2, keepdims=True)
    act = np.exp(scores - smax)  # (fh, fw, K), in (0, 1]
    psi = combined_representation(model)  # (M, rh, rw, K)

    out = np.zeros((n_r, n_c, model.M))
    counts = np.zeros((n_r, n_c))
    ones = np.ones((n_r, n_c))
    for m in range(model.M):
        # T[dr, dc, ri, ci]: log-likelihood of crop cell against rep cell
        t = np.log(
            np.maximum(np.einsum("abk,ijk->abij", act, psi[m]), _LOG_FLOOR)
        ) + smax[..., 0][..., None, None]
        acc = np.zeros((n_r, n_c))
        cnt = np.zeros((n_r, n_c))
        for dr in range(fh):
            # representation row hit by this crop row: r0 + dr in [0, rh)
            p_lo = max(r_lo, -dr)
            p_hi = min(r_hi, rh - 1 - dr)
            if p_lo > p_hi:
                continue
            for dc in range(fw):
                q_lo = max(c_lo, -dc)
                q_hi = min(c_hi, rw - 1 - dc)
                if q_lo > q_hi:
                    continue
                block = t[
                    dr,
                    dc,
                    p_lo + dr : p_hi + dr + 1,
                    q_lo + dc : q_hi + dc + 1,
                ]
                sl = (
                    slice(p_lo - r_lo, p_hi - r_lo + 1),
                    slice(q_lo - c_lo, q_hi - c_lo + 1),
                )
                acc[sl] += block
                if m == 0:
                    cnt[sl] += ones[sl]
        out[:, :, m] = acc
        if m == 0:
            counts = cnt
    if normalize == "mean":
        out /= np.maximum(counts, 1.0)[:, :, None]
    return out, (r_lo, c_lo)


def align_partial(
    fmap: FeatureMap,
    model: ClassModel,
    search_stride: int = 1,
    normalize: str = "sum",
) -> Alignment:
    """Exhaustive argmax over placements and mixtures (lowest index on ties)."""
    scores, (r_lo, c_lo) = placement_scores(fmap, model, normalize=normalize)
    if search_stride > 1:
        mask = np.full(scores.shape[:2], -np.inf)
        mask[::search_stride, ::search_stride] = 0.0
        scores = scores + mask[:, :, None]
    flat = int(np.argmax(scores))
    pr, pc, m = np.unravel_index(flat, scores.shape)
    r0, c0 = r_lo + int(pr), c_lo + int(pc)
    fh, fw = fmap.height, fmap.width
    return Alignment(
        d=(r0 + fh / 2.0, c0 + fw / 2.0),
        origin=(r0, c0),
        crop_shape=(fh, fw),
        m_hat=int(m),
        score=float(scores[pr, pc, m]),
    )


def centered_alignment(
    fmap: FeatureMap, model: ClassModel, normalize: str = "sum"
) -> Alignment:
    """Alignment with the crop center fixed to the lattice center.

    Used when the amodal box is supplied: center alignment is then valid by
    construction, and only the mixture is searched.
    """
    rh, rw = model.lattice
    fh, fw = fmap.height, fmap.width
    if fh > rh or fw > rw:
        raise ValueError(f"proposal {fh}x{fw} larger than lattice {rh}x{rw}")
    r0 = (rh - fh) // 2
    c0 = (rw - fw) // 2
    scores = model.dictionary.sigma * cosine_grid(fmap, model.dictionary)
    psi = combined_representation(model)[:, r0 : r0 + fh, c0 : c0 + fw]  # (M,fh,fw,K)
    cell = grid_log_likelihood(scores[None], psi)  # (M, fh, fw)
    per_m = cell.sum(axis=(1, 2))
    if normalize == "mean":
        per_m = per_m / (fh * fw)
    m = int(np.argmax(per_m))
    return Alignment(
        d=(r0 + fh / 2.0, c0 + fw / 2.0),
        origin=(r0, c0),
        crop_shape=(fh, fw),
        m_hat=m,
        score=float(per_m[m]),
    )


def complete_amodal_box(box_rep: Box, c_prime: tuple[float, float]) -> Box:
    """Mirror the larger center-to-edge distance about the object center.

    j_h = max(c'_x - (B_x - B_h/2), (B_x + B_h/2) - c'_x), same for j_w;
    the amodal box is [c'_x, c'_y, 2 j_h, 2 j_w]. Never clipped here.
    """
    if box_rep.frame != "representation":
        raise ValueError("modal box must be in the representation frame")
    cx, cy = c_prime
    j_h = max(cx - box_rep.x0, box_rep.x1 - cx)
    j_w = max(cy - box_rep.y0, box_rep.y1 - cy)
    return Box(cx, cy, 2.0 * j_h, 2.0 * j_w, frame="representation")


def displacement_for(box_rep: Box, c_prime: tuple[float, float]) -> Displacement:
    cx, cy = c_prime
    return Displacement(
        j_h=max(cx - box_rep.x0, box_rep.x1 - cx),
        j_w=max(cy - box_rep.y0, box_rep.y1 - cy),
    )


def to_image_frame(
    box_rep: Box,
    alignment: Alignment,
    proposal_box_image: Box,
    image_dims: tuple[int, int] | None = None,
) -> tuple[Box, bool]:
    """Map a representation-frame box back through the alignment transform.

    The proposal's image box spans the crop lattice, so scale is
    (image extent / crop cells) per axis and representation coordinate rho
    maps to prop_center + (rho - d) * scale. Returns (box, clipped_flag);
    clipping against image_dims intersects intervals and is flagged.
    """
    if box_rep.frame != "representation":
        raise ValueError("expected a representation-frame box")
    if proposal_box_image.frame != "image":
        raise ValueError("proposal box must be in the image frame")
    fh, fw = alignment.crop_shape
    if fh <= 0 or fw <= 0 or proposal_box_image.h <= 0 or proposal_box_image.w <= 0:
        raise ValueError("degenerate proposal box")
    sr = proposal_box_image.h / fh
    sc = proposal_box_image.w / fw
    dx, dy = alignment.d
    cx = proposal_box_image.cx + (box_rep.cx - dx) * sr
    cy = proposal_box_image.cy + (box_rep.cy - dy) * sc
    h, w = box_rep.h * sr, box_rep.w * sc
    clipped = False
    if image_dims is not None:
        ih, iw = image_dims
        x0, x1 = max(0.0, cx - h / 2), min(float(ih), cx + h / 2)
        y0, y1 = max(0.0, cy - w / 2), min(float(iw), cy + w / 2)
        if x1 - x0 < h - 1e-12 or y1 - y0 < w - 1e-12:
            clipped = True
        if x1 <= x0 or y1 <= y0:
            raise ValueError("box entirely outside the image")
        cx, cy, h, w = (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0
    return Box(cx, cy, h, w, frame="image"), clipped
