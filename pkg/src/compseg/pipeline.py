"""End-to-end wiring: model initialization from box-labeled feature maps,
and per-proposal segmentation (classify -> align -> complete box -> tri-state
mask). The CLI and the demo scripts are thin shells over this module.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .context import classify_context_map, learn_context_dictionary
from .geometry import (
    Alignment,
    align_partial,
    centered_alignment,
    complete_amodal_box,
    to_image_frame,
)
from .models import (
    ClassModel,
    OutlierModel,
    classify,
    estimate_coefficients,
    init_mixture_assignment,
    learn_outlier_models,
)
from .priors import learn_priors_for_model
from .segmentation import MaskSet, amodal_segment
from .tensors import Box, FeatureMap, LabelGrid, load_feature_map, load_label_grid
from .vmf import VmfDictionary, init_dictionary

log = logging.getLogger(__name__)


@dataclass
class Record:
    """Manifest-backed scene record (mirrors synth.SceneRecord fields)."""

    fmap: FeatureMap
    y: int
    pose: int
    shift: tuple[int, int]
    modal_box: Box
    amodal_box: Box
    labels: LabelGrid | None
    fg_level: int
    bg_level: int


def load_dataset(data_dir) -> tuple[list[Record], dict]:
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    records = []
    for row in manifest["records"]:
        fmap = load_feature_map(data_dir / row["fmap"])
        labels = (
            load_label_grid(data_dir / row["labels"]) if row.get("labels") else None
        )
        records.append(
            Record(
                fmap=fmap,
                y=int(row["class"]),
                pose=int(row.get("pose", -1)),
                shift=tuple(row.get("shift", (0, 0))),
                modal_box=Box(*row["modal_box"], frame="image"),
                amodal_box=Box(*row["amodal_box"], frame="image"),
                labels=labels,
                fg_level=int(row.get("fg_level", 0)),
                bg_level=int(row.get("bg_level", 0)),
            )
        )
    return records, manifest


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def bootstrap_labels(records: list, ctx_dict) -> list[LabelGrid]:
    """Weak-supervision labels: cosine-threshold inside the box, 0 outside."""
    out = []
    for rec in records:
        grid = np.zeros((rec.fmap.height, rec.fmap.width), dtype=np.int8)
        r0, c0, h, w = rec.modal_box.cell_window()
        r0, c0 = max(0, r0), max(0, c0)
        r1 = min(rec.fmap.height, r0 + h)
        c1 = min(rec.fmap.width, c0 + w)
        inner = FeatureMap(rec.fmap.data[r0:r1, c0:c1].copy())
        grid[r0:r1, c0:c1] = classify_context_map(inner, ctx_dict).labels
        out.append(LabelGrid(grid))
    return out


def outside_box_cells(rec) -> np.ndarray:
    mask = np.ones((rec.fmap.height, rec.fmap.width), dtype=bool)
    r0, c0, h, w = rec.modal_box.cell_window()
    mask[max(0, r0) : r0 + h, max(0, c0) : c0 + w] = False
    return rec.fmap.data[mask]


def init_models(
    training: dict[int, list],
    background_maps: list[FeatureMap],
    k: int,
    m: int,
    sigma: float,
    epsilon: float,
    q: int,
    n_outliers: int,
    seed: int,
    dict_samples: int = 20000,
) -> tuple[list[ClassModel], OutlierModel, dict]:
    """Dictionaries, context models, assignments, priors and coefficients.

    ``training`` maps class id -> unoccluded records. Returns the models,
    the outlier model, and the per-class (assignment, labels) state used to
    seed prior refinement.
    """
    rng = np.random.default_rng(seed)
    all_records = [rec for recs in training.values() for rec in recs]
    pool = np.concatenate([rec.fmap.data.reshape(-1, rec.fmap.depth) for rec in all_records])
    take = min(dict_samples, pool.shape[0])
    idx = rng.choice(pool.shape[0], size=take, replace=False)
    dictionary = init_dictionary(pool[idx], k, sigma, seed=int(rng.integers(2**31)))

    models = []
    state = {}
    for y in sorted(training.keys()):
        recs = training[y]
        outside = np.concatenate([outside_box_cells(rec) for rec in recs])
        if outside.shape[0] > dict_samples:
            pick = rng.choice(outside.shape[0], size=dict_samples, replace=False)
            outside = outside[pick]
        ctx_dict = learn_context_dictionary(outside, q, seed=int(rng.integers(2**31)))
        labels = bootstrap_labels(recs, ctx_dict)
        maps = [rec.fmap for rec in recs]
        assignment = init_mixture_assignment(
            maps, m, dictionary, seed=int(rng.integers(2**31))
        )
        fg, ctx, assignment = estimate_coefficients(maps, assignment, labels, dictionary, m)
        prior = learn_priors_for_model(labels, assignment, m, epsilon)
        models.append(
            ClassModel(
                y=y,
                fg_coeffs=fg,
                ctx_coeffs=ctx,
                prior=prior,
                dictionary=dictionary,
                context_dict=ctx_dict,
                epsilon=epsilon,
            )
        )
        state[y] = (assignment, labels)

    outliers = learn_outlier_models(
        background_maps, n_outliers, dictionary, seed=int(rng.integers(2**31))
    )
    return models, outliers, state


def with_constant_prior(models: list[ClassModel], omega: float) -> list[ClassModel]:
    """Ablation: replace every spatial prior with the constant omega."""
    out = []
    for model in models:
        w = float(np.clip(omega, model.epsilon, 1 - model.epsilon))
        out.append(
            ClassModel(
                y=model.y,
                fg_coeffs=model.fg_coeffs.copy(),
                ctx_coeffs=model.ctx_coeffs.copy(),
                prior=np.full_like(model.prior, w),
                dictionary=model.dictionary,
                context_dict=model.context_dict,
                epsilon=model.epsilon,
            )
        )
    return out


def with_gt_priors(
    models: list[ClassModel], training: dict[int, list]
) -> list[ClassModel]:
    """Ablation upper bound: priors and coefficients from GT masks and poses."""
    out = []
    for model in models:
        recs = training[model.y]
        if any(rec.labels is None or rec.pose < 0 for rec in recs):
            raise ValueError("gt-prior mode needs GT labels and pose ids")
        assignment = np.array([rec.pose for rec in recs])
        labels = [rec.labels for rec in recs]
        maps = [rec.fmap for rec in recs]
        fg, ctx, assignment = estimate_coefficients(
            maps, assignment, labels, model.dictionary, model.M
        )
        prior = learn_priors_for_model(labels, assignment, model.M, model.epsilon)
        out.append(
            ClassModel(
                y=model.y,
                fg_coeffs=fg,
                ctx_coeffs=ctx,
                prior=prior,
                dictionary=model.dictionary,
                context_dict=model.context_dict,
                epsilon=model.epsilon,
            )
        )
    return out


# ---------------------------------------------------------------------------
# per-proposal segmentation
# ---------------------------------------------------------------------------


@dataclass
class SegmentResult:
    y_hat: int
    m_hat: int
    alignment: Alignment
    amodal_box: Box  # image frame
    clipped: bool
    prediction: LabelGrid  # full-scene tri-state labels
    mask: MaskSet  # window-level masks + posterior
    window_origin_scene: tuple[int, int]

    def sidecar(self) -> dict:
        post = self.mask.posterior
        return {
            "y_hat": self.y_hat,
            "m_hat": self.m_hat,
            "d": list(self.alignment.d),
            "score": self.alignment.score,
            "amodal_box": self.amodal_box.as_list(),
            "clipped": self.clipped,
            "posterior_mean": float(post.mean()),
            "posterior_max": float(post.max()),
            "modal_cells": len(self.mask.modal_mask),
            "occluded_cells": len(self.mask.occluded_mask),
        }


def _crop_window(fmap: FeatureMap, box: Box) -> tuple[FeatureMap, tuple[int, int]]:
    r0, c0, h, w = box.cell_window()
    r0 = max(0, r0)
    c0 = max(0, c0)
    r1 = min(fmap.height, r0 + h)
    c1 = min(fmap.width, c0 + w)
    if r1 <= r0 or c1 <= c0:
        raise ValueError("proposal box does not intersect the scene")
    return FeatureMap(fmap.data[r0:r1, c0:c1].copy()), (r0, c0)


def segment_record(
    scene: FeatureMap,
    given_box: Box,
    models: list[ClassModel],
    outliers: OutlierModel,
    supervision: str = "modal",
    normalize: str = "sum",
) -> SegmentResult:
    """Classify, align, complete the box, and produce the tri-state mask.

    modal supervision runs the full placement search and completes the
    amodal box by mirrored displacement; amodal supervision trusts the given
    box (centered alignment) and segments within it.
    """
    if supervision not in ("modal", "amodal"):
        raise ValueError("supervision must be 'modal' or 'amodal'")
    if given_box.frame != "image":
        raise ValueError("proposal boxes must be in the image frame")
    crop, (ir0, ic0) = _crop_window(scene, given_box)
    fh, fw = crop.height, crop.width
    crop_box_img = Box.from_cells(ir0, ic0, fh, fw, frame="image")

    best: tuple[float, int, Alignment] | None = None
    for model in models:
        align = (
            align_partial(crop, model, normalize=normalize)
            if supervision == "modal"
            else centered_alignment(crop, model, normalize=normalize)
        )
        if best is None or align.score > best[0]:
            best = (align.score, model.y, align)
    assert best is not None
    _, y_hat, align = best
    model = next(mod for mod in models if mod.y == y_hat)
    rh, rw = model.lattice

    if supervision == "modal":
        b_rep = Box(align.d[0], align.d[1], float(fh), float(fw), frame="representation")
        amodal_rep = complete_amodal_box(b_rep, (rh / 2.0, rw / 2.0))
        amodal_img, clipped = to_image_frame(
            amodal_rep, align, crop_box_img, image_dims=(scene.height, scene.width)
        )
    else:
        amodal_rep = Box(
            align.d[0], align.d[1], float(fh), float(fw), frame="representation"
        )
        amodal_img, clipped = given_box, False

    # window = amodal box on the representation lattice, limited to cells
    # that are backed by scene features through the alignment translation
    off_r = ir0 - align.origin[0]
    off_c = ic0 - align.origin[1]
    wr0 = max(int(np.floor(amodal_rep.x0)), 0, -off_r)
    wr1 = min(int(np.ceil(amodal_rep.x1)), rh, scene.height - off_r)
    wc0 = max(int(np.floor(amodal_rep.y0)), 0, -off_c)
    wc1 = min(int(np.ceil(amodal_rep.y1)), rw, scene.width - off_c)
    if wr1 <= wr0 or wc1 <= wc0:
        raise ValueError("amodal window collapsed to nothing")
    window = FeatureMap(
        scene.data[wr0 + off_r : wr1 + off_r, wc0 + off_c : wc1 + off_c].copy()
    )
    z, mask = amodal_segment(window, align.m_hat, model, outliers, origin=(wr0, wc0))

    full = np.zeros((scene.height, scene.width), dtype=np.int8)
    full[wr0 + off_r : wr1 + off_r, wc0 + off_c : wc1 + off_c] = z.labels
    return SegmentResult(
        y_hat=y_hat,
        m_hat=align.m_hat,
        alignment=align,
        amodal_box=amodal_img,
        clipped=clipped,
        prediction=LabelGrid(full),
        mask=mask,
        window_origin_scene=(wr0 + off_r, wc0 + off_c),
    )


def classify_record(
    scene: FeatureMap, models: list[ClassModel]
) -> tuple[int, int, float]:
    """Full-lattice classification when the scene matches the model lattice."""
    return classify(scene, models)
