"""Ground-truth compositional worlds and occluded-scene rendering.

A world holds unit kernel directions for class parts, context and (unseen)
occluders, plus per-class binary pose templates with a kernel id per cell.
Scenes sample vMF noise around those directions; an occluder blob replaces
cells with occluder-kernel samples so that the occluded fractions of object
and context fall inside the requested level bands:

    FG levels  0: none   1: 20-40%   2: 40-60%   3: 60-80%  of object
    BG levels  0: none   1: 1-20%    2: 20-40%   3: 40-60%  of context

One part region per class deliberately uses a kernel moderately close to a
context center, so the cosine-threshold bootstrap mislabels it about half
the time; prior refinement has to earn back that region.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensors import Box, FeatureMap, LabelGrid, save_feature_map, save_label_grid

FG_BANDS = {0: (0.0, 0.0), 1: (0.2, 0.4), 2: (0.4, 0.6), 3: (0.6, 0.8)}
BG_BANDS = {0: (0.0, 0.0), 1: (0.01, 0.2), 2: (0.2, 0.4), 3: (0.4, 0.6)}

STANDARD_LEVELS = [(0, 0)] + [(f, b) for f in (1, 2, 3) for b in (1, 2, 3)]


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    d: int = 32
    c: int = 3
    m_true: int = 2
    lattice: tuple[int, int] = (28, 28)
    parts_per_class: int = 5
    q_true: int = 3
    occluder_kernel_count: int = 3
    sigma_gen: float = 40.0
    context_like_cos: float = 0.70
    shift_range: int = 4
    area_range: tuple[float, float] = (0.14, 0.30)
    max_template_iou: float = 0.7
    margin: int = 4


@dataclass(frozen=True)
class Template:
    mask: np.ndarray  # (H, W) bool
    kernel_ids: np.ndarray  # (H, W) int, -1 outside the mask
    bbox: Box  # image frame

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class World:
    spec: WorldSpec
    class_kernels: np.ndarray  # (C, P, D) unit rows
    context_kernels: np.ndarray  # (Q, D)
    occluder_kernels: np.ndarray  # (O, D)
    templates: tuple  # templates[y][m] -> Template


@dataclass(frozen=True)
class SceneRecord:
    fmap: FeatureMap
    y: int
    pose: int
    shift: tuple[int, int]
    modal_box: Box
    amodal_box: Box
    labels: LabelGrid
    fg_level: int
    bg_level: int
    fg_occluded: float
    bg_occluded: float
    occluder_mask: np.ndarray | None = None  # full occluder region, (H, W) bool


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def random_unit(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_vmf(mu: np.ndarray, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Wood's tangent-normal method around one mean direction."""
    d = mu.shape[0]
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa**2 + (d - 1) ** 2)) / (d - 1)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1) * np.log(1.0 - x0**2)
    ws = np.empty(n)
    got = 0
    while got < n:
        m = max(n - got, 16)
        z = rng.beta((d - 1) / 2.0, (d - 1) / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        ok = kappa * w + (d - 1) * np.log1p(-x0 * w) - c >= np.log(u)
        take = min(int(ok.sum()), n - got)
        ws[got : got + take] = w[ok][:take]
        got += take
    v = rng.standard_normal((n, d))
    v -= (v @ mu)[:, None] * mu[None, :]
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    out = np.sqrt(np.maximum(1.0 - ws**2, 0.0))[:, None] * v + ws[:, None] * mu[None, :]
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _rejection_unit(
    rng: np.random.Generator, d: int, others: list[np.ndarray], max_cos: float
) -> np.ndarray:
    for _ in range(2000):
        v = random_unit(rng, 1, d)[0]
        if all(abs(float(v @ o)) <= max_cos for o in others):
            return v
    raise RuntimeError("could not sample a sufficiently distant kernel direction")


def _toward(anchor: np.ndarray, rng: np.random.Generator, cos_target: float) -> np.ndarray:
    """Unit vector at the given cosine to ``anchor``."""
    d = anchor.shape[0]
    v = random_unit(rng, 1, d)[0]
    v -= (v @ anchor) * anchor
    v /= np.linalg.norm(v)
    return cos_target * anchor + np.sqrt(1.0 - cos_target**2) * v


# ---------------------------------------------------------------------------
# world generation
# ---------------------------------------------------------------------------


def _blob_mask(rng: np.random.Generator, h: int, w: int, margin: int) -> np.ndarray:
    """Union of an elongated (usually diagonal) ellipse and boundary bumps.

    Thin rotated shapes leave real context inside their bounding boxes,
    which is what makes the spatial prior earn its keep.
    """
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = h / 2 + rng.uniform(-1.5, 1.5), w / 2 + rng.uniform(-1.5, 1.5)
    a = rng.uniform(h / 4.6, h / 3.0)
    b = rng.uniform(w / 9.0, w / 5.5)
    theta = rng.uniform(0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    u = (yy - cy) * ct + (xx - cx) * st
    v = -(yy - cy) * st + (xx - cx) * ct
    mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    for _ in range(rng.integers(1, 4)):
        phi = rng.uniform(0, 2 * np.pi)
        by = cy + a * np.cos(phi) * ct - b * np.sin(phi) * st
        bx = cx + a * np.cos(phi) * st + b * np.sin(phi) * ct
        r = rng.uniform(1.5, max(2.0, h / 9))
        mask |= (yy - by) ** 2 + (xx - bx) ** 2 <= r**2
    # clip to the margin band
    mask[:margin, :] = False
    mask[h - margin :, :] = False
    mask[:, :margin] = False
    mask[:, w - margin :] = False
    return mask


def _recenter(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    rr, cc = np.nonzero(mask)
    bc_r = (rr.min() + rr.max() + 1) / 2.0
    bc_c = (cc.min() + cc.max() + 1) / 2.0
    sr = int(round(h / 2.0 - bc_r))
    sc = int(round(w / 2.0 - bc_c))
    out = np.zeros_like(mask)
    nr = rr + sr
    nc = cc + sc
    keep = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
    out[nr[keep], nc[keep]] = True
    return out


def _partition(mask: np.ndarray, parts: int, rng: np.random.Generator) -> np.ndarray:
    """Kernel id per cell: nearest of ``parts`` farthest-point anchors."""
    rr, cc = np.nonzero(mask)
    pts = np.stack([rr, cc], axis=1).astype(float)
    anchors = [pts[rng.integers(len(pts))]]
    for _ in range(1, parts):
        d2 = np.min(
            [((pts - a) ** 2).sum(1) for a in anchors], axis=0
        )
        anchors.append(pts[int(np.argmax(d2))])
    anchors = np.stack(anchors)
    owner = np.argmin(((pts[:, None, :] - anchors[None]) ** 2).sum(2), axis=1)
    ids = np.full(mask.shape, -1, dtype=np.int64)
    ids[rr, cc] = owner
    return ids


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter) / float(union) if union else 1.0


def _bbox(mask: np.ndarray, frame: str = "image") -> Box:
    rr, cc = np.nonzero(mask)
    r0, r1 = int(rr.min()), int(rr.max()) + 1
    c0, c1 = int(cc.min()), int(cc.max()) + 1
    return Box.from_cells(r0, c0, r1 - r0, c1 - c0, frame=frame)


def generate_world(spec: WorldSpec) -> World:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.lattice
    d = spec.d

    context_kernels = random_unit(rng, spec.q_true, d)
    class_kernels = np.empty((spec.c, spec.parts_per_class, d))
    taken: list[np.ndarray] = [k for k in context_kernels]
    for y in range(spec.c):
        # part 0 sits deliberately close to a context center
        class_kernels[y, 0] = _toward(
            context_kernels[y % spec.q_true], rng, spec.context_like_cos
        )
        for p in range(1, spec.parts_per_class):
            v = _rejection_unit(rng, d, taken, max_cos=0.45)
            class_kernels[y, p] = v
            taken.append(v)
    occluder_kernels = np.stack(
        [
            _rejection_unit(
                rng,
                d,
                taken + [class_kernels[y, 0] for y in range(spec.c)],
                max_cos=0.25,
            )
            for _ in range(spec.occluder_kernel_count)
        ]
    )

    lo, hi = spec.area_range
    all_masks: list[np.ndarray] = []
    templates = []
    for y in range(spec.c):
        row = []
        for m in range(spec.m_true):
            for attempt in range(1000):
                mask = _recenter(_blob_mask(rng, h, w, spec.margin))
                frac = mask.sum() / (h * w)
                if not (lo <= frac <= hi):
                    continue
                if any(_mask_iou(mask, other) > spec.max_template_iou for other in all_masks):
                    continue
                break
            else:
                raise RuntimeError("template constraints infeasible after 1000 attempts")
            all_masks.append(mask)
            ids = _partition(mask, spec.parts_per_class, rng)
            row.append(Template(mask=mask, kernel_ids=ids, bbox=_bbox(mask)))
        templates.append(tuple(row))
    return World(
        spec=spec,
        class_kernels=class_kernels,
        context_kernels=context_kernels,
        occluder_kernels=occluder_kernels,
        templates=tuple(templates),
    )


# ---------------------------------------------------------------------------
# scene rendering
# ---------------------------------------------------------------------------


def _shift_grid(arr: np.ndarray, shift: tuple[int, int], fill) -> np.ndarray:
    out = np.full_like(arr, fill)
    h, w = arr.shape
    sr, sc = shift
    rr, cc = np.nonzero(arr != fill) if arr.dtype != bool else np.nonzero(arr)
    nr, nc = rr + sr, cc + sc
    keep = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
    out[nr[keep], nc[keep]] = arr[rr[keep], cc[keep]]
    return out


def _grow_occluder(
    rng: np.random.Generator,
    object_mask: np.ndarray,
    fg_band: tuple[float, float],
    bg_band: tuple[float, float],
    max_attempts: int = 60,
) -> np.ndarray | None:
    """Connected blob whose object/context coverage hits both bands."""
    h, w = object_mask.shape
    obj_total = int(object_mask.sum())
    ctx_total = h * w - obj_total
    if fg_band[1] == 0.0 and bg_band[1] == 0.0:
        return np.zeros((h, w), dtype=bool)

    obj_cells = np.argwhere(object_mask)
    for _ in range(max_attempts):
        target_fg = rng.uniform(*fg_band)
        region = np.zeros((h, w), dtype=bool)
        seed = obj_cells[rng.integers(len(obj_cells))]
        region[seed[0], seed[1]] = True
        frontier = {(int(seed[0]), int(seed[1]))}
        fg_count = 1
        bg_count = 0
        for _step in range(4 * h * w):
            fg_frac = fg_count / obj_total
            bg_frac = bg_count / ctx_total if ctx_total else 0.0
            if fg_frac > fg_band[1] + 1e-9 or bg_frac > bg_band[1] + 1e-9:
                break
            if fg_frac >= target_fg and bg_band[0] <= bg_frac <= bg_band[1]:
                if fg_band[0] <= fg_frac <= fg_band[1]:
                    return region
                break
            cand = set()
            for r, c in frontier:
                for nr, nc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
                    if 0 <= nr < h and 0 <= nc < w and not region[nr, nc]:
                        cand.add((nr, nc))
            if not cand:
                break
            want_object = fg_frac < target_fg
            pool = [p for p in cand if object_mask[p] == want_object]
            if not pool:
                pool = list(cand)
            pool.sort()
            pick = pool[rng.integers(len(pool))]
            region[pick] = True
            frontier.add(pick)
            if object_mask[pick]:
                fg_count += 1
            else:
                bg_count += 1
    return None


def render_scene(
    world: World,
    y: int,
    pose: int,
    shift: tuple[int, int],
    fg_level: int,
    bg_level: int,
    seed: int,
) -> SceneRecord:
    spec = world.spec
    rng = np.random.default_rng(seed)
    h, w = spec.lattice
    tpl = world.templates[y][pose]

    obj_mask = _shift_grid(tpl.mask, shift, False)
    kernel_ids = _shift_grid(tpl.kernel_ids, shift, -1)
    if obj_mask.sum() < 0.2 * tpl.area:
        raise ValueError(f"shift {shift} keeps under 20% of the object on-lattice")

    if fg_level == 0 and bg_level != 0:
        raise ValueError("bg occlusion without fg occlusion is not modeled")
    occluder = _grow_occluder(rng, obj_mask, FG_BANDS[fg_level], BG_BANDS[bg_level])
    if occluder is None:
        raise RuntimeError(
            f"occlusion bands fg={fg_level} bg={bg_level} infeasible for this template"
        )

    data = np.empty((h, w, spec.d))
    ctx_choice = rng.integers(0, spec.q_true, size=(h, w))
    occ_choice = rng.integers(0, spec.occluder_kernel_count, size=(h, w))

    role = np.zeros((h, w), dtype=np.int8)  # 0 ctx, 1 object, 2 occluder
    role[obj_mask] = 1
    role[occluder] = 2

    for q in range(spec.q_true):
        sel = (role == 0) & (ctx_choice == q)
        data[sel] = sample_vmf(world.context_kernels[q], spec.sigma_gen, int(sel.sum()), rng)
    for p in range(spec.parts_per_class):
        sel = (role == 1) & (kernel_ids == p)
        data[sel] = sample_vmf(world.class_kernels[y, p], spec.sigma_gen, int(sel.sum()), rng)
    for o in range(spec.occluder_kernel_count):
        sel = (role == 2) & (occ_choice == o)
        data[sel] = sample_vmf(world.occluder_kernels[o], spec.sigma_gen, int(sel.sum()), rng)

    labels = np.zeros((h, w), dtype=np.int8)
    labels[obj_mask & ~occluder] = 1
    labels[obj_mask & occluder] = -1

    visible = labels == 1
    if not visible.any():
        raise RuntimeError("occluder covered the object completely")
    fg_occ = float((obj_mask & occluder).sum() / obj_mask.sum())
    bg_occ = float((occluder & ~obj_mask).sum() / max(1, (~obj_mask).sum()))

    return SceneRecord(
        fmap=FeatureMap(data / np.linalg.norm(data, axis=2, keepdims=True)),
        y=y,
        pose=pose,
        shift=shift,
        modal_box=_bbox(visible),
        amodal_box=_bbox(obj_mask),
        labels=LabelGrid(labels),
        fg_level=fg_level,
        bg_level=bg_level,
        fg_occluded=fg_occ,
        bg_occluded=bg_occ,
        occluder_mask=occluder.copy(),
    )


def render_background(
    world: World, count: int, seed: int, part_like_fraction: float = 0.5
) -> list[FeatureMap]:
    """Stand-ins for random natural images.

    Natural images are not featureless: random patches do resemble object
    parts and generic context, just without any spatial arrangement. Cells
    are therefore a mix of iid random directions and noisy draws around
    randomly chosen part/context kernels (never occluder kernels).
    """
    rng = np.random.default_rng(seed)
    h, w = world.spec.lattice
    pool = np.concatenate(
        [world.class_kernels.reshape(-1, world.spec.d), world.context_kernels]
    )
    out = []
    for _ in range(count):
        v = rng.standard_normal((h, w, world.spec.d))
        v /= np.linalg.norm(v, axis=2, keepdims=True)
        like = rng.uniform(size=(h, w)) < part_like_fraction
        idx = rng.integers(0, len(pool), size=(h, w))
        for p in range(len(pool)):
            sel = like & (idx == p)
            if sel.any():
                v[sel] = sample_vmf(pool[p], world.spec.sigma_gen, int(sel.sum()), rng)
        out.append(FeatureMap(v))
    return out


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def make_training_set(
    world: World, per_pose: int, seed: int, shift: tuple[int, int] = (0, 0)
) -> dict[int, list[SceneRecord]]:
    """Unoccluded canonical scenes, ``per_pose`` per (class, pose)."""
    rng = np.random.default_rng(seed)
    out: dict[int, list[SceneRecord]] = {y: [] for y in range(world.spec.c)}
    for y in range(world.spec.c):
        for m in range(world.spec.m_true):
            for _ in range(per_pose):
                scene_seed = int(rng.integers(2**63))
                out[y].append(render_scene(world, y, m, shift, 0, 0, seed=scene_seed))
    return out


def make_benchmark(
    world: World,
    per_level: int,
    seed: int,
    levels: list[tuple[int, int]] | None = None,
    shift_range: int | None = None,
) -> list[SceneRecord]:
    """Balanced occlusion benchmark across (FG, BG) levels."""
    levels = levels if levels is not None else STANDARD_LEVELS
    sr = world.spec.shift_range if shift_range is None else shift_range
    rng = np.random.default_rng(seed)
    records = []
    for fg, bg in levels:
        for _ in range(per_level):
            y = int(rng.integers(world.spec.c))
            pose = int(rng.integers(world.spec.m_true))
            shift = (int(rng.integers(-sr, sr + 1)), int(rng.integers(-sr, sr + 1)))
            scene_seed = int(rng.integers(2**63))
            records.append(render_scene(world, y, pose, shift, fg, bg, seed=scene_seed))
    return records


def write_dataset(
    records: list[SceneRecord], out_dir, config_hash: str = "", prefix: str = "scene"
) -> dict:
    """Write FMAP + label files plus a manifest; returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_hash": config_hash, "records": []}
    for idx, rec in enumerate(records):
        fmap_path = out / f"{prefix}_{idx:05d}.fmap"
        label_path = out / f"{prefix}_{idx:05d}.labels.txt"
        save_feature_map(rec.fmap, fmap_path)
        save_label_grid(rec.labels, label_path)
        manifest["records"].append(
            {
                "id": idx,
                "fmap": fmap_path.name,
                "labels": label_path.name,
                "class": rec.y,
                "pose": rec.pose,
                "shift": list(rec.shift),
                "modal_box": rec.modal_box.as_list(),
                "amodal_box": rec.amodal_box.as_list(),
                "fg_level": rec.fg_level,
                "bg_level": rec.bg_level,
                "fg_occluded": rec.fg_occluded,
                "bg_occluded": rec.bg_occluded,
            }
        )
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return manifest
