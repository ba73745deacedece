"""Per-class compositional models on a fixed representation lattice.

A class carries M pose mixtures; each mixture holds per-cell foreground
coefficients A, context coefficients chi (both simplex points over the K
vMF kernels) and a spatial prior grid. The per-cell likelihood under a
mixture blends the foreground and context branches through the prior:

    p(f_i) = p(i|m,y) p(f_i|A_i) + (1 - p(i|m,y)) p(f_i|chi_i)

All log-likelihoods omit the shared vMF constant (see vmf module).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._cluster import kmeans
from .context import ContextDictionary
from .tensors import FeatureMap, LabelGrid
from .vmf import VmfDictionary, cosine_grid, kernel_posteriors

log = logging.getLogger(__name__)

DEFAULT_MIXTURES = 8
DEFAULT_OUTLIERS = 5
PRIOR_EPS = 1e-3
SIMPLEX_TOL = 1e-9
_LOG_FLOOR = 1e-300


@dataclass
class ClassModel:
    """Compositional representation of one object class."""

    y: int
    fg_coeffs: np.ndarray  # (M, H, W, K), rows on the simplex
    ctx_coeffs: np.ndarray  # (M, H, W, K)
    prior: np.ndarray  # (M, H, W) in [eps, 1-eps]
    dictionary: VmfDictionary
    context_dict: ContextDictionary | None = None
    epsilon: float = PRIOR_EPS

    def __post_init__(self):
        self.fg_coeffs = np.asarray(self.fg_coeffs, dtype=np.float64)
        self.ctx_coeffs = np.asarray(self.ctx_coeffs, dtype=np.float64)
        self.prior = np.asarray(self.prior, dtype=np.float64)
        if self.fg_coeffs.ndim != 4 or self.fg_coeffs.shape != self.ctx_coeffs.shape:
            raise ValueError("fg/ctx coefficient shapes must match (M, H, W, K)")
        if self.prior.shape != self.fg_coeffs.shape[:3]:
            raise ValueError("prior shape must be (M, H, W)")
        validate_simplex(self.fg_coeffs)
        validate_simplex(self.ctx_coeffs)
        if np.any(self.prior < self.epsilon - 1e-12) or np.any(
            self.prior > 1 - self.epsilon + 1e-12
        ):
            raise ValueError("prior values must lie in [eps, 1-eps]")

    @property
    def M(self) -> int:
        return self.fg_coeffs.shape[0]

    @property
    def lattice(self) -> tuple[int, int]:
        return self.fg_coeffs.shape[1], self.fg_coeffs.shape[2]

    @property
    def K(self) -> int:
        return self.fg_coeffs.shape[3]


@dataclass(frozen=True)
class OutlierModel:
    """n position-independent simplex coefficient vectors over the kernels."""

    coeffs: np.ndarray  # (n, K)
    dictionary: VmfDictionary

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2:
            raise ValueError("outlier coefficients must be (n, K)")
        validate_simplex(c)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]


def validate_simplex(arr: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if np.any(arr < -tol):
        raise ValueError("simplex coefficients must be non-negative")
    sums = arr.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= tol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"coefficients must sum to 1 (worst deviation {worst:.2e})")


# ---------------------------------------------------------------------------
# likelihood kernels
# ---------------------------------------------------------------------------


def position_log_likelihood(
    f: np.ndarray, coeffs: np.ndarray, dictionary: VmfDictionary
) -> float:
    """log sum_k w_k exp(sigma mu_k . f), max-shifted for stability."""
    c = dictionary.sigma * (dictionary.mu @ np.asarray(f, dtype=np.float64))
    m = float(c.max())
    s = float(np.asarray(coeffs, dtype=np.float64) @ np.exp(c - m))
    return float(np.log(max(s, _LOG_FLOOR)) + m)


def grid_log_likelihood(scores: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Vectorized position_log_likelihood over a grid.

    scores: (..., K) of sigma*cos values; coeffs: (..., K) simplex weights
    broadcastable against scores. Returns (...,) log-likelihoods.
    """
    m = scores.max(axis=-1, keepdims=True)
    s = (coeffs * np.exp(scores - m)).sum(axis=-1)
    return np.log(np.maximum(s, _LOG_FLOOR)) + m[..., 0]


def prior_weighted_log_likelihood(
    f: np.ndarray, i: tuple[int, int], m: int, model: ClassModel
) -> tuple[float, float]:
    """(fg_term, ctx_term): the two prior-weighted log branches at cell i."""
    r, c = i
    h, w = model.lattice
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"cell {i} outside {h}x{w} lattice")
    p = float(model.prior[m, r, c])
    fg = np.log(p) + position_log_likelihood(f, model.fg_coeffs[m, r, c], model.dictionary)
    ctx = np.log1p(-p) + position_log_likelihood(
        f, model.ctx_coeffs[m, r, c], model.dictionary
    )
    return float(fg), float(ctx)


def branch_terms(
    fmap: FeatureMap, m: int, model: ClassModel
) -> tuple[np.ndarray, np.ndarray]:
    """(fg_term, ctx_term) grids for every cell under mixture m."""
    if (fmap.height, fmap.width) != model.lattice:
        raise ValueError(
            f"map lattice {fmap.height}x{fmap.width} != model lattice {model.lattice}"
        )
    scores = model.dictionary.sigma * cosine_grid(fmap, model.dictionary)
    p = model.prior[m]
    fg = np.log(p) + grid_log_likelihood(scores, model.fg_coeffs[m])
    ctx = np.log1p(-p) + grid_log_likelihood(scores, model.ctx_coeffs[m])
    return fg, ctx


def map_log_likelihood(fmap: FeatureMap, m: int, model: ClassModel) -> float:
    """Sum over cells of log of the per-cell prior-weighted two-term mixture."""
    fg, ctx = branch_terms(fmap, m, model)
    hi = np.maximum(fg, ctx)
    return float(np.sum(hi + np.log(np.exp(fg - hi) + np.exp(ctx - hi))))


def hard_map_log_likelihood(fmap: FeatureMap, m: int, model: ClassModel) -> float:
    """Sum over cells of the larger branch term (the CEM image score)."""
    fg, ctx = branch_terms(fmap, m, model)
    return float(np.sum(np.maximum(fg, ctx)))


def classify(
    fmap: FeatureMap, models: list[ClassModel]
) -> tuple[int, int, float]:
    """argmax over (class, mixture) of the map log-likelihood.

    Hard mixture assignment; ties break to the lowest (class, mixture) index.
    """
    if not models:
        raise ValueError("empty model set")
    best = (-np.inf, 0, 0)
    for model in models:
        for m in range(model.M):
            s = map_log_likelihood(fmap, m, model)
            if s > best[0]:
                best = (s, model.y, m)
    return best[1], best[2], best[0]


# ---------------------------------------------------------------------------
# outlier models
# ---------------------------------------------------------------------------


def learn_outlier_models(
    background_maps: list[FeatureMap],
    n: int,
    dictionary: VmfDictionary,
    seed: int,
) -> OutlierModel:
    """Cluster pooled background cells into n groups; each model is the
    normalized mean kernel posterior of its group.

    Cells are clustered in feature space (not posterior space): posteriors
    at a sharp concentration are near one-hot, and clustering them directly
    collapses each group onto a single kernel, leaving most of the
    dictionary uncovered by any outlier model.
    """
    feats = np.concatenate(
        [fm.data.reshape(-1, fm.depth) for fm in background_maps], axis=0
    )
    if feats.shape[0] < n:
        raise ValueError(f"need at least {n} background cells, got {feats.shape[0]}")
    posts = np.concatenate(
        [kernel_posteriors(fm, dictionary).reshape(-1, dictionary.K) for fm in background_maps],
        axis=0,
    )
    rng = np.random.default_rng(seed)
    _, labels = kmeans(feats, n, rng, spherical=False, n_init=4)
    coeffs = np.empty((n, dictionary.K))
    for j in range(n):
        members = posts[labels == j]
        mean = members.mean(axis=0) if len(members) else np.full(dictionary.K, 1.0 / dictionary.K)
        coeffs[j] = mean / mean.sum()
    return OutlierModel(coeffs=coeffs, dictionary=dictionary)


def outlier_log_likelihood(f: np.ndarray, outliers: OutlierModel) -> float:
    """max over the n models of the position log-likelihood."""
    return float(
        max(
            position_log_likelihood(f, outliers.coeffs[j], outliers.dictionary)
            for j in range(outliers.n)
        )
    )


def outlier_grid_log_likelihood(
    fmap: FeatureMap, outliers: OutlierModel
) -> np.ndarray:
    scores = outliers.dictionary.sigma * cosine_grid(fmap, outliers.dictionary)
    per_model = np.stack(
        [grid_log_likelihood(scores, outliers.coeffs[j]) for j in range(outliers.n)]
    )
    return per_model.max(axis=0)


# ---------------------------------------------------------------------------
# initialization from training maps
# ---------------------------------------------------------------------------


def posterior_features(maps: list[FeatureMap], dictionary: VmfDictionary) -> np.ndarray:
    """Flattened per-cell kernel posteriors, one row per image."""
    return np.stack([kernel_posteriors(fm, dictionary).reshape(-1) for fm in maps])


def init_mixture_assignment(
    maps: list[FeatureMap], m: int, dictionary: VmfDictionary, seed: int
) -> np.ndarray:
    """Initial pose clusters: k-means over flattened cell posteriors."""
    if len(maps) < m:
        raise ValueError(f"need at least {m} images, got {len(maps)}")
    feats = posterior_features(maps, dictionary)
    rng = np.random.default_rng(seed)
    _, labels = kmeans(feats, m, rng, spherical=False, n_init=8)
    return labels


def estimate_coefficients(
    maps: list[FeatureMap],
    assignment: np.ndarray,
    labels: list[LabelGrid],
    dictionary: VmfDictionary,
    m_count: int,
    prior_coeffs: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-mixture A and chi from labeled cells; returns (A, chi, assignment).

    A at a cell is the normalized mean of responsibility-weighted kernel
    posteriors over that mixture's foreground-labeled images there; chi
    likewise from context-labeled cells. Without ``prior_coeffs`` the
    responsibilities come from the dictionary alone (initialization); with
    the current (A, chi) arrays given, responsibilities are weighted by them,
    which makes the update an exact EM step on the cell mixture likelihood.
    Cells with no contributing labels get the uniform simplex point. Empty
    mixtures are re-seeded with the farthest member of the largest cluster.
    """
    if len(maps) != len(labels) or len(maps) != len(assignment):
        raise ValueError("maps, labels and assignment must align")
    assignment = np.asarray(assignment, dtype=np.int64).copy()
    h, w = maps[0].height, maps[0].width
    k = dictionary.K
    posts = np.stack([kernel_posteriors(fm, dictionary) for fm in maps])  # (N,H,W,K)
    lab = np.stack([lg.labels for lg in labels])  # (N,H,W)
    if np.any(lab == -1):
        raise ValueError("occluded labels cannot occur during coefficient estimation")

    assignment = ensure_nonempty_mixtures(assignment, m_count, maps, dictionary)

    fg = np.empty((m_count, h, w, k))
    ctx = np.empty((m_count, h, w, k))
    for m in range(m_count):
        members = assignment == m
        fg_w = None if prior_coeffs is None else prior_coeffs[0][m]
        ctx_w = None if prior_coeffs is None else prior_coeffs[1][m]
        fg[m] = _mean_posterior(posts[members], lab[members] == 1, k, fg_w)
        ctx[m] = _mean_posterior(posts[members], lab[members] == 0, k, ctx_w)
    return fg, ctx, assignment


def _mean_posterior(
    posts: np.ndarray, mask: np.ndarray, k: int, weights: np.ndarray | None
) -> np.ndarray:
    if weights is not None:
        r = posts * weights[None]
        r /= r.sum(axis=-1, keepdims=True)
    else:
        r = posts
    counts = mask.sum(axis=0)  # (H, W)
    summed = (r * mask[..., None]).sum(axis=0)  # (H, W, K)
    out = np.full(summed.shape, 1.0 / k)
    got = counts > 0
    out[got] = summed[got] / counts[got, None]
    # means of simplex rows are on the simplex; renormalize to kill drift
    out /= out.sum(axis=-1, keepdims=True)
    return out


def ensure_nonempty_mixtures(
    assignment: np.ndarray,
    m_count: int,
    maps: list[FeatureMap],
    dictionary: VmfDictionary,
) -> np.ndarray:
    counts = np.bincount(assignment, minlength=m_count)
    empties = np.flatnonzero(counts == 0)
    if len(empties) == 0:
        return assignment
    feats = posterior_features(maps, dictionary)
    for m in empties:
        counts = np.bincount(assignment, minlength=m_count)
        largest = int(np.argmax(counts))
        members = np.flatnonzero(assignment == largest)
        if len(members) <= 1:
            continue
        center = feats[members].mean(axis=0)
        far = members[int(np.argmax(((feats[members] - center) ** 2).sum(1)))]
        log.warning("mixture %d empty; re-seeding with image %d", m, far)
        assignment[far] = m
    return assignment


# ---------------------------------------------------------------------------
# combined representation
# ---------------------------------------------------------------------------


def combined_representation(model: ClassModel) -> np.ndarray:
    """Psi: per-mixture prior-weighted blend of A and chi, (M, H, W, K)."""
    p = model.prior[..., None]
    return p * model.fg_coeffs + (1.0 - p) * model.ctx_coeffs


# ---------------------------------------------------------------------------
# MODEL file (self-describing JSON)
# ---------------------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


def save_models(
    path,
    models: list[ClassModel],
    outliers: OutlierModel | None,
    config_hash: str = "",
    epoch: int | None = None,
) -> None:
    if not models:
        raise ValueError("no models to save")
    d = models[0].dictionary
    h, w = models[0].lattice
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "lattice": [h, w],
        "K": d.K,
        "sigma": d.sigma,
        "M": models[0].M,
        "epsilon": models[0].epsilon,
        "mu": d.mu.tolist(),
        "outliers": outliers.coeffs.tolist() if outliers is not None else [],
        "classes": [
            {
                "y": mod.y,
                "Q": mod.context_dict.Q if mod.context_dict is not None else 0,
                "e": mod.context_dict.e.tolist() if mod.context_dict is not None else [],
                "fg_coeffs": mod.fg_coeffs.tolist(),
                "ctx_coeffs": mod.ctx_coeffs.tolist(),
                "prior": mod.prior.tolist(),
            }
            for mod in models
        ],
        "config_hash": config_hash,
    }
    if epoch is not None:
        doc["epoch"] = epoch
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_models(path) -> tuple[list[ClassModel], OutlierModel | None, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported MODEL version {doc.get('version')}")
    dictionary = VmfDictionary(mu=np.array(doc["mu"]), sigma=float(doc["sigma"]))
    models = []
    for cls in doc["classes"]:
        ctx = ContextDictionary(e=np.array(cls["e"])) if cls["e"] else None
        models.append(
            ClassModel(
                y=int(cls["y"]),
                fg_coeffs=np.array(cls["fg_coeffs"]),
                ctx_coeffs=np.array(cls["ctx_coeffs"]),
                prior=np.array(cls["prior"]),
                dictionary=dictionary,
                context_dict=ctx,
                epsilon=float(doc["epsilon"]),
            )
        )
    outliers = (
        OutlierModel(coeffs=np.array(doc["outliers"]), dictionary=dictionary)
        if doc["outliers"]
        else None
    )
    meta = {
        "config_hash": doc.get("config_hash", ""),
        "epoch": doc.get("epoch"),
        "lattice": tuple(doc["lattice"]),
    }
    return models, outliers, meta
