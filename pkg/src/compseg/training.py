"""The three loss terms and the SGD loop over the compositional head.

Coefficients are trained as unconstrained logits and materialized through a
softmax, so plain SGD respects the simplex; vMF means are free parameters
re-normalized after every step (the losses never normalize internally, so
analytic gradients match finite differences of the raw parameters).

Momentum update, exactly: v <- r*v - lr*g; p <- p + v.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .models import ClassModel, OutlierModel
from .segmentation import amodal_segment
from .tensors import Box, FeatureMap, LabelGrid

MHAT_CLAMP = 1e-6


@dataclass
class TrainConfig:
    gamma1: float = 2.0
    gamma2: float = 1.0
    delta: float = 0.05
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    seed: int = 0
    train_mu: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.momentum < 0 or self.delta < 0:
            raise ValueError("rates must be non-negative")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


# ---------------------------------------------------------------------------
# parameter view
# ---------------------------------------------------------------------------


class ParamView:
    """Trainable tensors: per-class fg/ctx coefficient logits plus mu."""

    def __init__(self, models: list[ClassModel], outliers: OutlierModel, train_mu: bool = True):
        self.models = models
        self.outliers = outliers
        self.train_mu = train_mu
        self.logits: dict = {}
        for model in models:
            self.logits[("fg", model.y)] = np.log(model.fg_coeffs)
            self.logits[("ctx", model.y)] = np.log(model.ctx_coeffs)
        self.mu = models[0].dictionary.mu.copy()
        self.sigma = models[0].dictionary.sigma

    def keys(self):
        ks = list(self.logits.keys())
        if self.train_mu:
            ks.append("mu")
        return ks

    def get(self, key) -> np.ndarray:
        return self.mu if key == "mu" else self.logits[key]

    def renormalize_mu(self) -> None:
        self.mu /= np.linalg.norm(self.mu, axis=1, keepdims=True)

    def materialize(self) -> None:
        """Write softmaxed coefficients (and the dictionary) into the models."""
        from .vmf import VmfDictionary

        dictionary = self.models[0].dictionary
        if self.train_mu:
            dictionary = VmfDictionary(
                mu=self.mu / np.linalg.norm(self.mu, axis=1, keepdims=True),
                sigma=self.sigma,
            )
            self.outliers = OutlierModel(coeffs=self.outliers.coeffs, dictionary=dictionary)
        for model in self.models:
            model.fg_coeffs = _softmax(self.logits[("fg", model.y)])
            model.ctx_coeffs = _softmax(self.logits[("ctx", model.y)])
            model.dictionary = dictionary


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def zero_grads(models: list[ClassModel]) -> dict:
    g = {}
    for model in models:
        g[("fg", model.y)] = np.zeros_like(model.fg_coeffs)
        g[("ctx", model.y)] = np.zeros_like(model.ctx_coeffs)
    g["mu"] = np.zeros_like(models[0].dictionary.mu)
    return g


def _accumulate(total: dict, part: dict, scale: float) -> None:
    for k, v in part.items():
        total[k] += scale * v


# ---------------------------------------------------------------------------
# shared forward pieces
# ---------------------------------------------------------------------------


def _mixture_forward(fmap: FeatureMap, model: ClassModel, m: int) -> dict:
    """Per-cell branch values and kernel posteriors for mixture m."""
    scores = model.dictionary.sigma * (fmap.data @ model.dictionary.mu.T)
    smax = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - smax)

    def branch(coeffs):
        s = (coeffs * e).sum(axis=-1)
        ll = np.log(np.maximum(s, 1e-300)) + smax[..., 0]
        post = coeffs * e / s[..., None]
        return ll, post

    ll_a, p_a = branch(model.fg_coeffs[m])
    ll_x, p_x = branch(model.ctx_coeffs[m])
    prior = model.prior[m]
    fgt = np.log(prior) + ll_a
    ctxt = np.log1p(-prior) + ll_x
    hi = np.maximum(fgt, ctxt)
    cell = hi + np.log(np.exp(fgt - hi) + np.exp(ctxt - hi))
    q = np.exp(fgt - cell)
    return {
        "ll_a": ll_a,
        "ll_x": ll_x,
        "p_a": p_a,
        "p_x": p_x,
        "fgt": fgt,
        "ctxt": ctxt,
        "cell": cell,
        "q": q,
    }


def _outlier_forward(fmap: FeatureMap, outliers: OutlierModel) -> tuple[np.ndarray, np.ndarray]:
    """(max log-likelihood grid, posterior grid routed through the argmax model)."""
    scores = outliers.dictionary.sigma * (fmap.data @ outliers.dictionary.mu.T)
    smax = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - smax)
    sums = np.einsum("hwk,nk->hwn", e, outliers.coeffs)
    lls = np.log(np.maximum(sums, 1e-300)) + smax
    best = lls.argmax(axis=-1)
    ll = np.take_along_axis(lls, best[..., None], axis=-1)[..., 0]
    coeff = outliers.coeffs[best]  # (H, W, K)
    post = coeff * e / np.take_along_axis(sums, best[..., None], axis=-1)
    return ll, post


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_cls(
    fmap: FeatureMap, y_true: int, models: list[ClassModel]
) -> tuple[float, dict]:
    value, grads, _ = _loss_cls_full(fmap, y_true, models)
    return value, grads


def _loss_cls_full(fmap: FeatureMap, y_true: int, models: list[ClassModel]):
    """Cross-entropy over per-class best-mixture mean map log-likelihoods."""
    if len(models) < 2:
        warnings.warn("single-class dataset: classification loss is constant")
    n_cells = models[0].lattice[0] * models[0].lattice[1]
    order = {model.y: i for i, model in enumerate(models)}
    if y_true not in order:
        raise ValueError(f"unknown true class {y_true}")

    best = []
    for model in models:
        fwds = [_mixture_forward(fmap, model, m) for m in range(model.M)]
        sums = [float(f["cell"].sum()) for f in fwds]
        m_star = int(np.argmax(sums))
        best.append((model, m_star, fwds[m_star], sums[m_star] / n_cells))

    s = np.array([b[3] for b in best])
    s_shift = s - s.max()
    p = np.exp(s_shift) / np.exp(s_shift).sum()
    value = float(-np.log(max(p[order[y_true]], 1e-300)))

    grads = zero_grads(models)
    ds = p.copy()
    ds[order[y_true]] -= 1.0
    for (model, m_star, fwd, _), dsy in zip(best, ds):
        if dsy == 0.0:
            continue
        scale = dsy / n_cells
        q = fwd["q"][..., None]
        grads[("fg", model.y)][m_star] += scale * (q * (fwd["p_a"] - model.fg_coeffs[m_star]))
        grads[("ctx", model.y)][m_star] += scale * (
            (1.0 - q) * (fwd["p_x"] - model.ctx_coeffs[m_star])
        )
        w = q * fwd["p_a"] + (1.0 - q) * fwd["p_x"]
        grads["mu"] += scale * model.dictionary.sigma * np.einsum(
            "hwk,hwd->kd", w, fmap.data
        )
    extras = {model.y: (m_star, sy) for model, m_star, _, sy in best}
    return value, grads, extras


def loss_rep(
    fmap: FeatureMap, model: ClassModel, z_hat: LabelGrid, m_hat: int
) -> tuple[float, dict]:
    """Negative indicator-selected prior-weighted log-likelihood.

    Foreground cells contribute the fg branch, context cells the ctx branch,
    occluded cells (z = -1) contribute nothing.
    """
    fwd = _mixture_forward(fmap, model, m_hat)
    fg_mask = z_hat.labels == 1
    ctx_mask = z_hat.labels == 0
    value = float(-(fwd["fgt"][fg_mask].sum() + fwd["ctxt"][ctx_mask].sum()))

    grads = zero_grads([model])
    gfg = np.zeros_like(model.fg_coeffs[m_hat])
    gfg[fg_mask] = -(fwd["p_a"][fg_mask] - model.fg_coeffs[m_hat][fg_mask])
    grads[("fg", model.y)][m_hat] = gfg
    gctx = np.zeros_like(model.ctx_coeffs[m_hat])
    gctx[ctx_mask] = -(fwd["p_x"][ctx_mask] - model.ctx_coeffs[m_hat][ctx_mask])
    grads[("ctx", model.y)][m_hat] = gctx
    w = np.zeros_like(fwd["p_a"])
    w[fg_mask] = -fwd["p_a"][fg_mask]
    w[ctx_mask] -= fwd["p_x"][ctx_mask]
    grads["mu"] = model.dictionary.sigma * np.einsum("hwk,hwd->kd", w, fmap.data)
    return value, grads


def _bags(shape: tuple[int, int], box: Box) -> tuple[list, list]:
    """Row/column sweep bags: positives inside the box, negatives fully outside."""
    h, w = shape
    r0, c0, bh, bw = box.cell_window()
    r0c, r1c = max(0, r0), min(h, r0 + bh)
    c0c, c1c = max(0, c0), min(w, c0 + bw)
    if r0c >= r1c or c0c >= c1c:
        raise ValueError("box does not intersect the grid")
    pos = [(slice(r, r + 1), slice(c0c, c1c)) for r in range(r0c, r1c)]
    pos += [(slice(r0c, r1c), slice(c, c + 1)) for c in range(c0c, c1c)]
    neg = [(slice(r, r + 1), slice(0, w)) for r in list(range(0, r0c)) + list(range(r1c, h))]
    neg += [(slice(0, h), slice(c, c + 1)) for c in list(range(0, c0c)) + list(range(c1c, w))]
    return pos, neg


def loss_seg(
    mhat_grid: np.ndarray, box: Box, delta: float
) -> tuple[float, np.ndarray]:
    """MIL bag loss plus pairwise smoothness; gradient is w.r.t. the grid.

    Each bag is scored by its maximum posterior; the first-max cell receives
    the unary gradient. The pairwise term runs over 4-neighbor pairs.
    """
    m = np.asarray(mhat_grid, dtype=np.float64)
    mc = np.clip(m, MHAT_CLAMP, 1.0 - MHAT_CLAMP)
    pos, neg = _bags(m.shape, box)
    if not neg:
        warnings.warn("box covers the whole grid: no negative bags")

    value = 0.0
    grad = np.zeros_like(m)
    for sl in pos:
        block = mc[sl]
        flat = int(np.argmax(block))
        r, c = np.unravel_index(flat, block.shape)
        r += sl[0].start
        c += sl[1].start
        value -= float(np.log(mc[r, c]))
        if MHAT_CLAMP <= m[r, c] <= 1.0 - MHAT_CLAMP:
            grad[r, c] -= 1.0 / mc[r, c]
    for sl in neg:
        block = mc[sl]
        flat = int(np.argmax(block))
        r, c = np.unravel_index(flat, block.shape)
        r += sl[0].start
        c += sl[1].start
        value -= float(np.log(1.0 - mc[r, c]))
        if MHAT_CLAMP <= m[r, c] <= 1.0 - MHAT_CLAMP:
            grad[r, c] += 1.0 / (1.0 - mc[r, c])

    dr = m[:-1, :] - m[1:, :]
    dc = m[:, :-1] - m[:, 1:]
    value += float(delta * ((dr**2).sum() + (dc**2).sum()))
    grad[:-1, :] += 2.0 * delta * dr
    grad[1:, :] -= 2.0 * delta * dr
    grad[:, :-1] += 2.0 * delta * dc
    grad[:, 1:] -= 2.0 * delta * dc
    return float(value), grad


def seg_param_grads(
    fmap: FeatureMap,
    model: ClassModel,
    outliers: OutlierModel,
    m_hat: int,
    grid_grad: np.ndarray,
) -> dict:
    """Chain dL/dm-hat through the three-way softmax into parameter space."""
    fwd = _mixture_forward(fmap, model, m_hat)
    ll_o, p_o = _outlier_forward(fmap, outliers)
    prior = model.prior[m_hat]
    g_f = fwd["fgt"]
    g_c = fwd["ctxt"]
    g_o = np.log(prior) + ll_o
    hi = np.maximum(np.maximum(g_f, g_c), g_o)
    e_f, e_c, e_o = np.exp(g_f - hi), np.exp(g_c - hi), np.exp(g_o - hi)
    tot = e_f + e_c + e_o
    s_f, s_c, s_o = e_f / tot, e_c / tot, e_o / tot

    dgf = grid_grad * s_f * (1.0 - s_f)
    dgc = -grid_grad * s_f * s_c
    dgo = -grid_grad * s_f * s_o

    grads = zero_grads([model])
    grads[("fg", model.y)][m_hat] = dgf[..., None] * (fwd["p_a"] - model.fg_coeffs[m_hat])
    grads[("ctx", model.y)][m_hat] = dgc[..., None] * (fwd["p_x"] - model.ctx_coeffs[m_hat])
    w = dgf[..., None] * fwd["p_a"] + dgc[..., None] * fwd["p_x"] + dgo[..., None] * p_o
    grads["mu"] = model.dictionary.sigma * np.einsum("hwk,hwd->kd", w, fmap.data)
    return grads


# ---------------------------------------------------------------------------
# SGD loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    cls: float
    rep: float
    seg: float
    total: float


def train(
    dataset: list,
    models: list[ClassModel],
    outliers: OutlierModel,
    cfg: TrainConfig,
) -> tuple[list[ClassModel], OutlierModel, list[EpochRecord]]:
    """Per-image SGD with momentum over the compositional head parameters.

    ``dataset`` entries need .fmap, .y and .modal_box (SceneRecord works).
    Images are visited in index order every epoch; the run is deterministic.
    """
    view = ParamView(models, outliers, train_mu=cfg.train_mu)
    view.materialize()
    by_class = {model.y: model for model in models}
    velocity = {k: np.zeros_like(view.get(k)) for k in view.keys()}
    history: list[EpochRecord] = []
    initial_total = None

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        for rec in dataset:
            v_cls, g_cls, extras = _loss_cls_full(rec.fmap, rec.y, models)
            model = by_class[rec.y]
            m_hat = extras[rec.y][0]
            z_hat, mask = amodal_segment(rec.fmap, m_hat, model, view.outliers)
            v_rep, g_rep = loss_rep(rec.fmap, model, z_hat, m_hat)
            v_seg, grid_grad = loss_seg(mask.posterior, rec.modal_box, cfg.delta)
            g_seg = seg_param_grads(rec.fmap, model, view.outliers, m_hat, grid_grad)

            total = zero_grads(models)
            _accumulate(total, g_cls, 1.0)
            _accumulate(total, g_rep, cfg.gamma1)
            _accumulate(total, g_seg, cfg.gamma2)
            for key in view.keys():
                v = velocity[key]
                v *= cfg.momentum
                v -= cfg.lr * total[key]
                view.get(key)[...] += v
            if cfg.train_mu:
                view.renormalize_mu()
            view.materialize()
            sums += (v_cls, v_rep, v_seg, v_cls + cfg.gamma1 * v_rep + cfg.gamma2 * v_seg)

        n = len(dataset)
        rec_out = EpochRecord(epoch, sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n)
        history.append(rec_out)
        if initial_total is None:
            initial_total = abs(rec_out.total) + 1e-12
        else:
            check_divergence(initial_total, rec_out)
    return models, view.outliers, history


def check_divergence(initial_total: float, record: EpochRecord) -> None:
    """Abort when an epoch's loss explodes past 10x the initial magnitude
    (or stops being finite); raises with a diagnostic."""
    if not np.isfinite(record.total):
        raise RuntimeError(f"training diverged: epoch {record.epoch} loss is not finite")
    if record.total > 0 and abs(record.total) > 10.0 * initial_total:
        raise RuntimeError(
            f"training diverged: epoch {record.epoch} loss {record.total:.3g} "
            f"exceeds 10x initial {initial_total:.3g}"
        )


def write_loss_csv(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "L_cls", "L_rep", "L_seg", "total"])
        for rec in history:
            writer.writerow(
                [rec.epoch, repr(rec.cls), repr(rec.rep), repr(rec.seg), repr(rec.total)]
            )
