"""Context feature centers and the cosine-threshold foreground test.

A cell inside a training box is called foreground exactly when its feature
is dissimilar (max cosine < 0.5) to every learned context center; this
bootstraps the labels that spatial priors are first built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cluster import kmeans
from .tensors import FeatureMap, LabelGrid, normalize_rows

CONTEXT_COSINE_THRESHOLD = 0.5  # fixed by the classification rule, not a knob


@dataclass(frozen=True)
class ContextDictionary:
    """Q context feature centers (not necessarily unit norm)."""

    e: np.ndarray  # (Q, D)

    def __post_init__(self):
        c = np.asarray(self.e, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("context centers must be a non-empty (Q, D) array")
        if not np.all(np.isfinite(c)):
            raise ValueError("context centers must be finite")
        if np.any(np.linalg.norm(c, axis=1) <= 1e-12):
            raise ValueError("context centers must be nonzero")
        c.flags.writeable = False
        object.__setattr__(self, "e", c)

    @property
    def Q(self) -> int:
        return self.e.shape[0]

    @property
    def unit_centers(self) -> np.ndarray:
        return self.e / np.linalg.norm(self.e, axis=1, keepdims=True)


def learn_context_dictionary(
    outside_features: np.ndarray, q: int, seed: int
) -> ContextDictionary:
    """k-means (++ seeding) over unit-normalized outside-box samples."""
    x = np.asarray(outside_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < q:
        raise ValueError(f"need at least {q} context samples, got {x.shape}")
    x, _ = normalize_rows(x)
    rng = np.random.default_rng(seed)
    centers, _ = kmeans(x, q, rng, spherical=False, n_init=4)
    return ContextDictionary(e=centers)


def classify_context(f: np.ndarray, ctx: ContextDictionary) -> int:
    """1 (foreground) iff max cosine to every center is strictly below 0.5."""
    f = np.asarray(f, dtype=np.float64)
    best = float(np.max(ctx.unit_centers @ f))
    return 1 if best < CONTEXT_COSINE_THRESHOLD else 0


def classify_context_map(fmap: FeatureMap, ctx: ContextDictionary) -> LabelGrid:
    """Vectorized per-cell foreground/context labels for a whole map."""
    best = (fmap.data @ ctx.unit_centers.T).max(axis=2)
    return LabelGrid((best < CONTEXT_COSINE_THRESHOLD).astype(np.int8))
