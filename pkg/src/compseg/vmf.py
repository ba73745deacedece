"""von Mises-Fisher kernel dictionary and per-cell activations.

Log-likelihood convention used across the whole package: the shared
normalization constant log Z(sigma) is omitted. The concentration sigma is
identical for every kernel, so the constant cancels in every ratio and
argmax computed downstream (segmentation ratios, classification, alignment).
Activation maps are additionally rescaled by exp(-sigma) so the best
attainable activation is exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cluster import kmeans, spherical_objective
from .tensors import FeatureMap

DEFAULT_SIGMA = 65.0


@dataclass(frozen=True)
class VmfDictionary:
    """K unit mean directions with one shared concentration."""

    mu: np.ndarray  # (K, D)
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        m = np.asarray(self.mu, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("mu must be (K, D)")
        norms = np.linalg.norm(m, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-9):
            raise ValueError("kernel means must be unit vectors (1e-9)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        m.flags.writeable = False
        object.__setattr__(self, "mu", m)

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]


@dataclass(frozen=True)
class ActivationMap:
    """Per-cell, per-kernel activations in (0, 1]."""

    values: np.ndarray  # (H, W, K)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def K(self) -> int:
        return self.values.shape[2]


def vmf_log_likelihood(f: np.ndarray, k: int, dictionary: VmfDictionary) -> float:
    """Unnormalized log p(f | kernel k): sigma * mu_k . f."""
    if not 0 <= k < dictionary.K:
        raise IndexError(f"kernel index {k} out of range [0, {dictionary.K})")
    return float(dictionary.sigma * (dictionary.mu[k] @ np.asarray(f, dtype=np.float64)))


def cosine_grid(fmap: FeatureMap, dictionary: VmfDictionary) -> np.ndarray:
    """(H, W, K) cosines mu_k . f_i; the shared building block."""
    if fmap.depth != dictionary.dim:
        raise ValueError(
            f"feature depth {fmap.depth} != dictionary dim {dictionary.dim}"
        )
    return fmap.data @ dictionary.mu.T


def activation_map(fmap: FeatureMap, dictionary: VmfDictionary) -> ActivationMap:
    """N(sigma * cos - sigma): likelihood rescaled so the maximum is 1."""
    cos = cosine_grid(fmap, dictionary)
    return ActivationMap(np.exp(dictionary.sigma * (cos - 1.0)))


def kernel_posteriors(fmap: FeatureMap, dictionary: VmfDictionary) -> np.ndarray:
    """Per-cell simplex weights over kernels: softmax_k(sigma * cos)."""
    cos = dictionary.sigma * cosine_grid(fmap, dictionary)
    cos -= cos.max(axis=2, keepdims=True)
    e = np.exp(cos)
    return e / e.sum(axis=2, keepdims=True)


def init_dictionary(
    features: np.ndarray, k: int, sigma: float, seed: int, max_iter: int = 100
) -> VmfDictionary:
    """Spherical k-means (cosine distance, ++ seeding) over unit vectors."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k:
        raise ValueError(f"need at least {k} sample vectors")
    rng = np.random.default_rng(seed)
    if k == 1:
        m = x.mean(axis=0)
        n = np.linalg.norm(m)
        mu = (m / n if n > 1e-12 else x[0])[None, :]
        return VmfDictionary(mu=_renorm(mu), sigma=sigma)
    centers, _ = kmeans(x, k, rng, max_iter=max_iter, spherical=True, n_init=4)
    return VmfDictionary(mu=_renorm(centers), sigma=sigma)


def clustering_objective(features: np.ndarray, dictionary: VmfDictionary) -> float:
    x = np.asarray(features, dtype=np.float64)
    labels = np.argmax(x @ dictionary.mu.T, axis=1)
    return spherical_objective(x, dictionary.mu, labels)


def _renorm(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)
