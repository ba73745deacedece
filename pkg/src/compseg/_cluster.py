"""Seeded k-means machinery shared by the dictionary/context/mixture learners.

Both variants use k-means++ seeding (sampling proportional to squared
distance) followed by full Lloyd iterations, capped at ``max_iter`` with a
no-assignment-change stop. Everything is deterministic given the Generator.
"""

from __future__ import annotations

import numpy as np


def kmeans_pp_seeds(
    x: np.ndarray, k: int, rng: np.random.Generator, dist2
) -> np.ndarray:
    """k-means++ seed indices; ``dist2(centers) -> (n, c)`` squared distances."""
    n = x.shape[0]
    seeds = [int(rng.integers(n))]
    d2 = dist2(x[seeds[-1]][None, :])[:, 0]
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0:
            # all mass collapsed: fall back to uniform choice of the rest
            seeds.append(int(rng.integers(n)))
        else:
            r = rng.uniform(0.0, total)
            idx = int(np.searchsorted(np.cumsum(d2), r))
            idx = min(idx, n - 1)
            seeds.append(idx)
        d2 = np.minimum(d2, dist2(x[seeds[-1]][None, :])[:, 0])
    return np.array(seeds, dtype=np.int64)


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    spherical: bool = False,
    n_init: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster rows of ``x``; returns (centers (k, d), labels (n,)).

    spherical=True treats rows as unit vectors, uses cosine distance
    (1 - x.c) and re-normalizes the centers each step. Otherwise plain
    Euclidean Lloyd iterations. ``n_init`` restarts keep the best run by
    objective (a single restart is fairly seed-sensitive).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} samples, got {n}")
    if n_init > 1:
        best = None
        for _ in range(n_init):
            centers, labels = kmeans(x, k, rng, max_iter, spherical, n_init=1)
            if spherical:
                obj = float(np.sum(x * centers[labels]))
            else:
                obj = -float(((x - centers[labels]) ** 2).sum())
            if best is None or obj > best[0]:
                best = (obj, centers, labels)
        return best[1], best[2]

    if spherical:
        dist2 = lambda c: (1.0 - x @ c.T) ** 2
    else:
        x2 = (x * x).sum(1)
        dist2 = lambda c: np.maximum(
            x2[:, None] - 2.0 * (x @ c.T) + (c * c).sum(1)[None, :], 0.0
        )

    centers = x[kmeans_pp_seeds(x, k, rng, dist2)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        if spherical:
            new_labels = np.argmax(x @ centers.T, axis=1)
        else:
            new_labels = np.argmin(dist2(centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if not members.any():
                # re-seed an empty cluster at the point farthest from its center
                far = int(np.argmax(dist2(centers)[np.arange(n), labels]))
                centers[j] = x[far]
                labels[far] = j
                members = labels == j
            m = x[members].mean(axis=0)
            if spherical:
                nm = np.linalg.norm(m)
                centers[j] = m / nm if nm > 1e-12 else centers[j]
            else:
                centers[j] = m
    return centers, labels


def spherical_objective(x: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Sum of cosine similarities to assigned centers (higher is better)."""
    return float(np.sum(x * centers[labels], axis=1).sum())
