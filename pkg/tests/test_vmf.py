import math

import numpy as np
import pytest

from compseg.tensors import FeatureMap
from compseg.vmf import (
    VmfDictionary,
    activation_map,
    clustering_objective,
    init_dictionary,
    vmf_log_likelihood,
)
from conftest import random_unit_rows


def unit(v):
    return np.asarray(v, float) / np.linalg.norm(v)


@pytest.fixture
def dictionary():
    rng = np.random.default_rng(0)
    return VmfDictionary(mu=random_unit_rows(rng, 6, 8), sigma=65.0)


def test_log_likelihood_extremes(dictionary):
    mu0 = dictionary.mu[0]
    assert vmf_log_likelihood(mu0, 0, dictionary) == pytest.approx(65.0)
    assert vmf_log_likelihood(-mu0, 0, dictionary) == pytest.approx(-65.0)
    perp = unit(np.eye(8)[1] - (dictionary.mu[1] @ np.eye(8)[1]) * dictionary.mu[1])
    assert vmf_log_likelihood(perp, 1, dictionary) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(IndexError):
        vmf_log_likelihood(mu0, 6, dictionary)


def test_log_likelihood_monotone_in_cosine(dictionary):
    rng = np.random.default_rng(1)
    mu0 = dictionary.mu[0]
    tang = unit(rng.standard_normal(8) - (rng.standard_normal(8) @ mu0) * mu0)
    tang = unit(tang - (tang @ mu0) * mu0)
    values = []
    for cos in np.linspace(-1, 1, 21):
        f = cos * mu0 + math.sqrt(1 - cos**2) * tang
        values.append(vmf_log_likelihood(unit(f), 0, dictionary))
    assert all(b > a for a, b in zip(values, values[1:]))


def test_activation_map_matches_brute_force(dictionary):
    rng = np.random.default_rng(2)
    fmap, _ = FeatureMap.from_raw(rng.standard_normal((4, 4, 8)))
    act = activation_map(fmap, dictionary)
    assert act.values.shape == (4, 4, 6)
    assert np.all(act.values > 0) and np.all(act.values <= 1)
    for r in range(4):
        for c in range(4):
            for k in range(6):
                expected = math.exp(
                    65.0 * float(dictionary.mu[k] @ fmap.data[r, c]) - 65.0
                )
                assert act.values[r, c, k] == pytest.approx(expected, rel=1e-12)
    # matches exp(log-likelihood - sigma)
    assert act.values[1, 2, 3] == pytest.approx(
        math.exp(vmf_log_likelihood(fmap.data[1, 2], 3, dictionary) - 65.0), rel=1e-12
    )


def test_activation_map_peak_at_kernel(dictionary):
    data = np.tile(dictionary.mu[3], (2, 2, 1))
    act = activation_map(FeatureMap(data), dictionary)
    assert act.values[0, 0, 3] == pytest.approx(1.0)


def test_activation_dimension_mismatch(dictionary):
    fmap, _ = FeatureMap.from_raw(np.random.default_rng(3).standard_normal((2, 2, 5)))
    with pytest.raises(ValueError):
        activation_map(fmap, dictionary)


def test_init_dictionary_recovers_antipodal_clusters():
    rng = np.random.default_rng(4)
    center = unit(rng.standard_normal(16))
    pts = []
    for sign in (1.0, -1.0):
        for _ in range(50):
            v = sign * center + 0.085 * rng.standard_normal(16)
            pts.append(unit(v))
    d = init_dictionary(np.array(pts), k=2, sigma=65.0, seed=5)
    cosines = sorted(abs(float(m @ center)) for m in d.mu)
    assert all(c >= 0.99 for c in cosines)


def test_init_dictionary_single_cluster_closed_form():
    rng = np.random.default_rng(6)
    pts = random_unit_rows(rng, 40, 8)
    d = init_dictionary(pts, k=1, sigma=65.0, seed=0)
    assert np.allclose(d.mu[0], unit(pts.sum(axis=0)), atol=1e-12)


def test_init_dictionary_deterministic():
    rng = np.random.default_rng(7)
    pts = random_unit_rows(rng, 120, 8)
    d1 = init_dictionary(pts, k=5, sigma=65.0, seed=11)
    d2 = init_dictionary(pts, k=5, sigma=65.0, seed=11)
    assert np.array_equal(d1.mu, d2.mu)


def test_init_dictionary_requires_enough_samples():
    with pytest.raises(ValueError):
        init_dictionary(np.eye(4)[:2], k=3, sigma=65.0, seed=0)


def test_clustering_objective_non_decreasing_over_iterations():
    # running with max_iter=t yields the t-th Lloyd iterate (same seed), so
    # the objective sequence over t must be non-decreasing
    rng = np.random.default_rng(8)
    pts = random_unit_rows(rng, 200, 12)
    objs = [
        clustering_objective(pts, init_dictionary(pts, 6, 65.0, seed=9, max_iter=t))
        for t in range(1, 8)
    ]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))


def test_dictionary_validation():
    with pytest.raises(ValueError):
        VmfDictionary(mu=np.ones((2, 4)), sigma=65.0)
    with pytest.raises(ValueError):
        VmfDictionary(mu=np.eye(4)[:2], sigma=-1.0)
