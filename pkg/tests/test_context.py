import numpy as np
import pytest

from compseg.context import (
    ContextDictionary,
    classify_context,
    classify_context_map,
    learn_context_dictionary,
)
from compseg.tensors import FeatureMap
from conftest import random_unit_rows


def unit(v):
    return np.asarray(v, float) / np.linalg.norm(v)


def make_f_at_cosine(center, cos, rng):
    """Unit vector with the given cosine to (normalized) center."""
    c = unit(center)
    t = rng.standard_normal(len(c))
    t = unit(t - (t @ c) * c)
    return cos * c + np.sqrt(1 - cos**2) * t


def test_classification_thresholds():
    rng = np.random.default_rng(0)
    e = random_unit_rows(rng, 1, 8)
    ctx = ContextDictionary(e=e)
    assert classify_context(make_f_at_cosine(e[0], 0.9, rng), ctx) == 0
    assert classify_context(make_f_at_cosine(e[0], 0.3, rng), ctx) == 1
    # exactly at the threshold: strict inequality sends it to context
    f = 0.5 * e[0] + np.sqrt(1 - 0.25) * unit(
        np.eye(8)[3] - (np.eye(8)[3] @ e[0]) * e[0]
    )
    assert float((ctx.unit_centers @ f)[0]) == pytest.approx(0.5, abs=1e-12)
    assert classify_context(unit(f), ctx) == 0


def test_classification_invariant_to_center_scale():
    rng = np.random.default_rng(1)
    e = random_unit_rows(rng, 3, 8)
    f = random_unit_rows(rng, 1, 8)[0]
    z1 = classify_context(f, ContextDictionary(e=e))
    z2 = classify_context(f, ContextDictionary(e=e * np.array([[5.0], [0.2], [17.0]])))
    assert z1 == z2


def test_center_itself_is_context():
    rng = np.random.default_rng(2)
    e = random_unit_rows(rng, 4, 8) * 3.7
    ctx = ContextDictionary(e=e)
    for q in range(4):
        assert classify_context(unit(e[q]), ctx) == 0


def test_learn_single_center_is_the_sample():
    sample = unit(np.arange(1.0, 9.0))
    ctx = learn_context_dictionary(np.tile(sample, (10, 1)), q=1, seed=0)
    assert np.allclose(ctx.e[0], sample, atol=1e-12)


def test_learn_recovers_separated_clusters():
    rng = np.random.default_rng(3)
    a, b = random_unit_rows(rng, 2, 16)
    b = unit(b - (b @ a) * a)  # orthogonalize
    pts = [unit(c + 0.08 * rng.standard_normal(16)) for c in [a] * 40 + [b] * 40]
    ctx = learn_context_dictionary(np.array(pts), q=2, seed=4)
    got = sorted(max(abs(float(unit(e) @ t)) for e in ctx.e) for t in (a, b))
    assert all(v >= 0.99 for v in got)


def test_learn_deterministic():
    rng = np.random.default_rng(5)
    pts = random_unit_rows(rng, 60, 8)
    c1 = learn_context_dictionary(pts, q=3, seed=6)
    c2 = learn_context_dictionary(pts, q=3, seed=6)
    assert np.array_equal(c1.e, c2.e)


def test_learn_insufficient_samples():
    with pytest.raises(ValueError):
        learn_context_dictionary(np.eye(4)[:2], q=3, seed=0)


def test_classify_map_matches_scalar():
    rng = np.random.default_rng(7)
    ctx = ContextDictionary(e=random_unit_rows(rng, 4, 8))
    fmap, _ = FeatureMap.from_raw(rng.standard_normal((5, 6, 8)))
    grid = classify_context_map(fmap, ctx)
    for r in range(5):
        for c in range(6):
            assert grid.labels[r, c] == classify_context(fmap.data[r, c], ctx)
