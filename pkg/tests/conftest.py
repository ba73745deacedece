"""Shared fixtures: a tiny random setup for unit tests and the standard
synthetic world (built once per session) for the quantitative suites."""

from __future__ import annotations

import copy
import itertools

import numpy as np
import pytest

from compseg import pipeline
from compseg.priors import refine_priors_em
from compseg.synth import (
    WorldSpec,
    generate_world,
    make_benchmark,
    make_training_set,
    render_background,
)

STANDARD_SEED = 0


def prior_template_iou(models, world) -> float:
    """Mean IoU of thresholded priors against best one-to-one GT templates."""
    per = []
    for model in models:
        tpls = world.templates[model.y]

        def iou(pm, t):
            inter = np.logical_and(pm, t.mask).sum()
            union = np.logical_or(pm, t.mask).sum()
            return inter / union if union else 1.0

        pms = [model.prior[m] > 0.5 for m in range(model.M)]
        per.append(
            max(
                np.mean([iou(pms[m], tpls[p[m]]) for m in range(model.M)])
                for p in itertools.permutations(range(len(tpls)), model.M)
            )
        )
    return float(np.mean(per))


class StandardSetup:
    """World seed 0, training set, initialized and refined models."""

    def __init__(self):
        self.world = generate_world(WorldSpec(seed=STANDARD_SEED))
        self.training = make_training_set(self.world, per_pose=20, seed=100)
        self.backgrounds = render_background(self.world, 8, seed=200)
        models, outliers, state = pipeline.init_models(
            self.training,
            self.backgrounds,
            k=20,
            m=2,
            sigma=65.0,
            epsilon=1e-3,
            q=5,
            n_outliers=5,
            seed=STANDARD_SEED,
        )
        self.initial_models = copy.deepcopy(models)
        self.init_state = state
        self.maps_by_class = {
            y: [rec.fmap for rec in recs] for y, recs in self.training.items()
        }
        self.models, self.refine_history = refine_priors_em(
            self.maps_by_class, models, max_iters=10, initial_state=state
        )
        self.outliers = outliers
        self.by_class = {mo.y: mo for mo in self.models}

    def benchmark(self, per_level: int, seed: int = 7):
        return make_benchmark(self.world, per_level=per_level, seed=seed)


@pytest.fixture(scope="session")
def standard():
    return StandardSetup()


@pytest.fixture(scope="session")
def small_world():
    """A one-class world on a small lattice for cheap structural tests."""
    spec = WorldSpec(seed=3, c=1, m_true=1, lattice=(16, 16), margin=3)
    return generate_world(spec)


def random_simplex(rng, shape):
    x = rng.random(shape) + 1e-3
    return x / x.sum(axis=-1, keepdims=True)


def random_unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
