#!/usr/bin/env python3
"""SGD fine-tuning of the compositional head.

Starts from the bootstrap-initialized coefficients and runs five epochs of
per-proposal SGD with momentum over the classification, representation and
weak-segmentation losses; analytic gradients, simplex kept by softmax
materialization. Prints the per-epoch loss table.
"""

from compseg import pipeline
from compseg.synth import WorldSpec, generate_world, make_training_set, render_background
from compseg.training import TrainConfig, train

world = generate_world(WorldSpec(seed=0))
training = make_training_set(world, per_pose=8, seed=700)
backgrounds = render_background(world, 6, seed=800)
models, outliers, _ = pipeline.init_models(
    training, backgrounds, k=20, m=2, sigma=65.0, epsilon=1e-3, q=5, n_outliers=5, seed=0
)
dataset = [rec for y in sorted(training) for rec in training[y]]

cfg = TrainConfig(epochs=5, train_mu=False)  # coefficients only; see README
print(f"training {len(dataset)} proposals, {cfg.epochs} epochs, "
      f"lr {cfg.lr}, momentum {cfg.momentum}, weights ({1.0}, {cfg.gamma1}, {cfg.gamma2})")
models, outliers, history = train(dataset, models, outliers, cfg)

print(f"\n{'epoch':>5} {'L_cls':>9} {'L_rep':>12} {'L_seg':>9} {'total':>12}")
for h in history:
    print(f"{h.epoch:>5} {h.cls:>9.4f} {h.rep:>12.2f} {h.seg:>9.3f} {h.total:>12.2f}")

drop = history[0].total - history[-1].total
word = "decreased" if drop > 0 else "increased"
print(f"\ntotal loss {word} by {abs(drop):.2f} over {cfg.epochs} epochs")
