"""Frozen ResNet50 backbone with a trainable head: only the head moves.

Runs at 32x32 input so it finishes in seconds; the parameter counts do not
depend on input size.
"""

import time

import numpy as np

from leancnn import HeadConfig, TrainConfig, analyze, build_resnet50, compute_stats, init_parameters, set_trainable, synth_dataset, train

spec = build_resnet50(3, HeadConfig(hidden_units=64, dropout=0.3), input_shape=(32, 32, 3))
params = init_parameters(spec, 0)
frozen = sum(set_trainable(params, pattern, False) for pattern in ("stem.*", "stage*"))
trainable = sum(a.size for name, lp in params.items() if lp.trainable for a in (lp.weights, lp.bias) if a is not None)
print(f"{len(params)} parametric layers, {frozen} frozen; {trainable:,} of {params.count():,} values trainable")
print(f"backbone + head params (analytic): {analyze(spec).total_params:,}")

ds = synth_dataset(3, 4, 32, seed=3)
ds = ds.with_stats(compute_stats(ds))
before = {name: lp.weights.copy() for name, lp in params.items()}
t0 = time.perf_counter()
params, history = train(spec, params, ds, TrainConfig(epochs=2, batch_size=6, seed=0))
print(f"2 epochs in {time.perf_counter() - t0:.1f}s, final train loss {history[-1].train_loss:.4f}")

moved = sorted(name for name, w in before.items() if not np.array_equal(w, params[name].weights))
print("layers whose weights changed:", moved)
assert moved == ["head.hidden", "head.out"]
