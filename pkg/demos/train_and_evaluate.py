"""Train the custom network on a small synthetic set, then score the held-out split.

    python demos/train_and_evaluate.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from leancnn import TrainConfig, build_custom_cnn, compute_stats, evaluation_report, forward, init_parameters, split, synth_dataset, train
from leancnn.data import augment_dataset
from leancnn.plots import history_charts
from leancnn.weights_io import save_weights

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
out.mkdir(parents=True, exist_ok=True)

data = synth_dataset(k=3, n=30, size=32, seed=0)
train_set, val_set, test_set = split(data, (0.7, 0.15, 0.15), seed=0)
stats = compute_stats(train_set)  # statistics from the training split only
train_set = augment_dataset(train_set, seed=1).with_stats(stats)
val_set, test_set = val_set.with_stats(stats), test_set.with_stats(stats)
print("train/val/test:", len(train_set), len(val_set), len(test_set))

spec = build_custom_cnn((32, 32, 3), len(data.classes))
params, history = train(spec, init_parameters(spec, 0), train_set, TrainConfig(epochs=12, batch_size=8, seed=0), val=val_set)
for rec in history:
    print(f"epoch {rec.epoch:2d}  loss {rec.train_loss:.4f}  acc {rec.train_acc:.3f}  val_loss {rec.val_loss:.4f}  val_acc {rec.val_acc:.3f}")

x, y = test_set.arrays()
probs, _ = forward(spec, params, x)
report = evaluation_report(probs, y, data.classes)
print(report.to_text())

save_weights(out / "weights.lcw", params)
(out / "history.csv").write_text(history.to_csv())
report.write(out / "eval")
for name, svg in history_charts(history).items():
    (out / f"{name}.svg").write_text(svg)
print("artifacts in", out.resolve())
assert np.isclose(probs.sum(axis=1), 1, atol=1e-5).all()
