"""End-to-end training on a synthetic dataset, in-process.

Generates bags of Gaussian slice embeddings where 3 of 32 slices carry a
4-sigma class-dependent shift, trains the attention head at default
hyperparameters, and shows that (a) the held-out metrics are strong and
(b) the learned attention concentrates on the signal slices.  Takes a
few seconds on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from da3d import (
    BagDataset,
    SynthSpec,
    TrainConfig,
    evaluate,
    make_split,
    make_synthetic_dataset,
    train,
)

work_dir = Path(tempfile.mkdtemp(prefix="da3d-demo-"))

spec = SynthSpec(num_classes=2, bags_per_class=100, slices_per_bag=32,
                 dim=64, signal_slices=3, separation=4.0, seed=9)
manifest, signal_positions = make_synthetic_dataset(spec, work_dir)
dataset = BagDataset(manifest, base_dir=work_dir)
split = make_split(manifest, ratios=(0.8, 0.1, 0.1), seed=9)
print(f"bags: train {len(split.train_ids)}, val {len(split.val_ids)}, "
      f"test {len(split.test_ids)}")

config = TrainConfig(epochs=30, seed=9)
best_params, history = train(
    config, split, dataset,
    log=lambda r: print(f"  epoch {r.epoch:2d}  val loss {r.val.total:.4f}  "
                        f"val acc {r.val_accuracy:.3f}")
    if r.epoch % 10 == 0 else None,
)
print(f"best epoch {history.best_epoch} "
      f"(val loss {history.best_val_total:.4f})")

# ----------------------------------------------------------------------
# Held-out metrics.
# ----------------------------------------------------------------------
report, samples = evaluate(best_params, sorted(split.test_ids), dataset)
print(f"test: accuracy {report.accuracy:.3f}, auc {report.auc:.3f}, "
      f"macro-F1 {report.macro_f1:.3f}, fnr {report.fnr:.3f}")
print("confusion:\n", report.confusion)

# ----------------------------------------------------------------------
# Where does the attention go?  Compare the mean weight on signal
# slices against background slices, bag by bag.
# ----------------------------------------------------------------------
signal_mass, background_mass = [], []
for sample in samples:
    mask = np.zeros(spec.slices_per_bag, dtype=bool)
    mask[signal_positions[sample.subject_id]] = True
    signal_mass.append(sample.attention[mask].mean())
    background_mass.append(sample.attention[~mask].mean())
uniform = 1.0 / spec.slices_per_bag
print(f"mean attention: signal {np.mean(signal_mass):.4f}, "
      f"background {np.mean(background_mass):.4f}, uniform {uniform:.4f}")
print("the model found the planted slices:",
      np.mean(signal_mass) > 2 * uniform)
