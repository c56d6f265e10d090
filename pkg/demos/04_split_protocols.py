"""Stratified holdout and k-fold split protocols.

Splits operate on manifests alone (no embedding files needed), are
stratified per class within one sample, and are fully determined by the
seed.  The holdout rule is floor for validation, ceil for test,
remainder to train.
"""

from da3d import Manifest, ManifestEntry, make_kfold, make_split


def manifest_with(counts):
    entries = [
        ManifestEntry(f"{label}{i:05d}", f"{label}{i:05d}.da3d", label)
        for label, count in counts.items()
        for i in range(count)
    ]
    return Manifest(entries, {label: idx for idx, label in enumerate(sorted(counts))})


def count_prefix(ids, label):
    return sum(1 for s in ids if s.startswith(label))


# ----------------------------------------------------------------------
# 80:10:10 holdout over a 1831 + 1270 two-class cohort: the test set
# comes out at 184 + 127 = 311 volumes.
# ----------------------------------------------------------------------
manifest = manifest_with({"neg": 1831, "pos": 1270})
split = make_split(manifest, ratios=(0.8, 0.1, 0.1), seed=0)
for part, ids in (("train", split.train_ids), ("val", split.val_ids),
                  ("test", split.test_ids)):
    print(f"{part:5s}: {len(ids):4d}  "
          f"(neg {count_prefix(ids, 'neg')}, pos {count_prefix(ids, 'pos')})")

# Determinism: the same seed reproduces the same assignment.
again = make_split(manifest, ratios=(0.8, 0.1, 0.1), seed=0)
print("same seed, same split:", again.test_ids == split.test_ids)

# ----------------------------------------------------------------------
# K-fold with a fixed held-out validation list: 10 per class go to a
# shared validation set, the rest are dealt into 5 stratified folds.
# ----------------------------------------------------------------------
counts = {"g0": 96, "g1": 48, "g2": 49, "g3": 104}
manifest = manifest_with(counts)
kfold = make_kfold(manifest, k=5, held_out_val_per_class=10, seed=0)
print("\nvalidation:", len(kfold.val_ids), "ids (10 per class)")
for index, fold in enumerate(kfold.folds):
    sizes = {label: count_prefix(fold, label) for label in sorted(counts)}
    print(f"fold {index}: {len(fold):3d}  {sizes}")

# Fold 2's holdout view: test = fold 2, train = the other folds.
view = kfold.fold_split(2)
print("fold 2 view: train", len(view.train_ids),
      "val", len(view.val_ids), "test", len(view.test_ids))
