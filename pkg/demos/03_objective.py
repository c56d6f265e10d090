"""The composite objective: cross-entropy + contrastive + variance.

The contrastive term (temperature 0.07) pulls same-label normalized
embeddings together against all others; the variance term (weight 0.1)
penalizes spread around each class centroid.  The total is their sum,
and each piece is available separately.
"""

import numpy as np

from da3d import BatchViews, contrastive, cross_entropy, total_loss, variance

rng = np.random.default_rng(2)


def unit(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


# ----------------------------------------------------------------------
# Cross-entropy on logits: the uniform case gives ln(2).
# ----------------------------------------------------------------------
loss, grad = cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
print(f"uniform binary CE = {loss:.6f} (ln 2 = {np.log(2):.6f})")

# ----------------------------------------------------------------------
# Contrastive: two samples of the same class are a free pair; the single
# denominator term equals the numerator, so the loss is exactly zero.
# ----------------------------------------------------------------------
pair = unit(rng.standard_normal((2, 8)))
loss, _ = contrastive(pair, np.array([0, 0]))
print("two same-label samples -> contrastive =", loss)

# Tight same-class clusters with a distant negative cost almost nothing;
# pushing the positives apart raises the loss steeply at tau = 0.07.
tight = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
loose = unit([[1.0, 0.4], [1.0, -0.4], [0.0, 1.0]])
labels = np.array([0, 0, 1])
print("tight cluster  :", contrastive(tight, labels)[0])
print("loose cluster  :", contrastive(loose, labels)[0])

# ----------------------------------------------------------------------
# Variance: mean squared distance to the class centroid, averaged over
# classes present in the batch.
# ----------------------------------------------------------------------
rows = np.array([[1.0, 0.0], [0.0, 1.0]])
loss, _ = variance(rows, np.array([0, 0]))
print("orthogonal pair variance =", loss, "(centroid [0.5, 0.5], distance^2 = 0.5)")

# ----------------------------------------------------------------------
# The total decomposes exactly.
# ----------------------------------------------------------------------
batch = 6
views = BatchViews(
    logits=rng.standard_normal((batch, 2)),
    normalized=unit(rng.standard_normal((batch, 4))),
    labels=rng.integers(0, 2, size=batch),
    degenerate=np.zeros(batch, dtype=bool),
)
breakdown, d_logits, d_normalized = total_loss(views)
print(f"ce={breakdown.ce:.4f} contra={breakdown.contra:.4f} "
      f"var={breakdown.var:.4f} total={breakdown.total:.4f}")
print("recomposes:", np.isclose(
    breakdown.total, breakdown.ce + breakdown.contra + 0.1 * breakdown.var))
print("gradient shapes:", d_logits.shape, d_normalized.shape)
