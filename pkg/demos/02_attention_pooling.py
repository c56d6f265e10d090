"""Soft attention pooling over a bag of slice embeddings.

Each slice gets a scalar score e_j = w2 . tanh(W1 z_j); a softmax turns
the scores into weights on the simplex, and the bag collapses to the
convex combination z_agg = sum_j alpha_j z_j.  The pooled vector is
invariant to slice order.
"""

import numpy as np

from da3d import aggregate, attention_scores, attention_weights, forward, init_params, substream

rng = np.random.default_rng(1)
dim = 16
params = init_params(dim, num_classes=2, attention_hidden=8, head_hidden=8,
                     embed_dim=4, seed_rng=substream(1, "init"))

# A bag where one slice is very different from the rest.
background = rng.standard_normal((7, dim)) * 0.3
outlier = rng.standard_normal((1, dim)) * 3.0
slices = np.vstack([background, outlier]).astype(np.float32)

scores = attention_scores(slices, params)
alpha = attention_weights(scores)
print("scores :", np.round(scores, 3))
print("weights:", np.round(alpha, 3), " sum =", alpha.sum())

pooled = aggregate(slices, alpha)
print("pooled shape:", pooled.shape)

# ----------------------------------------------------------------------
# Permutation invariance: shuffling slices permutes the weights but
# leaves the pooled vector (and everything downstream) unchanged.
# ----------------------------------------------------------------------
perm = rng.permutation(len(slices))
base = forward(slices, params)
shuffled = forward(slices[perm], params)
print("max |z_agg difference| after permutation:",
      np.abs(base.aggregate - shuffled.aggregate).max())
print("weights follow their slices:",
      np.allclose(shuffled.attention, base.attention[perm]))

# ----------------------------------------------------------------------
# Softmax housekeeping: shift invariance and overflow safety.  The
# shift is applied in float64; in float32 the addition itself would
# quantize the scores before the softmax ever saw them.
# ----------------------------------------------------------------------
scores64 = scores.astype(np.float64)
shifted = attention_weights(scores64 + 1234.5)
print("max |shift difference|:",
      np.abs(shifted - attention_weights(scores64)).max())
extreme = attention_weights(np.array([1000.0, 0.0]))
print("softmax([1000, 0]) =", extreme, "(no overflow)")

# A single-slice bag needs no attention at all: alpha = [1].
single = forward(slices[:1], params)
print("single-slice weights:", single.attention)
