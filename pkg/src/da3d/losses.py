"""Composite training objective: cross-entropy + contrastive + variance.

All three terms operate on batch views (logits, normalized embeddings,
labels) and return both the scalar value and its gradient with respect to
the view they consume, so the model can chain them through the
normalization Jacobian.

Conventions pinned here:
  * The contrastive denominator runs over every other sample, positives
    included; anchors with no same-label partner contribute zero but the
    outer mean still divides by the full batch size B.
  * The variance term's 1/C factor counts classes present in the batch
    (override with `num_classes` to count a global class inventory).
  * Zero-norm (degenerate) embeddings take no part in the contrastive or
    variance terms: not as anchors, positives, or denominator entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TEMPERATURE = 0.07
DEFAULT_VARIANCE_WEIGHT = 0.1


@dataclass
class BatchViews:
    """Per-batch tensors the objective consumes.

    logits: B x C; normalized: B x m unit rows (zero rows where
    degenerate); labels: length-B class indices; degenerate: length-B
    booleans flagging zero-norm embeddings.
    """

    logits: np.ndarray
    normalized: np.ndarray
    labels: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.degenerate = np.asarray(self.degenerate, dtype=bool)
        batch = self.logits.shape[0]
        if self.normalized.shape[0] != batch or self.labels.shape[0] != batch:
            raise ValueError("batch views must share a leading batch dimension")
        if self.degenerate.shape[0] != batch:
            raise ValueError("degenerate mask must cover the batch")
        num_classes = self.logits.shape[1]
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= num_classes
        ):
            raise ValueError(f"labels must lie in [0, {num_classes})")


@dataclass
class LossBreakdown:
    """The three loss components and their weighted total for one batch."""

    ce: float
    contra: float
    var: float
    total: float
    temperature: float
    variance_weight: float

    def as_dict(self) -> dict[str, float]:
        return {
            "ce": self.ce,
            "contra": self.contra,
            "var": self.var,
            "total": self.total,
        }


def cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability of the true class.

    Computed with max-subtracted log-sum-exp; gradient is
    (softmax - onehot) / B.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be B x C, got shape {logits.shape}")
    batch, num_classes = logits.shape
    if batch == 0:
        raise ValueError("empty batch")
    if labels.shape != (batch,):
        raise ValueError("one label per row required")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    losses = log_norm - shifted[rows, labels]
    probs = np.exp(shifted - log_norm[:, None])
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad /= batch
    return float(losses.mean()), grad.astype(logits.dtype)


def contrastive(
    normalized: np.ndarray,
    labels: np.ndarray,
    temperature: float = DEFAULT_TEMPERATURE,
    degenerate: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over unit-norm embeddings.

    For each anchor i with positive set P(i) (same label, not itself):

        - (1/|P(i)|) sum_{j in P(i)} log  exp(s_ij) / sum_{k != i} exp(s_ik)

    with s_ij = (h~_i . h~_j) / temperature, averaged over all B samples.
    Anchors with empty P(i) contribute zero.  Returns the loss and its
    gradient with respect to the normalized embeddings.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    normalized = np.asarray(normalized)
    labels = np.asarray(labels, dtype=np.int64)
    batch = normalized.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    if degenerate is None:
        degenerate = np.zeros(batch, dtype=bool)
    active = ~np.asarray(degenerate, dtype=bool)

    sims = (normalized @ normalized.T) / temperature
    # coeffs[i, k] = d loss_i / d s_ik summed over anchors i.
    coeffs = np.zeros((batch, batch), dtype=np.float64)
    total = 0.0
    for anchor in range(batch):
        if not active[anchor]:
            continue
        others = active.copy()
        others[anchor] = False
        positives = others & (labels == labels[anchor])
        count_pos = int(positives.sum())
        if count_pos == 0:
            continue
        row = sims[anchor, others].astype(np.float64)
        row_max = row.max()
        log_denominator = row_max + np.log(np.exp(row - row_max).sum())
        total += log_denominator - float(sims[anchor, positives].mean())
        coeffs[anchor, others] += np.exp(sims[anchor, others] - log_denominator)
        coeffs[anchor, positives] -= 1.0 / count_pos

    loss = total / batch
    grad = ((coeffs + coeffs.T) @ normalized.astype(np.float64)) / (batch * temperature)
    return float(loss), grad.astype(normalized.dtype)


def variance(
    normalized: np.ndarray,
    labels: np.ndarray,
    degenerate: np.ndarray | None = None,
    num_classes: int | None = None,
) -> tuple[float, np.ndarray]:
    """Mean squared distance of embeddings to their class centroid.

    Averaged within each class, then across classes.  `num_classes`
    fixes the 1/C divisor; by default C counts classes present in the
    batch.  The gradient already reflects each member's influence on its
    centroid (the centroid terms cancel exactly for an arithmetic mean).
    """
    normalized = np.asarray(normalized)
    labels = np.asarray(labels, dtype=np.int64)
    batch = normalized.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    if degenerate is None:
        degenerate = np.zeros(batch, dtype=bool)
    active = ~np.asarray(degenerate, dtype=bool)

    present = np.unique(labels[active])
    divisor = num_classes if num_classes is not None else len(present)
    grad = np.zeros_like(normalized, dtype=np.float64)
    if divisor == 0:
        return 0.0, grad.astype(normalized.dtype)

    total = 0.0
    for class_index in present:
        members = active & (labels == class_index)
        count = int(members.sum())
        centroid = normalized[members].mean(axis=0)
        residuals = normalized[members] - centroid
        total += float((residuals**2).sum()) / count
        grad[members] += (2.0 / (divisor * count)) * residuals
    return total / divisor, grad.astype(normalized.dtype)


def total_loss(
    views: BatchViews,
    temperature: float = DEFAULT_TEMPERATURE,
    variance_weight: float = DEFAULT_VARIANCE_WEIGHT,
    variance_num_classes: int | None = None,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Composite loss: ce + contra + variance_weight * var.

    Returns (breakdown, d_total/d_logits, d_total/d_normalized); the
    embedding gradient still needs the normalization Jacobian applied by
    the model's backward pass.
    """
    ce, d_logits = cross_entropy(views.logits, views.labels)
    contra, d_contra = contrastive(
        views.normalized, views.labels, temperature, views.degenerate
    )
    var, d_var = variance(
        views.normalized, views.labels, views.degenerate, variance_num_classes
    )
    breakdown = LossBreakdown(
        ce=ce,
        contra=contra,
        var=var,
        total=ce + contra + variance_weight * var,
        temperature=temperature,
        variance_weight=variance_weight,
    )
    d_normalized = d_contra + variance_weight * d_var
    return breakdown, d_logits, d_normalized.astype(views.normalized.dtype)
