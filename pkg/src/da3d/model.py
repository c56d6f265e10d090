"""Trainable head over a bag of slice embeddings.

Forward pass per bag (rows z_j of the N x d slice matrix Z):

    scores      e_j    = w2 . tanh(W1 z_j)            (no biases)
    attention   alpha  = softmax(e)                    (max-subtracted)
    aggregate   z_agg  = sum_j alpha_j z_j
    hidden      u      = relu(H1 z_agg + b1)
    embedding   h      = H2 u + b2
    normalized  h~     = h / ||h||_2   (zero vector and a degenerate flag
                                        when ||h|| <= DEGENERATE_NORM_EPS)
    logits      o      = Wc h + bc     (classifier consumes unnormalized h)

`backward` produces exact parameter gradients for upstream gradients with
respect to the logits and the normalized embedding, chaining through the
softmax Jacobian diag(alpha) - alpha alpha^T and the normalization
Jacobian (I - h~ h~^T) / ||h||.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .store import (
    BadMagicError,
    TruncatedFileError,
    UnsupportedVersionError,
)

DEGENERATE_NORM_EPS = 1e-12

CHECKPOINT_MAGIC = b"DA3C"
CHECKPOINT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sII")


class ShapeError(ValueError):
    """Inputs or parameters have mutually inconsistent dimensions."""


# ---------------------------------------------------------------------------
# Parameters and traces
# ---------------------------------------------------------------------------
@dataclass
class ModelParams:
    """Every trainable tensor of the head.

    Attributes:
        w1: attention_hidden x d first attention layer (no bias).
        w2: attention_hidden score vector (no bias).
        head_w1 / head_b1: first embedding-head layer, head_hidden x d.
        head_w2 / head_b2: second embedding-head layer, embed_dim x head_hidden.
        clf_w / clf_b: linear classifier, num_classes x embed_dim.
    """

    w1: np.ndarray
    w2: np.ndarray
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    clf_w: np.ndarray
    clf_b: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def attention_hidden(self) -> int:
        return int(self.w1.shape[0])

    @property
    def head_hidden(self) -> int:
        return int(self.head_w1.shape[0])

    @property
    def embed_dim(self) -> int:
        return int(self.head_w2.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.clf_w.shape[0])

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    def field_arrays(self) -> dict[str, np.ndarray]:
        """Named tensors in a fixed, documented order."""
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: arr.copy() for name, arr in self.field_arrays().items()})

    def astype(self, dtype: np.dtype | type) -> "ModelParams":
        return ModelParams(
            **{name: arr.astype(dtype) for name, arr in self.field_arrays().items()}
        )

    def validate(self) -> None:
        arrays = self.field_arrays()
        for name, arr in arrays.items():
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite entries in parameter {name}")
        if self.w2.shape != (self.attention_hidden,):
            raise ShapeError("w2 length must match w1 rows")
        if self.head_w1.shape[1] != self.dim:
            raise ShapeError("head_w1 columns must match embedding dimension d")
        if self.head_b1.shape != (self.head_hidden,):
            raise ShapeError("head_b1 length must match head_w1 rows")
        if self.head_w2.shape[1] != self.head_hidden:
            raise ShapeError("head_w2 columns must match head_w1 rows")
        if self.head_b2.shape != (self.embed_dim,):
            raise ShapeError("head_b2 length must match head_w2 rows")
        if self.clf_w.shape[1] != self.embed_dim:
            raise ShapeError("clf_w columns must match head_w2 rows")
        if self.clf_b.shape != (self.num_classes,):
            raise ShapeError("clf_b length must match clf_w rows")


@dataclass
class GradientSet:
    """Loss gradients, one tensor per ModelParams field, same shapes."""

    w1: np.ndarray
    w2: np.ndarray
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    clf_w: np.ndarray
    clf_b: np.ndarray

    @staticmethod
    def zeros_like(params: ModelParams) -> "GradientSet":
        return GradientSet(
            **{name: np.zeros_like(arr) for name, arr in params.field_arrays().items()}
        )

    def field_arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}

    def add_(self, other: "GradientSet") -> None:
        for name, arr in self.field_arrays().items():
            arr += getattr(other, name)


@dataclass
class ForwardTrace:
    """Per-bag intermediates retained for gradients and inspection."""

    scores: np.ndarray
    attention: np.ndarray
    aggregate: np.ndarray
    head_hidden: np.ndarray
    embedding: np.ndarray
    normalized: np.ndarray
    logits: np.ndarray
    embedding_norm: float
    degenerate: bool
    dropout_keep: np.ndarray | None = None
    dropout_rate: float = 0.0


def init_params(
    dim: int,
    num_classes: int = 2,
    attention_hidden: int = 128,
    head_hidden: int = 256,
    embed_dim: int = 128,
    seed_rng: np.random.Generator | None = None,
    dtype: np.dtype | type = np.float32,
) -> ModelParams:
    """Seed-deterministic initialization.

    Weight matrices are uniform in +-sqrt(6 / (fan_in + fan_out)), biases
    zero.  Draw order is fixed (w1, w2, head_w1, head_w2, clf_w) so the
    same generator state always yields the same parameters.
    """
    rng = seed_rng if seed_rng is not None else np.random.default_rng(0)

    def uniform(fan_out: int, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape).astype(dtype)

    params = ModelParams(
        w1=uniform(attention_hidden, dim, (attention_hidden, dim)),
        w2=uniform(1, attention_hidden, (attention_hidden,)),
        head_w1=uniform(head_hidden, dim, (head_hidden, dim)),
        head_b1=np.zeros(head_hidden, dtype=dtype),
        head_w2=uniform(embed_dim, head_hidden, (embed_dim, head_hidden)),
        head_b2=np.zeros(embed_dim, dtype=dtype),
        clf_w=uniform(num_classes, embed_dim, (num_classes, embed_dim)),
        clf_b=np.zeros(num_classes, dtype=dtype),
    )
    params.validate()
    return params


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------
def attention_scores(slices: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-slice scalar scores e_j = w2 . tanh(W1 z_j)."""
    slices = np.asarray(slices)
    if slices.ndim != 2 or slices.shape[1] != params.dim:
        raise ShapeError(
            f"slices shape {slices.shape} incompatible with d={params.dim}"
        )
    hidden = np.tanh(slices @ params.w1.T)
    return hidden @ params.w2


def attention_weights(scores: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over scores; sums to 1 for any finite input."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("cannot take softmax of an empty score vector")
    shifted = scores - scores.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def aggregate(slices: np.ndarray, attention: np.ndarray) -> np.ndarray:
    """Convex combination of slice rows, z_agg = sum_j alpha_j z_j."""
    slices = np.asarray(slices)
    attention = np.asarray(attention)
    if attention.shape != (slices.shape[0],):
        raise ShapeError(
            f"attention length {attention.shape} does not match N={slices.shape[0]}"
        )
    return attention @ slices


def forward(
    slices: np.ndarray,
    params: ModelParams,
    dropout_keep: np.ndarray | None = None,
    dropout_rate: float = 0.0,
) -> ForwardTrace:
    """Full per-bag forward pass.

    `dropout_keep` is an optional boolean mask over the head hidden layer
    (inverted dropout, scaled by 1/(1-rate)); pass None for evaluation.
    """
    slices = np.asarray(slices, dtype=params.dtype)
    scores = attention_scores(slices, params)
    attn = attention_weights(scores)
    z_agg = attn @ slices

    pre = params.head_w1 @ z_agg + params.head_b1
    hidden = np.maximum(pre, 0)
    if dropout_keep is not None:
        if dropout_keep.shape != hidden.shape:
            raise ShapeError("dropout mask shape must match head hidden layer")
        hidden_in = hidden * dropout_keep / (1.0 - dropout_rate)
    else:
        hidden_in = hidden
    embedding = params.head_w2 @ hidden_in + params.head_b2

    norm = float(np.linalg.norm(embedding.astype(np.float64)))
    degenerate = norm <= DEGENERATE_NORM_EPS
    if degenerate:
        normalized = np.zeros_like(embedding)
    else:
        normalized = (embedding / norm).astype(params.dtype)

    logits = params.clf_w @ embedding + params.clf_b
    return ForwardTrace(
        scores=scores,
        attention=attn,
        aggregate=z_agg,
        head_hidden=hidden,
        embedding=embedding,
        normalized=normalized,
        logits=logits,
        embedding_norm=norm,
        degenerate=degenerate,
        dropout_keep=dropout_keep,
        dropout_rate=dropout_rate,
    )


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------
def backward_single(
    slices: np.ndarray,
    trace: ForwardTrace,
    params: ModelParams,
    d_logits: np.ndarray,
    d_normalized: np.ndarray,
    grads: GradientSet,
) -> None:
    """Accumulate one bag's parameter gradients into `grads`.

    `d_logits` and `d_normalized` are the loss gradients with respect to
    this bag's logits o and normalized embedding h~.
    """
    slices = np.asarray(slices, dtype=params.dtype)
    if d_logits.shape != (params.num_classes,):
        raise ShapeError("d_logits length must equal the class count")
    if d_normalized.shape != (params.embed_dim,):
        raise ShapeError("d_normalized length must equal the embedding size")

    # Classifier (acts on unnormalized h).
    grads.clf_w += np.outer(d_logits, trace.embedding)
    grads.clf_b += d_logits
    d_embedding = params.clf_w.T @ d_logits

    # Normalization path: J = (I - h~ h~^T) / ||h||; zero for degenerate bags.
    if not trace.degenerate:
        projected = d_normalized - trace.normalized * (trace.normalized @ d_normalized)
        d_embedding = d_embedding + projected / trace.embedding_norm

    # Second head layer.
    if trace.dropout_keep is not None:
        hidden_in = trace.head_hidden * trace.dropout_keep / (1.0 - trace.dropout_rate)
    else:
        hidden_in = trace.head_hidden
    grads.head_w2 += np.outer(d_embedding, hidden_in)
    grads.head_b2 += d_embedding
    d_hidden_in = params.head_w2.T @ d_embedding
    if trace.dropout_keep is not None:
        d_hidden = d_hidden_in * trace.dropout_keep / (1.0 - trace.dropout_rate)
    else:
        d_hidden = d_hidden_in

    # ReLU and first head layer (relu'(0) taken as 0).
    d_pre = d_hidden * (trace.head_hidden > 0)
    grads.head_w1 += np.outer(d_pre, trace.aggregate)
    grads.head_b1 += d_pre
    d_aggregate = params.head_w1.T @ d_pre

    # Aggregation and softmax: d_e = alpha * (d_alpha - alpha . d_alpha).
    d_attention = slices @ d_aggregate
    d_scores = trace.attention * (d_attention - trace.attention @ d_attention)

    # Attention scorer; tanh activations are recomputed, not stored.
    hidden_att = np.tanh(slices @ params.w1.T)
    grads.w2 += hidden_att.T @ d_scores
    coeff = (d_scores[:, None] * (1.0 - hidden_att * hidden_att)) * params.w2[None, :]
    grads.w1 += coeff.T @ slices


def backward(
    slices_list: Sequence[np.ndarray],
    traces: Sequence[ForwardTrace],
    params: ModelParams,
    d_logits: np.ndarray,
    d_normalized: np.ndarray,
) -> GradientSet:
    """Exact batch gradients of the loss with respect to every parameter.

    Bags are accumulated in list order, so the reduction is deterministic.
    """
    if len(slices_list) != len(traces):
        raise ShapeError("one trace per bag required")
    if d_logits.shape[0] != len(traces) or d_normalized.shape[0] != len(traces):
        raise ShapeError("upstream gradient batch size must match the trace count")
    grads = GradientSet.zeros_like(params)
    for index, (slices, trace) in enumerate(zip(slices_list, traces)):
        backward_single(
            slices, trace, params, d_logits[index], d_normalized[index], grads
        )
    return grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    config_echo: dict | None = None,
    seed: int = 0,
) -> None:
    """Write a self-describing checkpoint.

    Layout: magic "DA3C", version u32=1, header length u32, UTF-8 JSON
    header {"fields": [{"name", "shape"}...], "config", "seed"}, then one
    little-endian float32 C-order payload per field in header order.
    Serialization is deterministic byte for byte.
    """
    arrays = params.field_arrays()
    header = {
        "fields": [
            {"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()
        ],
        "config": config_echo or {},
        "seed": int(seed),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_CKPT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        handle.write(blob)
        for arr in arrays.values():
            handle.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict, int]:
    """Read a checkpoint back; returns (params, config echo, seed)."""
    with open(path, "rb") as handle:
        return _read_checkpoint(handle)


def _read_checkpoint(handle: BinaryIO) -> tuple[ModelParams, dict, int]:
    prefix = handle.read(_CKPT_PREFIX.size)
    if len(prefix) < _CKPT_PREFIX.size:
        raise TruncatedFileError("checkpoint prefix truncated")
    magic, version, header_len = _CKPT_PREFIX.unpack(prefix)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
    blob = handle.read(header_len)
    if len(blob) < header_len:
        raise TruncatedFileError("checkpoint header truncated")
    header = json.loads(blob.decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    for field_desc in header["fields"]:
        shape = tuple(int(s) for s in field_desc["shape"])
        count = int(np.prod(shape)) if shape else 1
        payload = handle.read(count * 4)
        if len(payload) < count * 4:
            raise TruncatedFileError(
                f"checkpoint payload truncated in field {field_desc['name']!r}"
            )
        arrays[field_desc["name"]] = (
            np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        )
    expected = {f.name for f in dataclass_fields(ModelParams)}
    if set(arrays) != expected:
        raise ValueError(f"checkpoint fields {sorted(arrays)} != expected {sorted(expected)}")
    params = ModelParams(**arrays)
    params.validate()
    return params, header.get("config", {}), int(header.get("seed", 0))
