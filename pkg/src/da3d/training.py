"""Mini-batch training loop, optimizers, model selection, k-fold protocol.

Model selection keeps the checkpoint from the epoch with the lowest
validation total loss (earliest epoch on ties).  Validation loss is
computed over the whole validation list as a single batch, which makes it
deterministic and independent of the shuffle stream.

All randomness flows from `TrainConfig.seed` through named substreams
("init", "shuffle", "dropout"), so identical configs produce bitwise
identical histories and checkpoints on one machine.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields as dataclass_fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .losses import BatchViews, LossBreakdown, total_loss
from .metrics import EvalReport, evaluate, summarize_reports
from .model import ForwardTrace, GradientSet, ModelParams, backward, forward, init_params
from .parallel import map_ordered
from .rng import substream
from .store import BagDataset, SplitAssignment, SplitError

WEIGHT_MATRIX_FIELDS = ("w1", "w2", "head_w1", "head_w2", "clf_w")


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None,
                 batch_ids: Sequence[str] | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_ids = list(batch_ids) if batch_ids else []


@dataclass
class TrainConfig:
    """Hyperparameters and protocol knobs for one training run.

    Defaults: adam at learning rate 1e-4, batches of 16, 100 epochs,
    temperature 0.07 and variance weight 0.1, attention hidden 128, head
    hidden 256 and embedding size 128 on top of the data's dimension.
    """

    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    temperature: float = 0.07
    variance_weight: float = 0.1
    attention_hidden: int = 128
    head_hidden: int = 256
    embed_dim: int = 128
    seed: int = 0
    log_every: int = 1
    float64: bool = False
    weight_decay: float = 0.0
    dropout: float = 0.0
    stratified_batches: bool = False
    cosine_decay: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (contrastive loss needs pairs)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}


@dataclass
class EpochRecord:
    """One epoch of history: training means, validation loss, accuracy."""

    epoch: int
    train: LossBreakdown
    val: LossBreakdown
    val_accuracy: float
    seconds: float


@dataclass
class TrainHistory:
    """Per-epoch records plus the index of the best validation epoch."""

    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_total(self) -> float:
        return self.records[self.best_epoch].val.total

    def log_lines(self) -> list[str]:
        """Deterministic JSONL records.

        Wall-clock seconds stay in memory only; persisting them would
        break the bitwise reproducibility of identically seeded runs.
        """
        lines = []
        for record in self.records:
            payload = {
                "epoch": record.epoch,
                "ce": record.train.ce,
                "contra": record.train.contra,
                "var": record.train.var,
                "total": record.train.total,
                "val_total": record.val.total,
                "val_acc": record.val_accuracy,
            }
            lines.append(json.dumps(payload, sort_keys=True))
        return lines

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for line in self.log_lines():
                handle.write(line + "\n")


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    """First/second moment accumulators, shapes mirroring the params."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @staticmethod
    def zeros_like(params: ModelParams) -> "AdamState":
        arrays = params.field_arrays()
        return AdamState(
            m={name: np.zeros_like(arr) for name, arr in arrays.items()},
            v={name: np.zeros_like(arr) for name, arr in arrays.items()},
        )


def _check_finite_grads(grads: GradientSet) -> None:
    for name, grad in grads.field_arrays().items():
        if not np.isfinite(grad).all():
            raise TrainingDivergedError(f"non-finite gradient in {name}")


def adam_step(
    params: ModelParams,
    grads: GradientSet,
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One Adam update, in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
    """
    _check_finite_grads(grads)
    state.step_count += 1
    bias1 = 1.0 - beta1**state.step_count
    bias2 = 1.0 - beta2**state.step_count
    for name, theta in params.field_arrays().items():
        grad = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        theta -= learning_rate * (m / bias1) / (np.sqrt(v / bias2) + epsilon)


def sgd_step(params: ModelParams, grads: GradientSet, learning_rate: float) -> None:
    """Plain gradient descent update, in place."""
    _check_finite_grads(grads)
    for name, theta in params.field_arrays().items():
        theta -= learning_rate * getattr(grads, name)


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------
def _epoch_batches(
    ids: list[str],
    batch_size: int,
    rng: np.random.Generator,
    stratified: bool,
    labels: dict[str, int],
) -> list[list[str]]:
    """Shuffled batches of `batch_size`; a remainder of 1 joins the
    previous batch so every batch can form contrastive pairs."""
    if stratified:
        by_class: dict[int, list[str]] = {}
        for subject_id in ids:
            by_class.setdefault(labels[subject_id], []).append(subject_id)
        streams = []
        for class_index in sorted(by_class):
            members = by_class[class_index]
            order = rng.permutation(len(members))
            streams.append([members[i] for i in order])
        shuffled = []
        position = 0
        while any(position < len(s) for s in streams):
            for stream in streams:
                if position < len(stream):
                    shuffled.append(stream[position])
            position += 1
    else:
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
    batches = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    if len(batches) >= 2 and len(batches[-1]) < 2:
        batches[-2].extend(batches.pop())
    return batches


def _batch_views(traces: Sequence[ForwardTrace], labels: Sequence[int]) -> BatchViews:
    return BatchViews(
        logits=np.stack([t.logits for t in traces]),
        normalized=np.stack([t.normalized for t in traces]),
        labels=np.asarray(labels, dtype=np.int64),
        degenerate=np.asarray([t.degenerate for t in traces], dtype=bool),
    )


def _forward_all(
    ids: Sequence[str],
    dataset: BagDataset,
    params: ModelParams,
    masks: Sequence[np.ndarray] | None = None,
    dropout: float = 0.0,
) -> tuple[list[np.ndarray], list[ForwardTrace], list[int]]:
    bags = [dataset.get(subject_id) for subject_id in ids]
    slices_list = [bag.slices for bag in bags]
    if masks is None:
        traces = map_ordered(lambda s: forward(s, params), slices_list)
    else:
        traces = map_ordered(
            lambda pair: forward(pair[0], params, pair[1], dropout),
            list(zip(slices_list, masks)),
        )
    return slices_list, traces, [bag.label for bag in bags]


# ---------------------------------------------------------------------------
# Training protocols
# ---------------------------------------------------------------------------
def train(
    config: TrainConfig,
    split: SplitAssignment,
    dataset: BagDataset,
    log: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Optimize the head on the split's train list, select on validation.

    Returns the parameters from the epoch with the lowest validation
    total loss (earliest on ties) and the full history.  Raises
    TrainingDivergedError when a batch loss or gradient turns non-finite.
    """
    config.validate()
    if split.is_kfold:
        raise SplitError("train() expects a holdout split; use run_kfold for folds")
    train_ids = sorted(split.train_ids)
    val_ids = sorted(split.val_ids)
    if len(train_ids) < 2:
        raise SplitError("need at least 2 training bags")
    if not val_ids:
        raise SplitError("validation list is empty")

    dtype = np.float64 if config.float64 else np.float32
    params = init_params(
        dim=dataset.embedding_dim,
        num_classes=dataset.num_classes,
        attention_hidden=config.attention_hidden,
        head_hidden=config.head_hidden,
        embed_dim=config.embed_dim,
        seed_rng=substream(config.seed, "init"),
        dtype=dtype,
    )
    adam_state = AdamState.zeros_like(params)
    shuffle_rng = substream(config.seed, "shuffle")
    dropout_rng = substream(config.seed, "dropout")
    labels = {subject_id: dataset.label(subject_id) for subject_id in train_ids}

    history = TrainHistory()
    best_total = math.inf
    best_params = params.copy()

    for epoch in range(config.epochs):
        started = time.perf_counter()
        learning_rate = config.learning_rate
        if config.cosine_decay:
            learning_rate *= 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))

        sums = {"ce": 0.0, "contra": 0.0, "var": 0.0, "total": 0.0}
        seen = 0
        for batch_ids in _epoch_batches(
            train_ids, config.batch_size, shuffle_rng,
            config.stratified_batches, labels,
        ):
            masks = None
            if config.dropout > 0:
                masks = [
                    dropout_rng.random(config.head_hidden) >= config.dropout
                    for _ in batch_ids
                ]
            slices_list, traces, batch_labels = _forward_all(
                batch_ids, dataset, params, masks, config.dropout
            )
            views = _batch_views(traces, batch_labels)
            breakdown, d_logits, d_normalized = total_loss(
                views, config.temperature, config.variance_weight
            )
            if not math.isfinite(breakdown.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", epoch, batch_ids
                )
            grads = backward(slices_list, traces, params, d_logits, d_normalized)
            if config.weight_decay > 0:
                for name in WEIGHT_MATRIX_FIELDS:
                    getattr(grads, name)[...] += config.weight_decay * getattr(params, name)
            try:
                if config.optimizer == "adam":
                    adam_step(
                        params, grads, adam_state, learning_rate,
                        config.beta1, config.beta2, config.epsilon,
                    )
                else:
                    sgd_step(params, grads, learning_rate)
            except TrainingDivergedError as err:
                raise TrainingDivergedError(str(err), epoch, batch_ids) from err
            for key, value in breakdown.as_dict().items():
                sums[key] += value * len(batch_ids)
            seen += len(batch_ids)

        train_mean = LossBreakdown(
            ce=sums["ce"] / seen,
            contra=sums["contra"] / seen,
            var=sums["var"] / seen,
            total=sums["total"] / seen,
            temperature=config.temperature,
            variance_weight=config.variance_weight,
        )

        # Whole validation list as one batch: deterministic, shuffle-free.
        _, val_traces, val_labels = _forward_all(val_ids, dataset, params)
        val_views = _batch_views(val_traces, val_labels)
        val_breakdown, _, _ = total_loss(
            val_views, config.temperature, config.variance_weight
        )
        if not math.isfinite(val_breakdown.total):
            raise TrainingDivergedError(
                f"non-finite validation loss at epoch {epoch}", epoch, val_ids
            )
        val_accuracy = float(
            (np.argmax(val_views.logits, axis=1) == val_views.labels).mean()
        )

        record = EpochRecord(
            epoch=epoch,
            train=train_mean,
            val=val_breakdown,
            val_accuracy=val_accuracy,
            seconds=time.perf_counter() - started,
        )
        history.records.append(record)
        if val_breakdown.total < best_total:
            best_total = val_breakdown.total
            best_params = params.copy()
            history.best_epoch = epoch
        if log is not None and (
            epoch % config.log_every == 0 or epoch == config.epochs - 1
        ):
            log(record)

    return best_params, history


def run_kfold(
    config: TrainConfig,
    split: SplitAssignment,
    dataset: BagDataset,
    positive_class: int = 1,
    log: Callable[[int, EpochRecord], None] | None = None,
) -> tuple[list[EvalReport], dict[str, float | None]]:
    """Train one model per fold and evaluate it on that fold's test list.

    Fold i re-seeds with `config.seed + i` so folds are independent yet
    reproducible.  Returns per-fold reports plus a mean/std summary.
    """
    if not split.is_kfold:
        raise SplitError("run_kfold expects a k-fold assignment")
    reports: list[EvalReport] = []
    for fold_index in range(split.num_folds):
        fold_config = replace(config, seed=config.seed + fold_index)
        fold_split = split.fold_split(fold_index)
        fold_log = None
        if log is not None:
            fold_log = lambda record, _i=fold_index: log(_i, record)
        best_params, _ = train(fold_config, fold_split, dataset, log=fold_log)
        report, _ = evaluate(
            best_params, sorted(fold_split.test_ids), dataset, positive_class
        )
        reports.append(report)
    return reports, summarize_reports(reports)
