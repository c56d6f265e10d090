"""Attention-pooled classification of 3D volumes from per-slice embeddings.

A volume is a bag of per-slice embedding vectors.  A small trainable head
scores each slice, pools the bag with softmax attention, maps the
aggregate through an embedding MLP, and classifies it linearly; training
optimizes cross-entropy plus a supervised contrastive term and a
within-class variance penalty.  Everything is numpy; gradients are exact
and hand-derived.
"""

from .losses import (
    BatchViews,
    LossBreakdown,
    contrastive,
    cross_entropy,
    total_loss,
    variance,
)
from .metrics import (
    EvalReport,
    SamplePrediction,
    confusion_matrix,
    evaluate,
    false_negative_rate,
    macro_f1,
    report_from_predictions,
    roc_auc,
    summarize_reports,
)
from .model import (
    DEGENERATE_NORM_EPS,
    ForwardTrace,
    GradientSet,
    ModelParams,
    ShapeError,
    aggregate,
    attention_scores,
    attention_weights,
    backward,
    backward_single,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .rng import substream
from .store import (
    BadMagicError,
    BagDataset,
    DimensionMismatchError,
    FormatError,
    InvalidHeaderError,
    Manifest,
    ManifestEntry,
    ManifestError,
    NonFiniteDataError,
    SliceBag,
    SplitAssignment,
    SplitError,
    StoreError,
    TrailingDataError,
    TruncatedFileError,
    UnsupportedVersionError,
    load_manifest,
    make_kfold,
    make_split,
    open_dataset,
    read_bag,
    read_bag_file,
    save_manifest,
    write_bag,
    write_bag_file,
)
from .synth import SynthSpec, make_synthetic_dataset
from .training import (
    AdamState,
    EpochRecord,
    TrainConfig,
    TrainHistory,
    TrainingDivergedError,
    adam_step,
    run_kfold,
    sgd_step,
    train,
)

__version__ = "0.1.0"
