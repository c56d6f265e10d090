"""Evaluation suite: confusion matrix, accuracy, ROC-AUC, macro-F1, FNR.

AUC uses the rank-based Mann-Whitney statistic with midrank tie handling,
which equals trapezoidal integration of the ROC curve.  F1 is averaged
unweighted over classes (macro).  FNR treats a configured class index as
the positive (disease) class: FN / (FN + TP).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .model import ModelParams, forward
from .parallel import map_ordered
from .store import BagDataset


@dataclass
class SamplePrediction:
    """Everything recorded for one evaluated bag."""

    subject_id: str
    label: int
    prediction: int
    score: float
    attention: np.ndarray
    normalized: np.ndarray
    aggregate: np.ndarray


@dataclass
class EvalReport:
    """Metric suite for one labeled prediction set.

    confusion rows are true classes, columns predicted classes.  `auc`
    and `fnr` are None outside binary tasks (or, for auc, when the set
    contains a single class).
    """

    confusion: np.ndarray
    accuracy: float
    auc: float | None
    macro_f1: float
    fnr: float | None
    n: int
    positive_class: int

    def as_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "auc": self.auc,
            "macro_f1": self.macro_f1,
            "fnr": self.fnr,
            "n": self.n,
            "positive_class": self.positive_class,
        }

    def write_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.as_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")

    def write_confusion_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            size = self.confusion.shape[0]
            writer.writerow(["true\\pred"] + [str(c) for c in range(size)])
            for row_index in range(size):
                writer.writerow(
                    [str(row_index)] + [str(int(v)) for v in self.confusion[row_index]]
                )


def confusion_matrix(
    labels: Sequence[int], predictions: Sequence[int], num_classes: int
) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions must have equal length")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with midrank ties; labels are 0/1, 1 = positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1 = 2TP / (2TP + FP + FN).

    A class with neither actual nor predicted samples contributes 0 and
    triggers a warning.
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError("confusion matrix must be square")
    if confusion.sum() < 1:
        raise ValueError("empty confusion matrix")
    scores = []
    for class_index in range(confusion.shape[0]):
        true_pos = int(confusion[class_index, class_index])
        false_pos = int(confusion[:, class_index].sum()) - true_pos
        false_neg = int(confusion[class_index, :].sum()) - true_pos
        if true_pos + false_pos + false_neg == 0:
            warnings.warn(
                f"class {class_index} absent from truth and predictions; F1 set to 0",
                stacklevel=2,
            )
            scores.append(0.0)
        else:
            scores.append(2.0 * true_pos / (2.0 * true_pos + false_pos + false_neg))
    return float(np.mean(scores))


def false_negative_rate(confusion: np.ndarray, positive_class: int) -> float:
    """FN / (FN + TP) for the designated positive (disease) class."""
    confusion = np.asarray(confusion, dtype=np.int64)
    true_pos = int(confusion[positive_class, positive_class])
    false_neg = int(confusion[positive_class, :].sum()) - true_pos
    if true_pos + false_neg == 0:
        raise ValueError("no positive samples; FNR undefined")
    return false_neg / (false_neg + true_pos)


def report_from_predictions(
    labels: Sequence[int],
    predictions: Sequence[int],
    scores: Sequence[float] | None,
    num_classes: int,
    positive_class: int = 1,
) -> EvalReport:
    """Assemble an EvalReport from raw predictions.

    `scores` (positive-class probabilities) may be None to skip AUC.
    """
    confusion = confusion_matrix(labels, predictions, num_classes)
    n = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / n
    labels_arr = np.asarray(labels)
    auc = None
    if scores is not None and num_classes == 2:
        binary = (labels_arr == positive_class).astype(np.int64)
        if 0 < binary.sum() < len(binary):
            auc = roc_auc(scores, binary)
    fnr = None
    if num_classes == 2 and confusion[positive_class, :].sum() > 0:
        fnr = false_negative_rate(confusion, positive_class)
    return EvalReport(
        confusion=confusion,
        accuracy=accuracy,
        auc=auc,
        macro_f1=macro_f1(confusion),
        fnr=fnr,
        n=n,
        positive_class=positive_class,
    )


def evaluate(
    params: ModelParams,
    ids: Sequence[str],
    dataset: BagDataset,
    positive_class: int = 1,
) -> tuple[EvalReport, list[SamplePrediction]]:
    """Run the model over `ids` and compute the full metric suite.

    Prediction is argmax over logits (ties go to the lower class index);
    the AUC score is the softmax probability of the positive class.
    Per-bag forward passes may run in parallel; the merge order is fixed.
    """
    if not ids:
        raise ValueError("empty evaluation set")

    def run(subject_id: str) -> SamplePrediction:
        bag = dataset.get(subject_id)
        trace = forward(bag.slices, params)
        logits = trace.logits.astype(np.float64)
        shifted = np.exp(logits - logits.max())
        probabilities = shifted / shifted.sum()
        score = float(probabilities[positive_class]) if params.num_classes == 2 else 0.0
        return SamplePrediction(
            subject_id=subject_id,
            label=bag.label,
            prediction=int(np.argmax(logits)),
            score=score,
            attention=trace.attention,
            normalized=trace.normalized,
            aggregate=trace.aggregate,
        )

    samples = map_ordered(run, ids)
    report = report_from_predictions(
        labels=[s.label for s in samples],
        predictions=[s.prediction for s in samples],
        scores=[s.score for s in samples] if params.num_classes == 2 else None,
        num_classes=params.num_classes,
        positive_class=positive_class,
    )
    return report, samples


def summarize_reports(reports: Sequence[EvalReport]) -> dict[str, float | None]:
    """Mean and population standard deviation of each metric over folds."""
    if not reports:
        raise ValueError("no reports to summarize")
    summary: dict[str, float | None] = {"folds": float(len(reports))}
    for name in ("accuracy", "auc", "macro_f1", "fnr"):
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            summary[f"mean_{name}"] = None
            summary[f"std_{name}"] = None
        else:
            arr = np.asarray(values, dtype=np.float64)
            summary[f"mean_{name}"] = float(arr.mean())
            summary[f"std_{name}"] = float(arr.std())
    return summary
