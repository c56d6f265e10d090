"""Metric suite tests: published-matrix replay, AUC oracles, invariants."""

import numpy as np
import pytest

from da3d.metrics import (
    confusion_matrix,
    false_negative_rate,
    macro_f1,
    report_from_predictions,
    roc_auc,
)

from _oracles import auc_pair_enumeration

# Published binary confusion matrix for the strongest reported task:
# rows = true (negative class first), columns = predicted.
REFERENCE_CONFUSION = np.array([[174, 10], [28, 99]])


def predictions_for(confusion):
    """Expand a confusion matrix into per-sample label/prediction lists."""
    labels, predictions = [], []
    for true_class in range(confusion.shape[0]):
        for pred_class in range(confusion.shape[1]):
            count = int(confusion[true_class, pred_class])
            labels.extend([true_class] * count)
            predictions.extend([pred_class] * count)
    return labels, predictions


class TestReferenceMatrixReplay:
    def test_accuracy(self):
        labels, predictions = predictions_for(REFERENCE_CONFUSION)
        report = report_from_predictions(labels, predictions, None, 2, positive_class=1)
        assert report.n == 311
        assert report.accuracy == pytest.approx(273 / 311, rel=0, abs=0)
        assert round(report.accuracy * 100, 2) == 87.78

    def test_fnr(self):
        labels, predictions = predictions_for(REFERENCE_CONFUSION)
        report = report_from_predictions(labels, predictions, None, 2, positive_class=1)
        assert report.fnr == pytest.approx(28 / 127, rel=0, abs=0)
        assert round(report.fnr * 100, 2) == 22.05

    def test_macro_f1(self):
        # Hand oracle: F1(neg) = 348/386, F1(pos) = 198/236; their mean
        # pins the published 0.871 as a macro average (within 0.001).
        labels, predictions = predictions_for(REFERENCE_CONFUSION)
        report = report_from_predictions(labels, predictions, None, 2, positive_class=1)
        f1_neg = 348 / 386
        f1_pos = 198 / 236
        assert report.macro_f1 == pytest.approx((f1_neg + f1_pos) / 2, rel=1e-12)
        assert report.macro_f1 == pytest.approx(0.8703, abs=5e-5)
        assert abs(report.macro_f1 - 0.871) <= 1e-3

    def test_trace_identity(self):
        labels, predictions = predictions_for(REFERENCE_CONFUSION)
        report = report_from_predictions(labels, predictions, None, 2)
        assert report.accuracy * report.n == np.trace(report.confusion)


class TestConfusionMatrix:
    def test_counts(self):
        matrix = confusion_matrix([0, 0, 1, 1], [0, 1, 1, 1], 2)
        np.testing.assert_array_equal(matrix, [[1, 1], [0, 2]])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion_matrix([0, 1], [0], 2)


class TestRocAuc:
    def test_perfect_ranking(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_half(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_derived_example(self):
        # Enumerating the 4 positive-negative pairs: 3 concordant of 4.
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_matches_pair_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(4, 30))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            # Coarse grid forces plenty of ties.
            scores = rng.integers(0, 5, size=n) / 4.0
            assert roc_auc(scores, labels) == pytest.approx(
                auc_pair_enumeration(scores, labels), rel=1e-12
            )

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            scores = rng.standard_normal(n)
            base = roc_auc(scores, labels)
            squashed = roc_auc(np.tanh(scores) * 3 + 7, labels)
            exponential = roc_auc(np.exp(scores * 0.5), labels)
            assert squashed == pytest.approx(base, abs=1e-12)
            assert exponential == pytest.approx(base, abs=1e-12)

    def test_swapping_positive_class(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(21)
        labels = rng.integers(0, 2, size=21)
        base = roc_auc(scores, labels)
        flipped = roc_auc(-scores, 1 - labels)
        assert flipped == pytest.approx(base, abs=1e-12)
        complement = roc_auc(scores, 1 - labels)
        assert complement == pytest.approx(1 - base, abs=1e-12)


class TestMacroF1:
    def test_perfect_diagonal(self):
        assert macro_f1(np.diag([5, 9, 2])) == 1.0

    def test_reference_matrix(self):
        assert macro_f1(REFERENCE_CONFUSION) == pytest.approx(0.870268727, rel=1e-8)

    def test_all_one_class_predicted(self):
        # Balanced truth, everything predicted class 0:
        # F1(0) = 2*0.5*1/1.5 = 2/3, F1(1) = 0, macro = 1/3.
        matrix = np.array([[10, 0], [10, 0]])
        assert macro_f1(matrix) == pytest.approx(1 / 3, rel=1e-12)

    def test_absent_class_flagged(self):
        matrix = np.zeros((3, 3), dtype=int)
        matrix[0, 0] = 4
        matrix[1, 1] = 4
        with pytest.warns(UserWarning, match="class 2"):
            value = macro_f1(matrix)
        assert value == pytest.approx(2 / 3, rel=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        matrix = rng.integers(0, 30, size=(4, 4))
        matrix[0, 0] += 5
        perm = rng.permutation(4)
        permuted = matrix[np.ix_(perm, perm)]
        assert macro_f1(permuted) == pytest.approx(macro_f1(matrix), rel=1e-12)


class TestFnr:
    def test_reference(self):
        assert false_negative_rate(REFERENCE_CONFUSION, positive_class=1) == 28 / 127

    def test_positive_class_zero(self):
        # Swapping the designation turns FNR into the other class's miss rate.
        assert false_negative_rate(REFERENCE_CONFUSION, positive_class=0) == 10 / 184

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError):
            false_negative_rate(np.array([[3, 1], [0, 0]]), positive_class=1)


class TestEvaluate:
    def build_fixture(self, tmp_path):
        """Dataset + params whose logits equal each bag's single slice.

        head_w1 = I with a large positive bias keeps relu in its linear
        region; head_w2 = I with the matching negative bias undoes it, so
        h = z_agg and the identity classifier reads the slice directly.
        """
        from da3d.model import ModelParams
        from da3d.store import BagDataset, Manifest, ManifestEntry, SliceBag, write_bag_file

        shift = 10.0
        params = ModelParams(
            w1=np.zeros((2, 2), dtype=np.float32),
            w2=np.zeros(2, dtype=np.float32),
            head_w1=np.eye(2, dtype=np.float32),
            head_b1=np.full(2, shift, dtype=np.float32),
            head_w2=np.eye(2, dtype=np.float32),
            head_b2=np.full(2, -shift, dtype=np.float32),
            clf_w=np.eye(2, dtype=np.float32),
            clf_b=np.zeros(2, dtype=np.float32),
        )
        entries = []
        cells = [(0, 0, 3), (0, 1, 1), (1, 0, 1), (1, 1, 3)]
        index = 0
        for true_class, predicted, count in cells:
            for _ in range(count):
                subject_id = f"s{index:03d}"
                index += 1
                logit_row = np.zeros((1, 2), dtype=np.float32)
                logit_row[0, predicted] = 2.0
                write_bag_file(
                    SliceBag(subject_id, true_class, logit_row),
                    tmp_path / f"{subject_id}.da3d",
                )
                entries.append(
                    ManifestEntry(subject_id, f"{subject_id}.da3d",
                                  "pos" if true_class else "neg")
                )
        manifest = Manifest(entries, {"neg": 0, "pos": 1})
        return params, BagDataset(manifest, base_dir=tmp_path)

    def test_predictions_and_report(self, tmp_path):
        from da3d.metrics import evaluate

        params, dataset = self.build_fixture(tmp_path)
        report, samples = evaluate(params, dataset.manifest.ids, dataset)
        np.testing.assert_array_equal(report.confusion, [[3, 1], [1, 3]])
        assert report.accuracy == pytest.approx(6 / 8)
        assert report.auc is not None and report.auc == pytest.approx(0.75)
        assert len(samples) == 8
        for sample in samples:
            assert abs(sample.attention.sum() - 1.0) < 1e-6
            assert 0.0 <= sample.score <= 1.0

    def test_empty_ids_rejected(self, tmp_path):
        from da3d.metrics import evaluate

        params, dataset = self.build_fixture(tmp_path)
        with pytest.raises(ValueError):
            evaluate(params, [], dataset)

    def test_argmax_tie_goes_to_lower_index(self, tmp_path):
        from da3d.metrics import evaluate
        from da3d.store import BagDataset, Manifest, ManifestEntry, SliceBag, write_bag_file

        params, _ = self.build_fixture(tmp_path)
        write_bag_file(
            SliceBag("tie", 1, np.zeros((1, 2), dtype=np.float32)),
            tmp_path / "tie.da3d",
        )
        write_bag_file(
            SliceBag("neg0", 0, np.array([[2.0, 0.0]], dtype=np.float32)),
            tmp_path / "neg0.da3d",
        )
        manifest = Manifest(
            [
                ManifestEntry("tie", "tie.da3d", "pos"),
                ManifestEntry("neg0", "neg0.da3d", "neg"),
            ],
            {"neg": 0, "pos": 1},
        )
        dataset = BagDataset(manifest, base_dir=tmp_path)
        _, samples = evaluate(params, ["tie", "neg0"], dataset)
        assert samples[0].prediction == 0
