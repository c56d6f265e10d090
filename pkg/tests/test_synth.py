"""Synthetic dataset generator tests."""

import json

import numpy as np
import pytest

from da3d.store import BagDataset, read_bag_file
from da3d.synth import SynthSpec, make_synthetic_dataset


def small_spec(**overrides):
    defaults = dict(num_classes=2, bags_per_class=5, slices_per_bag=8,
                    dim=10, signal_slices=2, separation=4.0, seed=3)
    defaults.update(overrides)
    return SynthSpec(**defaults)


class TestSynthSpec:
    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            small_spec(num_classes=0).validate()
        with pytest.raises(ValueError):
            small_spec(signal_slices=9).validate()
        with pytest.raises(ValueError):
            small_spec(dim=1).validate()
        with pytest.raises(ValueError):
            small_spec(separation=-1.0).validate()


class TestGeneration:
    def test_file_inventory(self, tmp_path):
        manifest, positions = make_synthetic_dataset(small_spec(), tmp_path)
        assert len(manifest.entries) == 10
        assert len(positions) == 10
        assert len(list(tmp_path.glob("*.da3d"))) == 10
        assert (tmp_path / "manifest.jsonl").exists()
        sidecar = json.loads((tmp_path / "signal_slices.json").read_text())
        assert set(sidecar) == set(positions)

    def test_deterministic(self, tmp_path):
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        make_synthetic_dataset(small_spec(), dir_a)
        make_synthetic_dataset(small_spec(), dir_b)
        for name in ("manifest.jsonl", "signal_slices.json", "synth-c0-0002.da3d"):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()

    def test_signal_slices_carry_shift(self, tmp_path):
        spec = small_spec(separation=50.0)
        manifest, positions = make_synthetic_dataset(spec, tmp_path)
        for entry in manifest.entries:
            matrix = read_bag_file(tmp_path / entry.path)
            class_index = manifest.label_map[entry.label]
            signal = positions[entry.subject_id]
            background = [j for j in range(spec.slices_per_bag) if j not in signal]
            # At 50 sigma the shifted coordinate dominates unambiguously.
            assert matrix[signal, class_index].min() > 40.0
            assert np.abs(matrix[background, class_index]).max() < 10.0

    def test_loads_as_dataset(self, tmp_path):
        manifest, _ = make_synthetic_dataset(small_spec(), tmp_path)
        dataset = BagDataset(manifest, base_dir=tmp_path)
        assert dataset.embedding_dim == 10
        assert dataset.num_classes == 2
        bag = dataset.get(manifest.entries[0].subject_id)
        assert bag.slices.shape == (8, 10)

    def test_zero_separation_classes_identical_in_distribution(self, tmp_path):
        manifest, _ = make_synthetic_dataset(
            small_spec(separation=0.0, bags_per_class=20), tmp_path
        )
        dataset = BagDataset(manifest, base_dir=tmp_path)
        means = {0: [], 1: []}
        for entry in manifest.entries:
            bag = dataset.get(entry.subject_id)
            means[bag.label].append(bag.slices.mean())
        # Pooled slice means of both classes sit near zero.
        assert abs(np.mean(means[0])) < 0.1
        assert abs(np.mean(means[1])) < 0.1
