"""Synthetic slice-embedding datasets for end-to-end exercise.

Bags are standard Gaussian noise; a configurable number of slices per bag
("signal slices", positions drawn per bag) additionally carry a
class-dependent mean shift along that class's own basis direction.  With
unit background noise, `separation` is the shift magnitude in sigmas.
A sidecar JSON records each bag's signal positions so downstream checks
can compare attention mass on signal versus background slices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import substream
from .store import FILE_EXTENSION, Manifest, ManifestEntry, SliceBag, save_manifest, write_bag_file

SIGNAL_SIDECAR = "signal_slices.json"


@dataclass
class SynthSpec:
    """Shape and signal strength of a generated dataset."""

    num_classes: int = 2
    bags_per_class: int = 200
    slices_per_bag: int = 32
    dim: int = 64
    signal_slices: int = 3
    separation: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.bags_per_class < 1:
            raise ValueError("bags_per_class must be positive")
        if self.slices_per_bag < 1:
            raise ValueError("slices_per_bag must be positive")
        if self.dim < self.num_classes:
            raise ValueError("dim must be >= num_classes (one signal axis per class)")
        if not 0 <= self.signal_slices <= self.slices_per_bag:
            raise ValueError("signal_slices must lie in [0, slices_per_bag]")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")


def label_string(class_index: int) -> str:
    return f"class{class_index}"


def make_synthetic_dataset(
    spec: SynthSpec, out_dir: str | Path
) -> tuple[Manifest, dict[str, list[int]]]:
    """Generate bags under `out_dir`; returns the manifest and the map of
    subject id to signal slice positions.

    Deterministic by `spec.seed`: same spec twice writes identical bytes.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = substream(spec.seed, "synth")

    entries: list[ManifestEntry] = []
    signal_positions: dict[str, list[int]] = {}
    for class_index in range(spec.num_classes):
        shift = np.zeros(spec.dim)
        shift[class_index] = spec.separation
        for bag_index in range(spec.bags_per_class):
            subject_id = f"synth-c{class_index}-{bag_index:04d}"
            matrix = rng.standard_normal((spec.slices_per_bag, spec.dim))
            positions = np.sort(
                rng.choice(spec.slices_per_bag, size=spec.signal_slices, replace=False)
            )
            matrix[positions] += shift
            file_name = subject_id + FILE_EXTENSION
            bag = SliceBag(
                subject_id=subject_id,
                label=class_index,
                slices=matrix.astype(np.float32),
            )
            write_bag_file(bag, out_dir / file_name)
            entries.append(
                ManifestEntry(
                    subject_id=subject_id,
                    path=file_name,
                    label=label_string(class_index),
                )
            )
            signal_positions[subject_id] = [int(p) for p in positions]

    label_map = {label_string(c): c for c in range(spec.num_classes)}
    manifest = Manifest(entries=entries, label_map=label_map)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    with open(out_dir / SIGNAL_SIDECAR, "w", encoding="utf-8") as handle:
        json.dump(signal_positions, handle, sort_keys=True, indent=0)
        handle.write("\n")
    return manifest, signal_positions
