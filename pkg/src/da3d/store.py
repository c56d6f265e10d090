"""On-disk slice-embedding storage, dataset manifests, and split assignment.

One volume is a "bag": an ordered N x d float32 matrix of per-slice
embedding vectors.  Bags live in `.da3d` files with a fixed little-endian
layout; labels and subject ids live only in a line-delimited JSON manifest.

`.da3d` layout (all integers unsigned 32-bit little-endian):

    offset 0   magic bytes  0x44 0x41 0x33 0x44  ("DA3D")
    offset 4   version      = 1
    offset 8   d            embedding dimension
    offset 12  N            slice count
    offset 16  payload      N*d IEEE-754 float32, little-endian, row-major
                            (slice index varies slowest)

The format carries no checksum; only structural corruption (bad magic,
bad version, truncated or oversized payload, non-finite values) is
detectable on read.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .rng import substream

MAGIC = b"DA3D"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
FILE_EXTENSION = ".da3d"


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------
class StoreError(Exception):
    """Base class for storage and manifest failures."""


class FormatError(StoreError):
    """Base class for malformed `.da3d` content."""


class BadMagicError(FormatError):
    """File does not start with the DA3D magic bytes."""


class UnsupportedVersionError(FormatError):
    """File declares a format version this reader does not speak."""


class TruncatedFileError(FormatError):
    """Header or payload is shorter than the declared size."""


class TrailingDataError(FormatError):
    """File contains bytes beyond the declared payload."""


class InvalidHeaderError(FormatError):
    """Header fields violate the bag invariants (N >= 1, d >= 1)."""


class NonFiniteDataError(FormatError):
    """Payload contains NaN or infinite values."""


class DimensionMismatchError(StoreError):
    """Embedding dimension disagrees with the rest of the dataset."""


class ManifestError(StoreError):
    """Manifest file is malformed or violates its invariants."""


class SplitError(StoreError):
    """Split preconditions are not met."""


# ---------------------------------------------------------------------------
# Bags
# ---------------------------------------------------------------------------
@dataclass
class SliceBag:
    """One volume: an ordered matrix of per-slice embeddings plus metadata.

    Attributes:
        subject_id: Opaque identifier, unique within a dataset.
        label: Class index in [0, C).
        slices: N x d float32 matrix, one row per axial slice.
    """

    subject_id: str
    label: int
    slices: np.ndarray

    @property
    def num_slices(self) -> int:
        return int(self.slices.shape[0])

    @property
    def dim(self) -> int:
        return int(self.slices.shape[1])

    def validate(self) -> None:
        if self.slices.ndim != 2:
            raise ValueError(f"slices must be 2-D, got shape {self.slices.shape}")
        if self.num_slices < 1 or self.dim < 1:
            raise ValueError(f"bag must have N >= 1 and d >= 1, got {self.slices.shape}")
        _check_finite_rows(self.slices)


def _check_finite_rows(matrix: np.ndarray) -> None:
    finite = np.isfinite(matrix)
    if not finite.all():
        bad_row = int(np.where(~finite.all(axis=1))[0][0])
        raise ValueError(f"non-finite value in slice row {bad_row}")


def write_bag(bag: SliceBag, destination: BinaryIO) -> int:
    """Serialize a bag's matrix to `destination`; returns bytes written.

    Only the matrix is stored; label and subject id belong to the manifest.
    Rejects non-finite values with a diagnostic naming the offending row.
    """
    bag.validate()
    matrix = np.ascontiguousarray(bag.slices, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, bag.dim, bag.num_slices)
    destination.write(header)
    destination.write(matrix.tobytes())
    return len(header) + matrix.nbytes


def read_bag(source: BinaryIO, expected_dim: int | None = None) -> np.ndarray:
    """Read a `.da3d` stream back into an N x d float32 matrix.

    The matrix equals the written one bit-for-bit.  Raises a distinct
    FormatError subclass per corruption category; DimensionMismatchError
    if `expected_dim` is given and disagrees with the header.
    """
    header = source.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise TruncatedFileError(
            f"header is {len(header)} bytes, expected {_HEADER.size}"
        )
    magic, version, dim, num_slices = _HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if num_slices < 1 or dim < 1:
        raise InvalidHeaderError(f"invalid header dims N={num_slices}, d={dim}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatchError(
            f"file has d={dim}, dataset expects d={expected_dim}"
        )
    expected_bytes = num_slices * dim * 4
    payload = source.read(expected_bytes)
    if len(payload) < expected_bytes:
        raise TruncatedFileError(
            f"payload is {len(payload)} bytes, expected {expected_bytes}"
        )
    if source.read(1):
        raise TrailingDataError("unexpected bytes after payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(num_slices, dim)
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if not np.isfinite(matrix).all():
        raise NonFiniteDataError("payload contains non-finite values")
    return matrix


def write_bag_file(bag: SliceBag, path: str | Path) -> int:
    with open(path, "wb") as handle:
        return write_bag(bag, handle)


def read_bag_file(path: str | Path, expected_dim: int | None = None) -> np.ndarray:
    with open(path, "rb") as handle:
        return read_bag(handle, expected_dim=expected_dim)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------
@dataclass
class ManifestEntry:
    """One dataset record: id, bag file path, label string, split tags."""

    subject_id: str
    path: str
    label: str
    split: str | None = None
    fold: int | None = None


@dataclass
class Manifest:
    """All dataset records plus the explicit label-string -> index map."""

    entries: list[ManifestEntry]
    label_map: dict[str, int]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.subject_id in seen:
                raise ManifestError(f"duplicate subject id {entry.subject_id!r}")
            seen.add(entry.subject_id)
            if entry.label not in self.label_map:
                raise ManifestError(
                    f"label {entry.label!r} of {entry.subject_id!r} missing from label_map"
                )

    @property
    def ids(self) -> list[str]:
        return [entry.subject_id for entry in self.entries]

    @property
    def num_classes(self) -> int:
        return len(self.label_map)

    def entry(self, subject_id: str) -> ManifestEntry:
        for candidate in self.entries:
            if candidate.subject_id == subject_id:
                return candidate
        raise ManifestError(f"unknown subject id {subject_id!r}")

    def class_index(self, subject_id: str) -> int:
        return self.label_map[self.entry(subject_id).label]

    def ids_by_class(self) -> dict[int, list[str]]:
        """Subject ids grouped by class index, ids sorted within each class."""
        groups: dict[int, list[str]] = {index: [] for index in self.label_map.values()}
        for entry in self.entries:
            groups[self.label_map[entry.label]].append(entry.subject_id)
        return {index: sorted(ids) for index, ids in groups.items()}

    def subset(self, ids: Iterable[str]) -> "Manifest":
        wanted = set(ids)
        kept = [entry for entry in self.entries if entry.subject_id in wanted]
        return Manifest(entries=kept, label_map=dict(self.label_map))


VALID_SPLIT_TAGS = ("train", "val", "test")


def load_manifest(path: str | Path, label_map: dict[str, int] | None = None) -> Manifest:
    """Load a line-delimited JSON manifest.

    Each line is an object with keys `id`, `path`, `label` and optionally
    `split` and `fold`; unknown keys are ignored for forward compatibility.
    When `label_map` is omitted, classes are indexed by sorted label string.
    """
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ManifestError(f"{path}:{line_no}: invalid JSON: {err}") from err
            if not isinstance(record, dict):
                raise ManifestError(f"{path}:{line_no}: record must be an object")
            missing = [key for key in ("id", "path", "label") if key not in record]
            if missing:
                raise ManifestError(f"{path}:{line_no}: missing keys {missing}")
            split = record.get("split")
            if split is not None and split not in VALID_SPLIT_TAGS:
                raise ManifestError(f"{path}:{line_no}: invalid split tag {split!r}")
            fold = record.get("fold")
            if fold is not None:
                fold = int(fold)
            entries.append(
                ManifestEntry(
                    subject_id=str(record["id"]),
                    path=str(record["path"]),
                    label=str(record["label"]),
                    split=split,
                    fold=fold,
                )
            )
    if label_map is None:
        labels = sorted({entry.label for entry in entries})
        label_map = {label: index for index, label in enumerate(labels)}
    return Manifest(entries=entries, label_map=label_map)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest as line-delimited JSON (UTF-8, deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as handle:
        for entry in manifest.entries:
            record: dict[str, object] = {
                "id": entry.subject_id,
                "path": entry.path,
                "label": entry.label,
            }
            if entry.split is not None:
                record["split"] = entry.split
            if entry.fold is not None:
                record["fold"] = entry.fold
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------
@dataclass
class SplitAssignment:
    """Either a holdout train/val/test partition or k folds + shared val.

    Holdout mode populates `train_ids`/`val_ids`/`test_ids` and leaves
    `folds` empty; k-fold mode populates `folds` and `val_ids`.  Parts are
    disjoint and their union covers the source manifest.
    """

    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    folds: list[list[str]] = field(default_factory=list)

    @property
    def is_kfold(self) -> bool:
        return bool(self.folds)

    @property
    def num_folds(self) -> int:
        return len(self.folds)

    def all_ids(self) -> list[str]:
        if self.is_kfold:
            merged = list(self.val_ids)
            for fold in self.folds:
                merged.extend(fold)
            return merged
        return self.train_ids + self.val_ids + self.test_ids

    def fold_split(self, fold_index: int) -> "SplitAssignment":
        """Holdout view of fold `fold_index`: test = that fold, train = rest."""
        if not self.is_kfold:
            raise SplitError("fold_split requires a k-fold assignment")
        if not 0 <= fold_index < self.num_folds:
            raise SplitError(f"fold index {fold_index} out of range")
        train: list[str] = []
        for index, fold in enumerate(self.folds):
            if index != fold_index:
                train.extend(fold)
        return SplitAssignment(
            train_ids=train,
            val_ids=list(self.val_ids),
            test_ids=list(self.folds[fold_index]),
        )

    def tagged_manifest(self, manifest: Manifest) -> Manifest:
        """Return a copy of `manifest` with split/fold tags filled in."""
        if self.is_kfold:
            tags: dict[str, tuple[str | None, int | None]] = {}
            for subject_id in self.val_ids:
                tags[subject_id] = ("val", None)
            for index, fold in enumerate(self.folds):
                for subject_id in fold:
                    tags[subject_id] = (None, index)
        else:
            tags = {subject_id: ("train", None) for subject_id in self.train_ids}
            tags.update({subject_id: ("val", None) for subject_id in self.val_ids})
            tags.update({subject_id: ("test", None) for subject_id in self.test_ids})
        entries = []
        for entry in manifest.entries:
            if entry.subject_id not in tags:
                raise SplitError(f"{entry.subject_id!r} missing from assignment")
            split, fold = tags[entry.subject_id]
            entries.append(replace(entry, split=split, fold=fold))
        return Manifest(entries=entries, label_map=dict(manifest.label_map))

    @staticmethod
    def from_tagged_manifest(manifest: Manifest) -> "SplitAssignment":
        """Reconstruct an assignment from a manifest's split/fold tags."""
        folds: dict[int, list[str]] = {}
        parts: dict[str, list[str]] = {"train": [], "val": [], "test": []}
        for entry in manifest.entries:
            if entry.fold is not None:
                folds.setdefault(entry.fold, []).append(entry.subject_id)
            elif entry.split is not None:
                parts[entry.split].append(entry.subject_id)
            else:
                raise SplitError(f"{entry.subject_id!r} carries no split or fold tag")
        if folds:
            indices = sorted(folds)
            if indices != list(range(len(indices))):
                raise SplitError(f"fold indices {indices} are not contiguous from 0")
            return SplitAssignment(
                val_ids=parts["val"], folds=[folds[i] for i in indices]
            )
        return SplitAssignment(
            train_ids=parts["train"], val_ids=parts["val"], test_ids=parts["test"]
        )


def make_split(
    manifest: Manifest,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Stratified holdout split, deterministic given `seed`.

    Per class: floor(val_ratio * n) to val, ceil(test_ratio * n) to
    test, everything left to train.  Rounding test up (never down) keeps
    every part within one sample of its exact share for all class sizes.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or ratios[0] <= 0:
        raise SplitError(f"invalid ratios {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios {ratios} must sum to 1")
    rng = substream(seed, "split")
    assignment = SplitAssignment()
    for class_index in sorted(manifest.ids_by_class()):
        ids = manifest.ids_by_class()[class_index]
        if len(ids) < 3:
            raise SplitError(
                f"class {class_index} has {len(ids)} samples, need at least 3"
            )
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n_val = math.floor(ratios[1] * len(ids))
        n_test = math.ceil(ratios[2] * len(ids))
        n_train = len(ids) - n_val - n_test
        if n_train < 0:
            raise SplitError(
                f"class {class_index}: ratios {ratios} leave no training samples"
            )
        assignment.train_ids.extend(shuffled[:n_train])
        assignment.val_ids.extend(shuffled[n_train : n_train + n_val])
        assignment.test_ids.extend(shuffled[n_train + n_val :])
    return assignment


def make_kfold(
    manifest: Manifest,
    k: int = 5,
    held_out_val_per_class: int = 10,
    seed: int = 0,
) -> SplitAssignment:
    """Fixed validation list plus k stratified folds, deterministic by seed.

    First removes exactly `held_out_val_per_class` samples per class into
    a shared validation list, then deals the remainder of each class into
    k folds round-robin (fold sizes differ by at most one per class).
    """
    if k < 2:
        raise SplitError(f"k must be >= 2, got {k}")
    if held_out_val_per_class < 0:
        raise SplitError("held_out_val_per_class must be >= 0")
    rng = substream(seed, "split")
    assignment = SplitAssignment(folds=[[] for _ in range(k)])
    for class_index in sorted(manifest.ids_by_class()):
        ids = manifest.ids_by_class()[class_index]
        if len(ids) <= held_out_val_per_class + k:
            raise SplitError(
                f"class {class_index} has {len(ids)} samples, need"
                f" more than {held_out_val_per_class + k}"
            )
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        assignment.val_ids.extend(shuffled[:held_out_val_per_class])
        remainder = shuffled[held_out_val_per_class:]
        for fold_index in range(k):
            assignment.folds[fold_index].extend(remainder[fold_index::k])
    return assignment


# ---------------------------------------------------------------------------
# Dataset handle
# ---------------------------------------------------------------------------
class BagDataset:
    """Read-through cache mapping subject ids to labeled SliceBags.

    Paths are resolved relative to `base_dir` (defaults to the manifest
    file's directory when constructed via `open_dataset`).  The first bag
    read pins the dataset embedding dimension; later mismatches raise
    DimensionMismatchError.  Reads are safe for concurrent use.
    """

    def __init__(self, manifest: Manifest, base_dir: str | Path = "."):
        self.manifest = manifest
        self.base_dir = Path(base_dir)
        self._cache: dict[str, SliceBag] = {}
        self._dim: int | None = None
        missing = [
            entry.subject_id
            for entry in manifest.entries
            if not self._resolve(entry).exists()
        ]
        if missing:
            raise ManifestError(
                f"{len(missing)} manifest paths not resolvable, first: {missing[0]!r}"
            )

    def _resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.path)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def embedding_dim(self) -> int:
        if self._dim is None and self.manifest.entries:
            self.get(self.manifest.entries[0].subject_id)
        if self._dim is None:
            raise ManifestError("empty dataset has no embedding dimension")
        return self._dim

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    def get(self, subject_id: str) -> SliceBag:
        cached = self._cache.get(subject_id)
        if cached is not None:
            return cached
        entry = self.manifest.entry(subject_id)
        matrix = read_bag_file(self._resolve(entry), expected_dim=self._dim)
        if self._dim is None:
            self._dim = int(matrix.shape[1])
        bag = SliceBag(
            subject_id=subject_id,
            label=self.manifest.label_map[entry.label],
            slices=matrix,
        )
        self._cache[subject_id] = bag
        return bag

    def label(self, subject_id: str) -> int:
        return self.manifest.class_index(subject_id)

    def bags(self, ids: Sequence[str]) -> list[SliceBag]:
        return [self.get(subject_id) for subject_id in ids]


def open_dataset(
    manifest_path: str | Path, label_map: dict[str, int] | None = None
) -> BagDataset:
    """Load a manifest and return a BagDataset rooted at its directory."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path, label_map=label_map)
    return BagDataset(manifest, base_dir=manifest_path.parent)
