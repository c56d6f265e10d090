"""Config-driven command line for reproducible experiments.

Subcommands: `split`, `train`, `eval`, `kfold`, `synth`,
`export-embeddings`.  Exit codes are a stable contract: 0 success,
2 configuration error, 3 numerical divergence, 4 data or shape error.

The experiment config is a flat JSON object (key -> scalar).  Unknown
keys are hard errors so hyperparameter typos cannot pass silently.  All
randomness flows from the single `seed` through named substreams.  The
env var DA3D_THREADS caps in-process worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields as dataclass_fields, replace
from pathlib import Path

import numpy as np

from .metrics import EvalReport, evaluate
from .model import load_checkpoint, save_checkpoint
from .store import (
    BagDataset,
    Manifest,
    ManifestEntry,
    SliceBag,
    SplitAssignment,
    StoreError,
    load_manifest,
    make_kfold,
    make_split,
    save_manifest,
    write_bag_file,
)
from .synth import SynthSpec, make_synthetic_dataset
from .training import (
    EpochRecord,
    TrainConfig,
    TrainingDivergedError,
    run_kfold,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_DATA = 4


class ConfigError(Exception):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# Experiment config
# ---------------------------------------------------------------------------
_EXPERIMENT_KEYS: dict[str, type] = {
    "manifest": str,
    "out": str,
    "positive_label": str,
    "negative_label": str,
    "split_mode": str,
    "train_ratio": float,
    "val_ratio": float,
    "test_ratio": float,
    "kfold_k": int,
    "kfold_val_per_class": int,
}


@dataclass
class ExperimentConfig:
    """Task definition plus the TrainConfig, parsed from flat JSON."""

    manifest: str
    out: str
    positive_label: str
    negative_label: str
    split_mode: str
    train_ratio: float
    val_ratio: float
    test_ratio: float
    kfold_k: int
    kfold_val_per_class: int
    train: TrainConfig

    @property
    def seed(self) -> int:
        return self.train.seed

    def as_flat_dict(self) -> dict:
        flat = {
            key: getattr(self, key)
            for key in _EXPERIMENT_KEYS
        }
        flat.update(self.train.as_dict())
        return flat


def _coerce(key: str, value: object, expected: type) -> object:
    if expected is bool:
        if isinstance(value, bool):
            return value
    elif expected is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif expected is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif expected is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"config key {key!r} expects {expected.__name__}, got {value!r}")


def parse_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a flat JSON experiment config."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    train_fields = {f.name: f for f in dataclass_fields(TrainConfig)}
    known = set(_EXPERIMENT_KEYS) | set(train_fields)
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")

    train_kwargs = {}
    for name, field_def in train_fields.items():
        if name in raw:
            # Every TrainConfig field has a scalar default of the right type.
            train_kwargs[name] = _coerce(name, raw[name], type(field_def.default))
    train_config = TrainConfig(**train_kwargs)
    try:
        train_config.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err

    def required(key: str) -> object:
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")
        return _coerce(key, raw[key], _EXPERIMENT_KEYS[key])

    config = ExperimentConfig(
        manifest=str(required("manifest")),
        out=str(required("out")),
        positive_label=str(required("positive_label")),
        negative_label=str(required("negative_label")),
        split_mode=str(raw.get("split_mode", "holdout")),
        train_ratio=float(_coerce("train_ratio", raw.get("train_ratio", 0.8), float)),
        val_ratio=float(_coerce("val_ratio", raw.get("val_ratio", 0.1), float)),
        test_ratio=float(_coerce("test_ratio", raw.get("test_ratio", 0.1), float)),
        kfold_k=int(_coerce("kfold_k", raw.get("kfold_k", 5), int)),
        kfold_val_per_class=int(
            _coerce("kfold_val_per_class", raw.get("kfold_val_per_class", 10), int)
        ),
        train=train_config,
    )
    if config.split_mode not in ("holdout", "kfold"):
        raise ConfigError(f"split_mode must be 'holdout' or 'kfold', got {config.split_mode!r}")
    if config.positive_label == config.negative_label:
        raise ConfigError("positive_label and negative_label must differ")
    return config


def _rebase_manifest(manifest: Manifest, source_dir: Path, target_dir: Path) -> Manifest:
    """Rewrite relative entry paths so they resolve from `target_dir`."""
    entries = []
    for entry in manifest.entries:
        path = Path(entry.path)
        if not path.is_absolute():
            resolved = (source_dir / path).resolve()
            path = Path(os.path.relpath(resolved, target_dir.resolve()))
        entries.append(replace(entry, path=str(path)))
    return Manifest(entries=entries, label_map=dict(manifest.label_map))


def _task_manifest(config: ExperimentConfig) -> Manifest:
    """Manifest restricted to the task's two labels, negative class = 0."""
    manifest_path = Path(config.manifest)
    label_map = {config.negative_label: 0, config.positive_label: 1}
    full = load_manifest(manifest_path)
    for label in (config.negative_label, config.positive_label):
        if label not in {entry.label for entry in full.entries}:
            raise ConfigError(f"task label {label!r} not present in manifest")
    kept = [entry for entry in full.entries if entry.label in label_map]
    return Manifest(entries=kept, label_map=label_map)


def _dataset_for(config: ExperimentConfig) -> BagDataset:
    return BagDataset(_task_manifest(config), base_dir=Path(config.manifest).parent)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_split(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    if args.kfold is not None:
        assignment = make_kfold(
            manifest, k=args.kfold,
            held_out_val_per_class=args.val_per_class, seed=args.seed,
        )
    else:
        try:
            parts = tuple(float(r) for r in args.ratios.split(","))
            if len(parts) != 3:
                raise ValueError
        except ValueError:
            raise ConfigError(f"--ratios must be three comma-separated floats, got {args.ratios!r}")
        assignment = make_split(manifest, ratios=parts, seed=args.seed)  # type: ignore[arg-type]
    tagged = assignment.tagged_manifest(manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tagged = _rebase_manifest(tagged, Path(args.manifest).parent, out.parent)
    save_manifest(tagged, out)
    counts = (
        f"folds={assignment.num_folds} val={len(assignment.val_ids)}"
        if assignment.is_kfold
        else f"train={len(assignment.train_ids)} val={len(assignment.val_ids)}"
             f" test={len(assignment.test_ids)}"
    )
    print(f"wrote {out} ({counts})")
    return EXIT_OK


def _print_epoch(record: EpochRecord) -> None:
    print(
        f"epoch {record.epoch:4d}  train {record.train.total:.6f}"
        f"  val {record.val.total:.6f}  val_acc {record.val_accuracy:.4f}",
        file=sys.stderr,
    )


def _resolve_split(config: ExperimentConfig, manifest: Manifest, out_dir: Path) -> SplitAssignment:
    tagged = any(
        entry.split is not None or entry.fold is not None for entry in manifest.entries
    )
    if tagged:
        return SplitAssignment.from_tagged_manifest(manifest)
    if config.split_mode == "kfold":
        assignment = make_kfold(
            manifest, k=config.kfold_k,
            held_out_val_per_class=config.kfold_val_per_class, seed=config.seed,
        )
    else:
        assignment = make_split(
            manifest,
            ratios=(config.train_ratio, config.val_ratio, config.test_ratio),
            seed=config.seed,
        )
    tagged_manifest = _rebase_manifest(
        assignment.tagged_manifest(manifest), Path(config.manifest).parent, out_dir
    )
    save_manifest(tagged_manifest, out_dir / "split_manifest.jsonl")
    return assignment


def cmd_train(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    if args.manifest:
        config.manifest = args.manifest
    if args.out:
        config.out = args.out
    if args.seed is not None:
        config.train.seed = args.seed
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = _dataset_for(config)
    split = _resolve_split(config, dataset.manifest, out_dir)
    if split.is_kfold:
        raise ConfigError("train expects a holdout split; use the kfold subcommand")

    best_params, history = train(config.train, split, dataset, log=_print_epoch)
    config_echo = config.as_flat_dict()
    # Filesystem locations are not hyperparameters; dropping them keeps
    # checkpoints portable and identical runs bitwise comparable.
    config_echo.pop("manifest", None)
    config_echo.pop("out", None)
    config_echo["label_map"] = json.dumps(dataset.manifest.label_map, sort_keys=True)
    save_checkpoint(
        out_dir / "checkpoint.da3c", best_params,
        config_echo=config_echo, seed=config.seed,
    )
    history.write_log(out_dir / "history.jsonl")
    print(
        f"best validation loss {history.best_val_total:.6f}"
        f" at epoch {history.best_epoch}"
    )
    return EXIT_OK


def _subset_ids(manifest: Manifest, subset: str | None) -> list[str]:
    if subset is None:
        return [entry.subject_id for entry in manifest.entries]
    return [entry.subject_id for entry in manifest.entries if entry.split == subset]


def _load_eval_inputs(args: argparse.Namespace) -> tuple:
    params, config_echo, _seed = load_checkpoint(args.checkpoint)
    label_map = json.loads(config_echo.get("label_map", "{}")) or None
    manifest = load_manifest(args.manifest, label_map=label_map)
    if label_map:
        known = set(label_map)
        kept = [entry for entry in manifest.entries if entry.label in known]
        manifest = Manifest(entries=kept, label_map=label_map)
    dataset = BagDataset(manifest, base_dir=Path(args.manifest).parent)
    ids = _subset_ids(manifest, args.subset)
    return params, config_echo, dataset, ids


def cmd_eval(args: argparse.Namespace) -> int:
    params, _config_echo, dataset, ids = _load_eval_inputs(args)
    if not ids:
        raise StoreError(f"evaluation subset {args.subset!r} is empty")
    if dataset.embedding_dim != params.dim:
        raise StoreError(
            f"checkpoint expects d={params.dim}, dataset has d={dataset.embedding_dim}"
        )
    report, samples = evaluate(params, ids, dataset, positive_class=1)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_json(out_dir / "report.json")
    report.write_confusion_csv(out_dir / "confusion.csv")
    with open(out_dir / "per_sample.jsonl", "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(
                json.dumps(
                    {
                        "id": sample.subject_id,
                        "label": sample.label,
                        "prediction": sample.prediction,
                        "score": sample.score,
                        "attention": [float(a) for a in sample.attention],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    auc_text = f"{report.auc:.4f}" if report.auc is not None else "n/a"
    fnr_text = f"{report.fnr:.4f}" if report.fnr is not None else "n/a"
    print(
        f"n={report.n} accuracy={report.accuracy:.4f} auc={auc_text}"
        f" macro_f1={report.macro_f1:.4f} fnr={fnr_text}"
    )
    return EXIT_OK


def cmd_kfold(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    if args.manifest:
        config.manifest = args.manifest
    if args.out:
        config.out = args.out
    if args.seed is not None:
        config.train.seed = args.seed
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = _dataset_for(config)
    split = _resolve_split(config, dataset.manifest, out_dir)
    if not split.is_kfold:
        raise ConfigError("kfold requires split_mode='kfold' or a fold-tagged manifest")

    def fold_log(fold_index: int, record: EpochRecord) -> None:
        print(f"fold {fold_index}: ", end="", file=sys.stderr)
        _print_epoch(record)

    reports, summary = run_kfold(config.train, split, dataset, log=fold_log)
    for fold_index, report in enumerate(reports):
        report.write_json(out_dir / f"fold{fold_index}_report.json")
        report.write_confusion_csv(out_dir / f"fold{fold_index}_confusion.csv")
    with open(out_dir / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    mean_acc = summary["mean_accuracy"]
    print(f"k={len(reports)} mean accuracy {mean_acc:.4f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        num_classes=args.classes,
        bags_per_class=args.bags_per_class,
        slices_per_bag=args.slices,
        dim=args.dim,
        signal_slices=args.signal_slices,
        separation=args.separation,
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    manifest, _ = make_synthetic_dataset(spec, args.out)
    print(f"wrote {len(manifest.entries)} bags to {args.out}")
    return EXIT_OK


def cmd_export_embeddings(args: argparse.Namespace) -> int:
    params, _config_echo, dataset, ids = _load_eval_inputs(args)
    if not ids:
        raise StoreError(f"export subset {args.subset!r} is empty")
    _, samples = evaluate(params, ids, dataset, positive_class=1)
    matrix = np.stack([sample.normalized for sample in samples]).astype(np.float32)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_bag_file(
        SliceBag(subject_id="embeddings", label=0, slices=matrix),
        out_dir / "embeddings.da3d",
    )
    index_to_label = {v: k for k, v in dataset.manifest.label_map.items()}
    # Row i of embeddings.da3d corresponds to line i of this manifest.
    entries = [
        ManifestEntry(
            subject_id=sample.subject_id,
            path="embeddings.da3d",
            label=index_to_label[sample.label],
        )
        for sample in samples
    ]
    save_manifest(
        Manifest(entries=entries, label_map=dict(dataset.manifest.label_map)),
        out_dir / "embeddings_manifest.jsonl",
    )
    print(f"exported {matrix.shape[0]} x {matrix.shape[1]} embeddings to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="da3d",
        description="Train and evaluate attention-pooled volume classifiers "
        "over per-slice embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_split = sub.add_parser("split", help="tag a manifest with a split assignment")
    p_split.add_argument("--manifest", required=True)
    p_split.add_argument("--out", required=True)
    p_split.add_argument("--seed", type=int, default=0)
    p_split.add_argument("--ratios", default="0.8,0.1,0.1",
                         help="train,val,test ratios (holdout mode)")
    p_split.add_argument("--kfold", type=int, default=None,
                         help="number of folds (switches to k-fold mode)")
    p_split.add_argument("--val-per-class", type=int, default=10,
                         help="held-out validation samples per class (k-fold mode)")
    p_split.set_defaults(func=cmd_split)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--manifest", default=None, help="override config manifest")
    p_train.add_argument("--out", default=None, help="override config output dir")
    p_train.add_argument("--seed", type=int, default=None, help="override config seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest subset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--subset", default="test", choices=("train", "val", "test", "all"))
    p_eval.set_defaults(func=cmd_eval)

    p_kfold = sub.add_parser("kfold", help="run the k-fold protocol from a config file")
    p_kfold.add_argument("--config", required=True)
    p_kfold.add_argument("--manifest", default=None)
    p_kfold.add_argument("--out", default=None)
    p_kfold.add_argument("--seed", type=int, default=None)
    p_kfold.set_defaults(func=cmd_kfold)

    p_synth = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--classes", type=int, default=2)
    p_synth.add_argument("--bags-per-class", type=int, default=200)
    p_synth.add_argument("--slices", type=int, default=32)
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--signal-slices", type=int, default=3)
    p_synth.add_argument("--separation", type=float, default=4.0)
    p_synth.set_defaults(func=cmd_synth)

    p_export = sub.add_parser(
        "export-embeddings",
        help="export normalized aggregated embeddings for external plotting",
    )
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--manifest", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--subset", default="test", choices=("train", "val", "test", "all"))
    p_export.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "subset", None) == "all":
        args.subset = None
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as err:
        ids = f" batch={err.batch_ids}" if err.batch_ids else ""
        print(f"training diverged: {err}{ids}", file=sys.stderr)
        return EXIT_DIVERGED
    except (StoreError, FileNotFoundError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
