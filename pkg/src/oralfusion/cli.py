"""Command-line pipeline: prepare, augment, train, evaluate, run-all.

Stages communicate only through files under the workdir::

    <workdir>/split.manifest
    <workdir>/prepare.stats.json
    <workdir>/augmented.manifest
    <workdir>/augmented/<class>/*.png      (materialize mode only)
    <workdir>/checkpoints/best.pt
    <workdir>/logs/training.jsonl
    <workdir>/reports/report.{txt,json}
    <workdir>/run_manifest.json            (run-all)

Exit codes: 0 success, 1 validation error, 2 data error, 3 training or
numeric error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import torch

from . import augment as aug_mod
from . import evaluation as eval_mod
from . import model as model_mod
from . import splitting as split_mod
from . import training as train_mod
from .config import PipelineConfig, RunManifest, load_config
from .dataset import ORIGIN_ORIGINAL, LabeledExample, ingest_images, load_metadata, patient_id_from_filename
from .errors import DataError, EvaluationError, PipelineError
from .loading import RenderedBatchSource
from .synthetic import make_synthetic_dataset, write_desk_config

SPLIT_MANIFEST = "split.manifest"
AUGMENTED_MANIFEST = "augmented.manifest"
PREPARE_STATS = "prepare.stats.json"
CHECKPOINT = "checkpoints/best.pt"
TRAINING_LOG = "logs/training.jsonl"
REPORT_TEXT = "reports/report.txt"
REPORT_JSON = "reports/report.json"
RUN_MANIFEST = "run_manifest.json"


def cmd_prepare(config: PipelineConfig) -> split_mod.SplitManifest:
    """Ingest, pair and split; writes the split manifest and statistics."""
    workdir = config.workdir
    workdir.mkdir(parents=True, exist_ok=True)

    metadata = load_metadata(config.metadata_csv)
    result = ingest_images(config.dataset_root, config.taxonomy, metadata)
    manifest = split_mod.stratified_split(
        result.examples,
        ratios=config.split_ratios,
        seed=config.split_seed,
        taxonomy=config.taxonomy,
        group_by_patient=config.group_by_patient,
    ).with_age_stats(metadata.age_min, metadata.age_max)
    split_mod.write_manifest(manifest, workdir / SPLIT_MANIFEST)

    stats = {
        "metadata_rows": len(metadata),
        "ingested_examples": len(result.examples),
        "per_class_counts": result.per_class_counts,
        "skipped_folders": result.skipped_folders,
        "per_class_subset_counts": manifest.per_class_counts,
    }
    (workdir / PREPARE_STATS).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(f"prepared {len(result.examples)} examples -> {workdir / SPLIT_MANIFEST}")
    for cls in config.taxonomy.classes:
        print(f"  {cls}: {result.per_class_counts.get(cls, 0)} "
              f"{manifest.per_class_counts[cls]}")
    if result.skipped_folders:
        print(f"  skipped folders outside taxonomy: {result.skipped_folders}")
    return manifest


def _train_examples_from_split(
    manifest: split_mod.SplitManifest,
) -> list[LabeledExample]:
    examples = []
    for eid in manifest.examples_in("train"):
        examples.append(
            LabeledExample(
                example_id=eid,
                image_path=eid,
                patient_id=patient_id_from_filename(eid.split("/", 1)[1]),
                label=manifest.labels[eid],
                origin=ORIGIN_ORIGINAL,
            )
        )
    return examples


def _subset_examples(
    manifest: split_mod.SplitManifest, subset: str
) -> list[LabeledExample]:
    out = []
    for eid in manifest.examples_in(subset):
        out.append(
            LabeledExample(
                example_id=eid,
                image_path=eid,
                patient_id=patient_id_from_filename(eid.split("/", 1)[1]),
                label=manifest.labels[eid],
                origin=ORIGIN_ORIGINAL,
            )
        )
    return out


def cmd_augment(config: PipelineConfig) -> aug_mod.AugmentedManifest:
    """Expand and oversample the training subset; writes its manifest."""
    workdir = config.workdir
    split_manifest = split_mod.read_manifest(workdir / SPLIT_MANIFEST)

    train_examples = _train_examples_from_split(split_manifest)
    expanded = aug_mod.expand_training_set(train_examples, config.plan, split_manifest)
    final = aug_mod.oversample_minority(
        expanded,
        threshold=config.oversample_threshold,
        seed=config.plan.seed,
        taxonomy=config.taxonomy,
    )

    subset_counts = {
        subset: {
            cls: split_manifest.per_class_counts[cls][subset]
            for cls in config.taxonomy.classes
        }
        for subset in ("validation", "test")
    }
    manifest = aug_mod.AugmentedManifest(
        plan=config.plan,
        threshold=config.oversample_threshold,
        split_seed=split_manifest.seed,
        materialized=config.materialize,
        examples=final,
        subset_counts=subset_counts,
    )
    if config.materialize:
        n = aug_mod.materialize_augmented(
            final, config.dataset_root, config.plan, workdir / "augmented", workers=4
        )
        print(f"materialized {n} augmented images under {workdir / 'augmented'}")
    aug_mod.write_augmented_manifest(manifest, workdir / AUGMENTED_MANIFEST)

    for cls in sorted(manifest.counts):
        per = manifest.counts[cls]
        print(
            f"  {cls}: original {per['original']}, augmented {per['augmented']}, "
            f"duplicated {per['duplicated']}, total {per['total']}"
        )
    print(f"augmented training set -> {workdir / AUGMENTED_MANIFEST}")
    return manifest


def cmd_train(config: PipelineConfig) -> Path:
    """Train the fusion model on the augmented training set."""
    workdir = config.workdir
    split_manifest = split_mod.read_manifest(workdir / SPLIT_MANIFEST)
    augmented = aug_mod.read_augmented_manifest(workdir / AUGMENTED_MANIFEST)
    metadata = load_metadata(config.metadata_csv)

    materialized_dir = workdir / "augmented" if augmented.materialized else None
    train_source = RenderedBatchSource(
        augmented.examples,
        config.dataset_root,
        metadata,
        config.taxonomy,
        config.normalization,
        augmented.plan,
        batch_size=config.schedule.batch_size,
        shuffle=True,
        materialized_dir=materialized_dir,
    )
    val_source = RenderedBatchSource(
        _subset_examples(split_manifest, "validation"),
        config.dataset_root,
        metadata,
        config.taxonomy,
        config.normalization,
        augmented.plan,
        batch_size=config.schedule.batch_size,
        shuffle=False,
    )

    model = model_mod.build_model(
        config.encoder, config.taxonomy, seed=config.training_seed
    )
    counts = {cls: per["total"] for cls, per in augmented.counts.items()}
    class_weights = train_mod.compute_class_weights(counts)

    checkpoint_path = workdir / CHECKPOINT
    log_path = workdir / TRAINING_LOG
    if log_path.exists():
        log_path.unlink()  # one log per training run

    def save_best(m, metric):
        model_mod.save_checkpoint(
            model_mod.Checkpoint(
                state_dict={k: v.detach().clone() for k, v in m.state_dict().items()},
                encoder_spec=config.encoder,
                taxonomy=config.taxonomy,
                normalization=config.normalization,
                age_min=split_manifest.age_min if split_manifest.age_min is not None else 0.0,
                age_max=split_manifest.age_max if split_manifest.age_max is not None else 1.0,
                val_metric=metric,
            ),
            checkpoint_path,
        )

    result = train_mod.train(
        model,
        config.schedule,
        train_source,
        val_source,
        class_weights,
        seed=config.training_seed,
        log_path=log_path,
        checkpoint_fn=save_best,
    )
    print(
        f"training finished: best validation accuracy {result.best_val_metric:.4f} "
        f"over {len(result.history)} epochs -> {checkpoint_path}"
    )
    return checkpoint_path


def cmd_evaluate(config: PipelineConfig) -> eval_mod.EvaluationReport:
    """Run inference over the test subset and write both report forms."""
    workdir = config.workdir
    split_manifest = split_mod.read_manifest(workdir / SPLIT_MANIFEST)
    ckpt = model_mod.load_checkpoint(workdir / CHECKPOINT)

    if tuple(ckpt.taxonomy.classes) != tuple(config.taxonomy.classes):
        raise DataError(
            f"checkpoint was trained on taxonomy {list(ckpt.taxonomy.classes)} "
            f"but the config selects {list(config.taxonomy.classes)}"
        )

    test_examples = _subset_examples(split_manifest, "test")
    if not test_examples:
        raise EvaluationError("test subset is empty")

    metadata = load_metadata(config.metadata_csv)
    model = model_mod.model_from_checkpoint(ckpt)
    source = RenderedBatchSource(
        test_examples,
        config.dataset_root,
        metadata,
        config.taxonomy,
        ckpt.normalization,
        aug_mod.AugmentationPlan(),  # unused: test examples are originals
        batch_size=config.schedule.batch_size,
        shuffle=False,
    )

    true_labels: list[str] = []
    pred_labels: list[str] = []
    with torch.no_grad():
        for images, meta, onehot in source.batches(epoch_seed=0):
            probs = model_mod.predict(model, images, meta)
            for row_true, row_pred in zip(onehot.argmax(dim=-1), probs.argmax(dim=-1)):
                true_labels.append(config.taxonomy.classes[int(row_true)])
                pred_labels.append(config.taxonomy.classes[int(row_pred)])

    cm = eval_mod.confusion_matrix(true_labels, pred_labels, config.taxonomy)
    report = eval_mod.compute_report(cm)
    (workdir / "reports").mkdir(parents=True, exist_ok=True)
    eval_mod.write_reports(report, workdir / REPORT_TEXT, workdir / REPORT_JSON)
    print(eval_mod.render_text(report), end="")
    print(f"reports -> {workdir / REPORT_TEXT}, {workdir / REPORT_JSON}")
    return report


def cmd_run_all(config: PipelineConfig) -> RunManifest:
    """prepare -> augment -> train -> evaluate, with a run manifest."""
    timing: dict[str, float] = {}

    t0 = time.perf_counter()
    split_manifest = cmd_prepare(config)
    timing["prepare"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    augmented = cmd_augment(config)
    timing["augment"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    checkpoint_path = cmd_train(config)
    timing["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cmd_evaluate(config)
    timing["evaluate"] = time.perf_counter() - t0

    manifest = RunManifest(
        config=config.to_dict(),
        split_counts=split_manifest.per_class_counts,
        augmented_counts=augmented.counts,
        checkpoint_path=str(checkpoint_path),
        report_paths={
            "text": str(config.workdir / REPORT_TEXT),
            "json": str(config.workdir / REPORT_JSON),
        },
        timing_seconds=timing,
    )
    manifest.write(config.workdir / RUN_MANIFEST)
    print(f"run manifest -> {config.workdir / RUN_MANIFEST}")
    return manifest


def cmd_make_synthetic(args: argparse.Namespace) -> int:
    root = Path(args.root)
    make_synthetic_dataset(root, images_per_class=args.images_per_class, seed=args.seed)
    if args.config_out:
        write_desk_config(
            Path(args.config_out),
            dataset_root=root.resolve(),
            workdir=Path(args.workdir).resolve() if args.workdir else root.resolve() / "run",
            seed=args.seed,
        )
        print(f"config -> {args.config_out}")
    print(f"synthetic dataset -> {root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oralfusion",
        description="Multimodal oral-lesion classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_stage(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config file (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override every stage seed")
        p.add_argument("--workdir", default=None, help="override the output directory")
        p.add_argument(
            "--desk-scale",
            action="store_true",
            help="tiny random encoder and short schedule for smoke runs",
        )
        return p

    add_stage("prepare", "ingest the corpus and write the stratified split manifest")
    add_stage("augment", "expand and oversample the training subset")
    add_stage("train", "run the two-stage training schedule")
    add_stage("evaluate", "score the test subset and write reports")
    add_stage("run-all", "run every stage in order")

    p = sub.add_parser("make-synthetic", help="generate a synthetic desk-scale dataset")
    p.add_argument("--root", required=True, help="where to write the dataset")
    p.add_argument("--images-per-class", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config-out", default=None, help="also write a ready desk config here")
    p.add_argument("--workdir", default=None, help="workdir recorded in the written config")
    return parser


STAGE_COMMANDS = {
    "prepare": cmd_prepare,
    "augment": cmd_augment,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run-all": cmd_run_all,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-synthetic":
            return cmd_make_synthetic(args)
        config = load_config(args.config).with_overrides(
            seed=args.seed, workdir=args.workdir, desk_scale=args.desk_scale
        )
        STAGE_COMMANDS[args.command](config)
        return 0
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
