"""Pipeline configuration: one YAML file drives every stage.

Relative paths are resolved against the config file's directory. Command
line overrides are limited to seed, workdir and the desk-scale toggle, so
a config file plus a seed fully determines a run.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .augment import (
    DEFAULT_OVERSAMPLE_THRESHOLD,
    AugmentationPlan,
)
from .dataset import CANONICAL_TAXONOMIES, ClassTaxonomy, canonical_taxonomy
from .errors import ConfigError
from .model import EncoderSpec
from .splitting import DEFAULT_RATIOS, check_seed
from .training import StageConfig, TrainingSchedule
from .transforms import NormalizationParams, TransformSpec


@dataclass
class PipelineConfig:
    dataset_root: Path
    metadata_csv: Path
    taxonomy: ClassTaxonomy
    workdir: Path
    split_ratios: tuple[float, float, float] = DEFAULT_RATIOS
    split_seed: int = 0
    group_by_patient: bool = False
    plan: AugmentationPlan = field(default_factory=AugmentationPlan)
    materialize: bool = False
    oversample_threshold: int = DEFAULT_OVERSAMPLE_THRESHOLD
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    training_seed: int = 0
    normalization: NormalizationParams = field(default_factory=NormalizationParams)
    desk_scale: bool = False

    def validate(self) -> "PipelineConfig":
        if not self.dataset_root.is_dir():
            raise ConfigError(f"dataset_root does not exist: {self.dataset_root}")
        if not self.metadata_csv.is_file():
            raise ConfigError(f"metadata table does not exist: {self.metadata_csv}")
        if self.taxonomy.name not in CANONICAL_TAXONOMIES:
            raise ConfigError(
                f"taxonomy must be one of {sorted(CANONICAL_TAXONOMIES)}, "
                f"got '{self.taxonomy.name}'"
            )
        if self.oversample_threshold < 1:
            raise ConfigError(
                f"oversample_threshold must be >= 1, got {self.oversample_threshold}"
            )
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.split_ratios}")
        check_seed(self.split_seed)
        check_seed(self.plan.seed)
        check_seed(self.training_seed)
        return self

    def with_overrides(
        self,
        seed: int | None = None,
        workdir: str | Path | None = None,
        desk_scale: bool = False,
    ) -> "PipelineConfig":
        """Apply the three supported CLI overrides."""
        cfg = self
        if seed is not None:
            check_seed(seed)
            cfg = replace(
                cfg,
                split_seed=seed,
                plan=replace(cfg.plan, seed=seed),
                training_seed=seed,
            )
        if workdir is not None:
            cfg = replace(cfg, workdir=Path(workdir))
        if desk_scale:
            cfg = replace(
                cfg,
                desk_scale=True,
                encoder=EncoderSpec.desk_scale(),
                schedule=replace(
                    cfg.schedule,
                    stage1=StageConfig(
                        learning_rate=cfg.schedule.stage1.learning_rate,
                        epochs=min(cfg.schedule.stage1.epochs, 2),
                    ),
                    stage2=StageConfig(
                        learning_rate=cfg.schedule.stage2.learning_rate,
                        epochs=min(cfg.schedule.stage2.epochs, 2),
                    ),
                ),
            )
        return cfg

    def to_dict(self) -> dict:
        """Echoable form for the run manifest."""
        return {
            "dataset_root": str(self.dataset_root),
            "metadata_csv": str(self.metadata_csv),
            "taxonomy": self.taxonomy.name,
            "workdir": str(self.workdir),
            "split": {
                "ratios": list(self.split_ratios),
                "seed": self.split_seed,
                "group_by_patient": self.group_by_patient,
            },
            "augmentation": {**self.plan.to_dict(), "materialize": self.materialize},
            "oversample_threshold": self.oversample_threshold,
            "encoder": {
                "family": self.encoder.family,
                "pretrained": self.encoder.pretrained,
                "feature_dim": self.encoder.feature_dim,
            },
            "training": {
                "seed": self.training_seed,
                "batch_size": self.schedule.batch_size,
                "stage1": {
                    "learning_rate": self.schedule.stage1.learning_rate,
                    "epochs": self.schedule.stage1.epochs,
                },
                "stage2": {
                    "learning_rate": self.schedule.stage2.learning_rate,
                    "epochs": self.schedule.stage2.epochs,
                },
                "unfreeze_fraction": self.schedule.unfreeze_fraction,
                "early_stopping_patience": self.schedule.early_stopping_patience,
                "plateau": {
                    "factor": self.schedule.plateau_factor,
                    "patience": self.schedule.plateau_patience,
                    "min_lr": self.schedule.plateau_min_lr,
                },
            },
            "normalization": {
                "mean": list(self.normalization.mean),
                "std": list(self.normalization.std),
            },
            "desk_scale": self.desk_scale,
        }


def _require(data: dict, key: str, context: str):
    if key not in data:
        raise ConfigError(f"{context}: missing required key '{key}'")
    return data[key]


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")

    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else (base / candidate)

    dataset_root = resolve(str(_require(data, "dataset_root", str(path))))
    metadata_csv = resolve(str(data.get("metadata_csv", ""))) if data.get("metadata_csv") \
        else dataset_root / "metadata.csv"
    taxonomy = canonical_taxonomy(str(_require(data, "taxonomy", str(path))))
    workdir = resolve(str(_require(data, "workdir", str(path))))

    split = data.get("split", {}) or {}
    ratios = tuple(split.get("ratios", DEFAULT_RATIOS))
    if len(ratios) != 3:
        raise ConfigError(f"split.ratios must have 3 entries, got {ratios}")

    aug = data.get("augmentation", {}) or {}
    transforms_cfg = aug.get("transforms")
    plan_dict = {
        "seed": aug.get("seed", 0),
        "copies_per_image": aug.get("copies_per_image", 5),
    }
    if transforms_cfg is not None:
        plan_dict["transforms"] = transforms_cfg
    plan = AugmentationPlan.from_dict(plan_dict)

    enc = data.get("encoder", {}) or {}
    encoder = EncoderSpec(
        family=enc.get("family", EncoderSpec().family),
        pretrained=bool(enc.get("pretrained", False)),
        feature_dim=int(enc.get("feature_dim", EncoderSpec().feature_dim)),
    )

    tr = data.get("training", {}) or {}
    stage1 = tr.get("stage1", {}) or {}
    stage2 = tr.get("stage2", {}) or {}
    plateau = tr.get("plateau", {}) or {}
    defaults = TrainingSchedule()
    schedule = TrainingSchedule(
        stage1=StageConfig(
            learning_rate=float(stage1.get("learning_rate", defaults.stage1.learning_rate)),
            epochs=int(stage1.get("epochs", defaults.stage1.epochs)),
        ),
        stage2=StageConfig(
            learning_rate=float(stage2.get("learning_rate", defaults.stage2.learning_rate)),
            epochs=int(stage2.get("epochs", defaults.stage2.epochs)),
        ),
        batch_size=int(tr.get("batch_size", defaults.batch_size)),
        unfreeze_fraction=float(tr.get("unfreeze_fraction", defaults.unfreeze_fraction)),
        early_stopping_patience=int(
            tr.get("early_stopping_patience", defaults.early_stopping_patience)
        ),
        plateau_factor=float(plateau.get("factor", defaults.plateau_factor)),
        plateau_patience=int(plateau.get("patience", defaults.plateau_patience)),
        plateau_min_lr=float(plateau.get("min_lr", defaults.plateau_min_lr)),
    )

    norm = data.get("normalization", {}) or {}
    normalization = NormalizationParams(
        mean=tuple(norm.get("mean", NormalizationParams().mean)),
        std=tuple(norm.get("std", NormalizationParams().std)),
    )

    return PipelineConfig(
        dataset_root=dataset_root,
        metadata_csv=metadata_csv,
        taxonomy=taxonomy,
        workdir=workdir,
        split_ratios=ratios,  # type: ignore[arg-type]
        split_seed=int(split.get("seed", 0)),
        group_by_patient=bool(split.get("group_by_patient", False)),
        plan=plan,
        materialize=bool(aug.get("materialize", False)),
        oversample_threshold=int(data.get("oversample_threshold", DEFAULT_OVERSAMPLE_THRESHOLD)),
        encoder=encoder,
        schedule=schedule,
        training_seed=int(tr.get("seed", 0)),
        normalization=normalization,
    ).validate()


@dataclass
class RunManifest:
    """Aggregated record of one full pipeline run."""

    config: dict
    split_counts: dict
    augmented_counts: dict
    checkpoint_path: str | None = None
    report_paths: dict = field(default_factory=dict)
    timing_seconds: dict = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)

    def write(self, path: str | Path):
        payload = {
            "config": self.config,
            "split_counts": self.split_counts,
            "augmented_counts": self.augmented_counts,
            "checkpoint_path": self.checkpoint_path,
            "report_paths": self.report_paths,
            "timing_seconds": self.timing_seconds,
            "started_at": self.started_at,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
