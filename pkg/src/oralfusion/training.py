"""Two-stage training with weighted cross-entropy and callbacks.

Stage 1 freezes the image encoder entirely (it also stays in eval mode so
batch-norm statistics cannot drift) and trains the metadata branch and head
at the stage-1 learning rate. Stage 2 unfreezes the top fraction of encoder
parameters and continues at the reduced learning rate. Early stopping,
best-checkpoint retention and plateau LR reduction all monitor validation
accuracy.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np
import torch
from torch import nn

from .dataset import ClassTaxonomy
from .errors import ConfigError, ContractError, NumericError, TrainingError
from .model import FusionModel

DEFAULT_BATCH_SIZE = 32


@dataclass(frozen=True)
class StageConfig:
    learning_rate: float
    epochs: int

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class TrainingSchedule:
    """Freeze/fine-tune schedule: 1e-3 x 15 epochs frozen, then 1e-5 x 10."""

    stage1: StageConfig = StageConfig(learning_rate=1e-3, epochs=15)
    stage2: StageConfig = StageConfig(learning_rate=1e-5, epochs=10)
    batch_size: int = DEFAULT_BATCH_SIZE
    unfreeze_fraction: float = 0.30
    early_stopping_patience: int = 5
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_min_lr: float = 1e-7

    def __post_init__(self):
        if self.stage1.learning_rate <= self.stage2.learning_rate:
            raise ConfigError(
                "stage 1 learning rate must exceed stage 2 "
                f"({self.stage1.learning_rate} vs {self.stage2.learning_rate})"
            )
        if not 0.0 < self.unfreeze_fraction <= 1.0:
            raise ConfigError(
                f"unfreeze_fraction must be in (0, 1], got {self.unfreeze_fraction}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def total_epochs(self) -> int:
        return self.stage1.epochs + self.stage2.epochs


@dataclass(frozen=True)
class ClassWeights:
    weights: dict[str, float]

    def __post_init__(self):
        if any(w <= 0 for w in self.weights.values()):
            raise ConfigError(f"class weights must be positive: {self.weights}")

    def as_tensor(self, taxonomy: ClassTaxonomy) -> torch.Tensor:
        try:
            return torch.tensor(
                [self.weights[c] for c in taxonomy.classes], dtype=torch.float32
            )
        except KeyError as exc:
            raise ContractError(f"no weight for class {exc.args[0]!r}") from None

    @classmethod
    def uniform(cls, taxonomy: ClassTaxonomy) -> "ClassWeights":
        return cls({c: 1.0 for c in taxonomy.classes})


def compute_class_weights(train_counts: dict[str, int]) -> ClassWeights:
    """Inverse-frequency weights: total / (num_classes * class_count).

    A perfectly balanced distribution yields weight 1.0 for every class.
    """
    if not train_counts:
        raise ContractError("train_counts is empty")
    for cls, n in train_counts.items():
        if n < 1:
            raise ContractError(f"class '{cls}' has zero training examples")
    total = sum(train_counts.values())
    k = len(train_counts)
    return ClassWeights({cls: total / (k * n) for cls, n in train_counts.items()})


def weighted_cross_entropy(
    logits: torch.Tensor, onehot: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Mean over the batch of weight(y_b) * -log softmax(logits_b)[y_b].

    The batch mean is a plain 1/B (not normalized by the weight sum), so
    scaling all weights by a constant scales the loss by that constant.
    """
    if logits.shape != onehot.shape:
        raise ContractError(
            f"logits {tuple(logits.shape)} and one-hot labels {tuple(onehot.shape)} disagree"
        )
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits passed to the loss")
    row_sums = onehot.sum(dim=-1)
    if not torch.allclose(row_sums, torch.ones_like(row_sums)):
        raise ContractError("labels must be one-hot rows")
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = (onehot * log_probs).sum(dim=-1)
    w = (onehot * weights.to(logits.dtype)).sum(dim=-1)
    return -(w * picked).mean()


class BatchSource(Protocol):
    """A restartable stream of (images, metadata, one-hot labels) batches."""

    def __len__(self) -> int: ...

    def batches(self, epoch_seed: int) -> Iterable[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]: ...


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    learning_rate: float
    train_loss: float
    train_accuracy: float
    train_precision: float
    train_recall: float
    val_loss: float
    val_accuracy: float
    val_precision: float
    val_recall: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class TrainResult:
    model: FusionModel
    history: list[EpochRecord]
    best_val_metric: float
    best_state_dict: dict = field(repr=False, default_factory=dict)
    encoder_checksums: dict[str, str] = field(default_factory=dict)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.strikes = 0

    def update(self, metric: float) -> bool:
        """Record one epoch's metric; returns True when training should stop."""
        if metric > self.best:
            self.best = metric
            self.strikes = 0
            return False
        self.strikes += 1
        return self.strikes >= self.patience


def encoder_checksum(model: FusionModel) -> str:
    """Digest of every encoder parameter and buffer, in state-dict order."""
    digest = hashlib.sha256()
    for key, tensor in sorted(model.encoder.state_dict().items()):
        digest.update(key.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def _set_encoder_frozen(model: FusionModel, frozen: bool):
    for p in model.encoder.parameters():
        p.requires_grad = not frozen


def _unfreeze_top_fraction(model: FusionModel, fraction: float) -> int:
    """Unfreeze the trailing ``fraction`` of encoder parameter tensors.

    Registration order follows depth for the sequential encoders used here,
    so the tail of the list is the top of the network.
    """
    params = list(model.encoder.parameters())
    n_unfrozen = max(1, int(round(len(params) * fraction)))
    for p in params[:-n_unfrozen]:
        p.requires_grad = False
    for p in params[-n_unfrozen:]:
        p.requires_grad = True
    return n_unfrozen


def _epoch_metrics(
    true_idx: list[int], pred_idx: list[int], num_classes: int
) -> tuple[float, float, float]:
    """Accuracy plus macro precision/recall from index lists."""
    t = np.asarray(true_idx)
    p = np.asarray(pred_idx)
    accuracy = float((t == p).mean()) if len(t) else 0.0
    precisions, recalls = [], []
    for c in range(num_classes):
        predicted_c = p == c
        actual_c = t == c
        tp = float((predicted_c & actual_c).sum())
        precisions.append(tp / predicted_c.sum() if predicted_c.any() else 0.0)
        recalls.append(tp / actual_c.sum() if actual_c.any() else 0.0)
    return accuracy, float(np.mean(precisions)), float(np.mean(recalls))


def _run_eval(
    model: FusionModel, source: BatchSource, weights: torch.Tensor
) -> tuple[float, float, float, float]:
    model.eval()
    losses, sizes = [], []
    true_idx: list[int] = []
    pred_idx: list[int] = []
    with torch.no_grad():
        for images, metadata, onehot in source.batches(epoch_seed=0):
            logits = model(images, metadata)
            losses.append(float(weighted_cross_entropy(logits, onehot, weights)))
            sizes.append(len(images))
            true_idx.extend(onehot.argmax(dim=-1).tolist())
            pred_idx.extend(logits.argmax(dim=-1).tolist())
    if not sizes:
        raise TrainingError("validation stream is empty")
    loss = float(np.average(losses, weights=sizes))
    accuracy, precision, recall = _epoch_metrics(true_idx, pred_idx, model.num_classes)
    return loss, accuracy, precision, recall


def train(
    model: FusionModel,
    schedule: TrainingSchedule,
    train_source: BatchSource,
    val_source: BatchSource,
    class_weights: ClassWeights,
    seed: int = 0,
    log_path: str | Path | None = None,
    checkpoint_fn: Callable[[FusionModel, float], None] | None = None,
    val_metric_fn: Callable[[FusionModel, BatchSource], float] | None = None,
) -> TrainResult:
    """Run both stages and return the model restored to its best epoch.

    ``checkpoint_fn`` is called whenever validation improves (used by the
    CLI to keep the best checkpoint on disk). ``val_metric_fn`` overrides
    the monitored metric (validation accuracy by default); tests use it to
    drive the early-stopping path deterministically.

    Raises:
        TrainingError: empty training stream.
        NumericError: non-finite loss or validation metric.
    """
    if len(train_source) == 0:
        raise TrainingError("training stream is empty")

    torch.manual_seed(seed)
    weights = class_weights.as_tensor(model.taxonomy)
    history: list[EpochRecord] = []
    best_metric = -math.inf
    best_state: dict | None = None
    checksums = {"initial": encoder_checksum(model)}
    log_file = Path(log_path) if log_path is not None else None
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)

    for stage_num, stage in ((1, schedule.stage1), (2, schedule.stage2)):
        if stage_num == 1:
            _set_encoder_frozen(model, True)
        else:
            _unfreeze_top_fraction(model, schedule.unfreeze_fraction)
        trainable = [p for p in model.parameters() if p.requires_grad]
        optimizer = torch.optim.Adam(trainable, lr=stage.learning_rate)
        plateau = torch.optim.lr_scheduler.ReduceLROnPlateau(
            optimizer,
            mode="max",
            factor=schedule.plateau_factor,
            patience=schedule.plateau_patience,
            min_lr=schedule.plateau_min_lr,
        )
        stopper = EarlyStopping(schedule.early_stopping_patience)

        for epoch in range(1, stage.epochs + 1):
            lr_now = optimizer.param_groups[0]["lr"]
            model.train()
            if stage_num == 1:
                # frozen backbone: keep batch-norm statistics fixed too
                model.encoder.eval()

            epoch_losses, epoch_sizes = [], []
            true_idx: list[int] = []
            pred_idx: list[int] = []
            epoch_seed = int(
                np.random.SeedSequence([seed, stage_num, epoch]).generate_state(1)[0]
            )
            n_batches = 0
            for images, metadata, onehot in train_source.batches(epoch_seed=epoch_seed):
                n_batches += 1
                optimizer.zero_grad()
                logits = model(images, metadata)
                loss = weighted_cross_entropy(logits, onehot, weights)
                if not torch.isfinite(loss):
                    raise NumericError(
                        f"non-finite training loss at stage {stage_num} epoch {epoch}"
                    )
                loss.backward()
                optimizer.step()
                epoch_losses.append(float(loss.detach()))
                epoch_sizes.append(len(images))
                true_idx.extend(onehot.argmax(dim=-1).tolist())
                pred_idx.extend(logits.argmax(dim=-1).tolist())
            if n_batches == 0:
                raise TrainingError("training stream yielded no batches")

            train_loss = float(np.average(epoch_losses, weights=epoch_sizes))
            train_acc, train_prec, train_rec = _epoch_metrics(
                true_idx, pred_idx, model.num_classes
            )
            val_loss, val_acc, val_prec, val_rec = _run_eval(model, val_source, weights)
            metric = val_acc if val_metric_fn is None else float(val_metric_fn(model, val_source))
            if not math.isfinite(metric):
                raise NumericError(
                    f"validation metric is not finite at stage {stage_num} epoch {epoch}"
                )

            record = EpochRecord(
                stage=stage_num,
                epoch=epoch,
                learning_rate=lr_now,
                train_loss=train_loss,
                train_accuracy=train_acc,
                train_precision=train_prec,
                train_recall=train_rec,
                val_loss=val_loss,
                val_accuracy=metric if val_metric_fn is not None else val_acc,
                val_precision=val_prec,
                val_recall=val_rec,
            )
            history.append(record)
            if log_file is not None:
                with open(log_file, "a") as fh:
                    fh.write(record.to_json() + "\n")

            if metric > best_metric:
                best_metric = metric
                best_state = copy.deepcopy(model.state_dict())
                if checkpoint_fn is not None:
                    checkpoint_fn(model, metric)

            plateau.step(metric)
            if stopper.update(metric):
                break

        if stage_num == 1:
            checksums["after_stage1"] = encoder_checksum(model)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        history=history,
        best_val_metric=best_metric,
        best_state_dict=best_state or {},
        encoder_checksums=checksums,
    )
