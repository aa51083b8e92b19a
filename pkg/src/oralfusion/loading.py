"""Batch assembly: manifests + pixels + metadata -> training tensors.

Sources yield (images, metadata, one-hot labels) with images standardized
float32 in channel-first layout. Shuffling is seeded per epoch, so two runs
with the same seed see identical batches, whether pixels are rendered on
the fly or read from a materialized directory.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .augment import AugmentationPlan, render_example
from .dataset import ClassTaxonomy, LabeledExample, MetadataTable
from .errors import ContractError
from .transforms import NormalizationParams, scale_to_unit, standardize


def to_model_tensor(images_uint8: np.ndarray, params: NormalizationParams) -> torch.Tensor:
    """Stack of HxWx3 uint8 frames -> standardized float32 Bx3xHxW tensor."""
    unit = scale_to_unit(images_uint8)
    std = standardize(unit, params)
    return torch.from_numpy(np.ascontiguousarray(std.transpose(0, 3, 1, 2)))


def one_hot(labels: list[str], taxonomy: ClassTaxonomy) -> torch.Tensor:
    out = torch.zeros((len(labels), taxonomy.size), dtype=torch.float32)
    for i, label in enumerate(labels):
        out[i, taxonomy.index_of(label)] = 1.0
    return out


class ArrayBatchSource:
    """In-memory source over pre-built tensors; used by tests."""

    def __init__(
        self,
        images: torch.Tensor,
        metadata: torch.Tensor,
        onehot: torch.Tensor,
        batch_size: int = 32,
        shuffle: bool = True,
    ):
        if not (len(images) == len(metadata) == len(onehot)):
            raise ContractError("images, metadata and labels must have equal length")
        self.images = images
        self.metadata = metadata
        self.onehot = onehot
        self.batch_size = batch_size
        self.shuffle = shuffle

    def __len__(self) -> int:
        return len(self.images)

    def batches(self, epoch_seed: int) -> Iterator[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
        order = np.arange(len(self.images))
        if self.shuffle:
            np.random.default_rng(epoch_seed).shuffle(order)
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            yield self.images[idx], self.metadata[idx], self.onehot[idx]


class RenderedBatchSource:
    """Renders example pixels per batch from the dataset root.

    Examples keep their manifest order as the canonical order; each epoch's
    shuffle permutes indices with the epoch seed. Rendering one example is
    a pure function, so the materialized and on-the-fly modes produce
    identical tensors.
    """

    def __init__(
        self,
        examples: list[LabeledExample],
        dataset_root: str | Path,
        metadata: MetadataTable,
        taxonomy: ClassTaxonomy,
        normalization: NormalizationParams,
        plan: AugmentationPlan,
        batch_size: int = 32,
        shuffle: bool = True,
        materialized_dir: str | Path | None = None,
    ):
        self.examples = list(examples)
        self.dataset_root = Path(dataset_root)
        self.metadata = metadata
        self.taxonomy = taxonomy
        self.normalization = normalization
        self.plan = plan
        self.batch_size = batch_size
        self.shuffle = shuffle
        self.materialized_dir = Path(materialized_dir) if materialized_dir else None
        self._by_id = {ex.example_id: ex for ex in self.examples}

    def __len__(self) -> int:
        return len(self.examples)

    def batches(self, epoch_seed: int) -> Iterator[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
        order = np.arange(len(self.examples))
        if self.shuffle:
            np.random.default_rng(epoch_seed).shuffle(order)
        for start in range(0, len(order), self.batch_size):
            chunk = [self.examples[i] for i in order[start:start + self.batch_size]]
            frames = np.stack(
                [
                    render_example(
                        ex, self.dataset_root, self.plan, self._by_id, self.materialized_dir
                    )
                    for ex in chunk
                ]
            )
            images = to_model_tensor(frames, self.normalization)
            metadata = torch.from_numpy(
                np.stack([self.metadata.vector(ex.patient_id) for ex in chunk])
            )
            labels = one_hot([ex.label for ex in chunk], self.taxonomy)
            yield images, metadata, labels
