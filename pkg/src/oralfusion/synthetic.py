"""Synthetic desk-scale dataset for smoke runs and tests.

Generates a small class-foldered image tree plus a fabricated metadata
table in the expected layout. Images get a class-specific base color with
seeded texture so the classes are learnable in principle but nothing about
them is clinical. Deterministic for a fixed seed.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import FOUR_CLASS, METADATA_COLUMNS, ClassTaxonomy

CLASS_BASE_COLORS = {
    "OPMD": (180, 90, 90),
    "Benign": (90, 160, 110),
    "Healthy": (230, 180, 160),
    "OralCancer": (120, 60, 140),
}


def make_synthetic_dataset(
    root: str | Path,
    taxonomy: ClassTaxonomy = FOUR_CLASS,
    images_per_class: int = 10,
    seed: int = 0,
    image_size: tuple[int, int] = (256, 320),
) -> Path:
    """Write ``images_per_class`` PNGs per class plus metadata.csv.

    One patient per image; patient ids are P000, P001, ... across classes.
    Returns the dataset root.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    h, w = image_size

    rows = []
    patient_counter = 0
    for cls in taxonomy.classes:
        cls_dir = root / cls
        cls_dir.mkdir(parents=True, exist_ok=True)
        base = np.array(CLASS_BASE_COLORS.get(cls, (128, 128, 128)), dtype=np.float32)
        for _ in range(images_per_class):
            patient_id = f"P{patient_counter:03d}"
            patient_counter += 1
            noise = rng.normal(0.0, 28.0, size=(h, w, 3)).astype(np.float32)
            yy = np.linspace(-1.0, 1.0, h)[:, None, None]
            gradient = yy * rng.uniform(-40.0, 40.0)
            pixels = np.clip(base + noise + gradient, 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(cls_dir / f"{patient_id}_1.png")
            rows.append(
                {
                    "patient_id": patient_id,
                    "age": int(rng.integers(18, 85)),
                    "gender": "Male" if rng.uniform() < 0.5 else "Female",
                    "smoking": "Yes" if rng.uniform() < 0.5 else "No",
                    "betel_quid": "Yes" if rng.uniform() < 0.4 else "No",
                    "alcohol": "Yes" if rng.uniform() < 0.5 else "No",
                }
            )

    with open(root / "metadata.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(METADATA_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    return root


DESK_CONFIG_TEMPLATE = """\
# Desk-scale smoke configuration (synthetic data, tiny model, short schedule)
dataset_root: {dataset_root}
taxonomy: {taxonomy}
workdir: {workdir}

split:
  ratios: [0.7, 0.15, 0.15]
  seed: {seed}

augmentation:
  seed: {seed}
  copies_per_image: 5
  materialize: {materialize}

# post-augmentation class floor; small on purpose for the synthetic corpus
oversample_threshold: 60

encoder:
  family: desk_cnn
  pretrained: false
  feature_dim: 64

training:
  seed: {seed}
  batch_size: 32
  stage1: {{learning_rate: 0.001, epochs: 2}}
  stage2: {{learning_rate: 0.00001, epochs: 2}}
"""


def write_desk_config(
    path: str | Path,
    dataset_root: str | Path,
    workdir: str | Path,
    taxonomy: str = "four_class",
    seed: int = 0,
    materialize: bool = False,
) -> Path:
    """Write a ready-to-run config for the synthetic dataset."""
    path = Path(path)
    path.write_text(
        DESK_CONFIG_TEMPLATE.format(
            dataset_root=dataset_root,
            taxonomy=taxonomy,
            workdir=workdir,
            seed=seed,
            materialize=str(materialize).lower(),
        )
    )
    return path
