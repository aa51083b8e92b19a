"""Training-set expansion and minority-class oversampling.

Expansion keeps every original and adds ``copies_per_image`` augmented
variants per original. Each variant's pixels are a pure function of
(plan seed, parent example id, copy index), so serial and parallel
execution produce the same multiset of images. Oversampling appends exact
duplicates (references to the parent's pixels) until every class below the
threshold reaches it.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    IMAGE_SIZE,
    ORIGIN_AUGMENTED,
    ORIGIN_DUPLICATED,
    ORIGIN_ORIGINAL,
    ClassTaxonomy,
    LabeledExample,
    load_image,
)
from .errors import ContractError, OversamplingError, PlanError
from .splitting import SplitManifest, check_seed, stable_hash64
from .transforms import TransformSpec, apply_recipe, default_recipe

DEFAULT_COPIES_PER_IMAGE = 5
DEFAULT_OVERSAMPLE_THRESHOLD = 4200


@dataclass(frozen=True)
class AugmentationPlan:
    """Ordered transform specs plus the expansion factor and seed policy."""

    transforms: tuple[TransformSpec, ...] = field(
        default_factory=lambda: tuple(default_recipe())
    )
    copies_per_image: int = DEFAULT_COPIES_PER_IMAGE
    seed: int = 0

    def __post_init__(self):
        if self.copies_per_image < 1:
            raise PlanError(f"copies_per_image must be >= 1, got {self.copies_per_image}")
        check_seed(self.seed)
        object.__setattr__(self, "transforms", tuple(self.transforms))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "copies_per_image": self.copies_per_image,
            "transforms": [
                {"kind": t.kind, "probability": t.probability, "magnitude": t.magnitude}
                for t in self.transforms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationPlan":
        transforms = tuple(
            TransformSpec(
                kind=t["kind"],
                probability=t.get("probability", 0.5),
                magnitude=dict(t.get("magnitude", {})),
            )
            for t in data.get("transforms", [])
        ) or tuple(default_recipe())
        return cls(
            transforms=transforms,
            copies_per_image=data.get("copies_per_image", DEFAULT_COPIES_PER_IMAGE),
            seed=data.get("seed", 0),
        )


def derived_rng(plan_seed: int, parent_id: str, copy_index: int) -> np.random.Generator:
    """Splittable per-copy random source: (plan seed, parent id, copy index)."""
    return np.random.default_rng(
        np.random.SeedSequence([plan_seed, stable_hash64(parent_id), copy_index])
    )


def augmented_example_id(parent_id: str, copy_index: int) -> str:
    return f"{parent_id}#aug{copy_index}"


def expand_training_set(
    train_examples: list[LabeledExample],
    plan: AugmentationPlan,
    manifest: SplitManifest | None = None,
) -> list[LabeledExample]:
    """Originals plus ``copies_per_image`` augmented variants per original.

    Output is sorted by example id, so it is independent of input order and
    of any parallelism in downstream rendering. When a split manifest is
    supplied, every input must be assigned to the train subset.
    """
    for ex in train_examples:
        if ex.origin != ORIGIN_ORIGINAL:
            raise ContractError(
                f"expand_training_set expects origin=original inputs, got "
                f"{ex.origin} for '{ex.example_id}'"
            )
        if manifest is not None and manifest.assignments.get(ex.example_id) != "train":
            raise ContractError(
                f"'{ex.example_id}' is not assigned to the train subset"
            )

    out = list(train_examples)
    for ex in train_examples:
        for copy_index in range(1, plan.copies_per_image + 1):
            out.append(
                LabeledExample(
                    example_id=augmented_example_id(ex.example_id, copy_index),
                    image_path=ex.image_path,
                    patient_id=ex.patient_id,
                    label=ex.label,
                    origin=ORIGIN_AUGMENTED,
                    parent_id=ex.example_id,
                    copy_index=copy_index,
                )
            )
    out.sort(key=lambda e: e.example_id)
    return out


def oversample_minority(
    train_examples: list[LabeledExample],
    threshold: int = DEFAULT_OVERSAMPLE_THRESHOLD,
    seed: int = 0,
    taxonomy: ClassTaxonomy | None = None,
) -> list[LabeledExample]:
    """Duplicate random members of each class until it reaches ``threshold``.

    Classes at or above the threshold are untouched (strict "fewer than").
    Duplicates are drawn uniformly with replacement from the pre-duplication
    class members and share their parent's pixels; nothing is ever removed.
    """
    if threshold < 1:
        raise PlanError(f"oversampling threshold must be >= 1, got {threshold}")
    check_seed(seed)

    by_class: dict[str, list[LabeledExample]] = {}
    for ex in train_examples:
        by_class.setdefault(ex.label, []).append(ex)

    classes = list(taxonomy.classes) if taxonomy is not None else sorted(by_class)
    for cls in classes:
        if not by_class.get(cls):
            raise OversamplingError(f"class '{cls}' has no examples to duplicate")

    out = list(train_examples)
    for cls in classes:
        members = sorted(by_class[cls], key=lambda e: e.example_id)
        deficit = threshold - len(members)
        if deficit <= 0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, stable_hash64(cls)]))
        picks = rng.integers(0, len(members), size=deficit)
        dup_counter: dict[str, int] = {}
        for pick in picks:
            parent = members[int(pick)]
            n = dup_counter.get(parent.example_id, 0)
            dup_counter[parent.example_id] = n + 1
            out.append(
                LabeledExample(
                    example_id=f"{parent.example_id}#dup{n}",
                    image_path=parent.image_path,
                    patient_id=parent.patient_id,
                    label=parent.label,
                    origin=ORIGIN_DUPLICATED,
                    parent_id=parent.example_id,
                    copy_index=None,
                )
            )
    out.sort(key=lambda e: e.example_id)
    return out


def render_example(
    example: LabeledExample,
    dataset_root: str | Path,
    plan: AugmentationPlan,
    examples_by_id: dict[str, LabeledExample] | None = None,
    materialized_dir: str | Path | None = None,
) -> np.ndarray:
    """Produce the uint8 224x224x3 pixels of any example, deterministically.

    Originals load straight from the dataset root. Augmented examples apply
    the plan recipe with their derived seed. Duplicates resolve to their
    parent's pixels. When a materialized directory is given, augmented
    pixels are read from the PNG written by :func:`materialize_augmented`
    instead of being recomputed; both paths yield identical arrays.
    """
    if example.origin == ORIGIN_ORIGINAL:
        return load_image(dataset_root, example.image_path, IMAGE_SIZE)

    if example.origin == ORIGIN_DUPLICATED:
        if example.parent_id is None:
            raise ContractError(f"duplicate '{example.example_id}' has no parent_id")
        if examples_by_id is None or example.parent_id not in examples_by_id:
            raise ContractError(
                f"cannot resolve parent '{example.parent_id}' of duplicate "
                f"'{example.example_id}'"
            )
        return render_example(
            examples_by_id[example.parent_id],
            dataset_root,
            plan,
            examples_by_id,
            materialized_dir,
        )

    # augmented
    if example.parent_id is None or example.copy_index is None:
        raise ContractError(f"augmented '{example.example_id}' lacks parent_id/copy_index")
    if materialized_dir is not None:
        png = materialized_path(materialized_dir, example)
        if png.exists():
            with Image.open(png) as img:
                return np.asarray(img.convert("RGB"))
    base = load_image(dataset_root, example.image_path, IMAGE_SIZE)
    rng = derived_rng(plan.seed, example.parent_id, example.copy_index)
    return apply_recipe(list(plan.transforms), base, rng)


def materialized_path(materialized_dir: str | Path, example: LabeledExample) -> Path:
    # example ids contain '/'; flatten to keep one file per example
    return Path(materialized_dir) / example.label / (example.example_id.replace("/", "__") + ".png")


def materialize_augmented(
    examples: list[LabeledExample],
    dataset_root: str | Path,
    plan: AugmentationPlan,
    materialized_dir: str | Path,
    workers: int = 1,
) -> int:
    """Write every augmented example's pixels to PNG (lossless round-trip).

    Duplicates are not written; they resolve to their parent's file. Returns
    the number of files written. Rendering is a pure per-example function,
    so any worker count gives identical bytes.
    """
    targets = [ex for ex in examples if ex.origin == ORIGIN_AUGMENTED]
    out_dir = Path(materialized_dir)

    def _write(ex: LabeledExample) -> None:
        pixels = render_example(ex, dataset_root, plan)
        path = materialized_path(out_dir, ex)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, format="PNG")

    if workers <= 1:
        for ex in targets:
            _write(ex)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_write, targets))
    return len(targets)


def render_many(
    examples: list[LabeledExample],
    dataset_root: str | Path,
    plan: AugmentationPlan,
    examples_by_id: dict[str, LabeledExample] | None = None,
    materialized_dir: str | Path | None = None,
    workers: int = 1,
) -> list[np.ndarray]:
    """Render a batch of examples, optionally across threads.

    The output order follows the input order regardless of worker count.
    """
    def _one(ex: LabeledExample) -> np.ndarray:
        return render_example(ex, dataset_root, plan, examples_by_id, materialized_dir)

    if workers <= 1:
        return [_one(ex) for ex in examples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, examples))


def class_counts(examples: list[LabeledExample]) -> dict[str, dict[str, int]]:
    """Per-class counts broken down by origin, plus totals."""
    counts: dict[str, dict[str, int]] = {}
    for ex in examples:
        per = counts.setdefault(
            ex.label,
            {ORIGIN_ORIGINAL: 0, ORIGIN_AUGMENTED: 0, ORIGIN_DUPLICATED: 0, "total": 0},
        )
        per[ex.origin] += 1
        per["total"] += 1
    return counts


@dataclass
class AugmentedManifest:
    """The final training set after expansion and oversampling."""

    plan: AugmentationPlan
    threshold: int
    split_seed: int
    materialized: bool
    examples: list[LabeledExample]
    subset_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, dict[str, int]]:
        return class_counts(self.examples)

    def by_id(self) -> dict[str, LabeledExample]:
        return {ex.example_id: ex for ex in self.examples}


def serialize_augmented_manifest(manifest: AugmentedManifest) -> str:
    lines = ["# augmented-manifest v1"]
    lines.append(f"split_seed\t{manifest.split_seed}")
    lines.append("plan\t" + json.dumps(manifest.plan.to_dict(), sort_keys=True))
    lines.append(f"threshold\t{manifest.threshold}")
    lines.append(f"materialized\t{str(manifest.materialized).lower()}")
    for cls in sorted(manifest.counts):
        per = manifest.counts[cls]
        for key in (ORIGIN_ORIGINAL, ORIGIN_AUGMENTED, ORIGIN_DUPLICATED, "total"):
            lines.append(f"counts\t{cls}\t{key}\t{per[key]}")
    for subset in sorted(manifest.subset_counts):
        for cls in sorted(manifest.subset_counts[subset]):
            lines.append(
                f"subset_counts\t{subset}\t{cls}\t{manifest.subset_counts[subset][cls]}"
            )
    lines.append(f"examples\t{len(manifest.examples)}")
    for ex in sorted(manifest.examples, key=lambda e: e.example_id):
        parent = ex.parent_id if ex.parent_id is not None else "-"
        copy_index = str(ex.copy_index) if ex.copy_index is not None else "-"
        lines.append(
            f"{ex.example_id}\t{ex.image_path}\t{ex.patient_id}\t{ex.label}\t"
            f"{ex.origin}\t{parent}\t{copy_index}"
        )
    return "\n".join(lines) + "\n"


def parse_augmented_manifest(text: str) -> AugmentedManifest:
    lines = text.splitlines()
    if not lines or lines[0] != "# augmented-manifest v1":
        raise ContractError("not an augmented manifest (bad header line)")

    plan = None
    threshold = DEFAULT_OVERSAMPLE_THRESHOLD
    split_seed = 0
    materialized = False
    subset_counts: dict[str, dict[str, int]] = {}
    examples: list[LabeledExample] = []
    n_expected = None

    for line in lines[1:]:
        if not line:
            continue
        parts = line.split("\t")
        key = parts[0]
        if key == "split_seed":
            split_seed = int(parts[1])
        elif key == "plan":
            plan = AugmentationPlan.from_dict(json.loads(parts[1]))
        elif key == "threshold":
            threshold = int(parts[1])
        elif key == "materialized":
            materialized = parts[1] == "true"
        elif key == "counts":
            continue  # recomputable from the example lines
        elif key == "subset_counts":
            subset_counts.setdefault(parts[1], {})[parts[2]] = int(parts[3])
        elif key == "examples":
            n_expected = int(parts[1])
        else:
            eid, image_path, patient_id, label, origin, parent, copy_index = parts
            examples.append(
                LabeledExample(
                    example_id=eid,
                    image_path=image_path,
                    patient_id=patient_id,
                    label=label,
                    origin=origin,
                    parent_id=None if parent == "-" else parent,
                    copy_index=None if copy_index == "-" else int(copy_index),
                )
            )

    if plan is None:
        raise ContractError("augmented manifest missing plan line")
    if n_expected is not None and n_expected != len(examples):
        raise ContractError(
            f"augmented manifest example count mismatch: header says {n_expected}, "
            f"found {len(examples)}"
        )
    return AugmentedManifest(
        plan=plan,
        threshold=threshold,
        split_seed=split_seed,
        materialized=materialized,
        examples=examples,
        subset_counts=subset_counts,
    )


def write_augmented_manifest(manifest: AugmentedManifest, path: str | Path):
    Path(path).write_text(serialize_augmented_manifest(manifest))


def read_augmented_manifest(path: str | Path) -> AugmentedManifest:
    return parse_augmented_manifest(Path(path).read_text())
