"""Deterministic stratified splitting into train/validation/test.

Per class, examples are shuffled by a seeded generator and apportioned by
the largest-remainder rule (ties broken by subset order). The resulting
manifest serializes byte-for-byte identically for a fixed seed and input.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dataset import CANONICAL_TAXONOMIES, ClassTaxonomy, LabeledExample
from .errors import ConfigError, ContractError, SplitError

SUBSETS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)

RATIO_SUM_TOLERANCE = 1e-9


@dataclass
class SplitManifest:
    """Auditable record of which example landed in which subset."""

    seed: int
    taxonomy: ClassTaxonomy
    ratios: tuple[float, float, float]
    assignments: dict[str, str]
    labels: dict[str, str]
    per_class_counts: dict[str, dict[str, int]]
    age_min: float | None = None
    age_max: float | None = None

    def examples_in(self, subset: str) -> list[str]:
        if subset not in SUBSETS:
            raise ContractError(f"unknown subset '{subset}'")
        return sorted(eid for eid, s in self.assignments.items() if s == subset)

    def with_age_stats(self, age_min: float, age_max: float) -> "SplitManifest":
        return replace(self, age_min=age_min, age_max=age_max)


def apportion(count: int, ratios: tuple[float, ...]) -> tuple[int, ...]:
    """Integer allocation of ``count`` across ``ratios`` by largest remainder.

    Quotas are computed in exact rational arithmetic from the float ratios,
    so ties break identically on every platform. Remaining units go to the
    largest fractional remainders; remainder ties break by position.
    """
    quotas = [Fraction(count) * Fraction(r) for r in ratios]
    base = [int(q) for q in quotas]
    leftover = count - sum(base)
    # Sort by descending remainder, then by position for ties.
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return tuple(base)


def _check_ratios(ratios: tuple[float, ...]):
    if len(ratios) != len(SUBSETS):
        raise ConfigError(f"expected {len(SUBSETS)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be non-negative: {ratios}")
    if abs(sum(ratios) - 1.0) > RATIO_SUM_TOLERANCE:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)!r}")


def check_seed(seed: int) -> int:
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return seed


def stable_hash64(text: str) -> int:
    """Platform-independent 64-bit hash (``hash()`` is salted per process)."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def stratified_split(
    examples: list[LabeledExample],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    taxonomy: ClassTaxonomy | None = None,
    group_by_patient: bool = False,
) -> SplitManifest:
    """Split examples per class into train/validation/test.

    Each class is shuffled with a generator seeded from (seed, class name),
    so its split does not depend on which other classes are present. With
    ``group_by_patient`` every patient's images land in one subset;
    apportionment then runs over patient groups per class and the
    per-example proportions are only approximate.

    Raises:
        SplitError: a class has fewer than 3 examples.
        ConfigError: ratios malformed.
    """
    _check_ratios(ratios)
    check_seed(seed)

    by_class: dict[str, list[LabeledExample]] = {}
    for ex in sorted(examples, key=lambda e: e.example_id):
        by_class.setdefault(ex.label, []).append(ex)

    if taxonomy is None:
        taxonomy = _infer_taxonomy(sorted(by_class))
    classes = list(taxonomy.classes)
    for cls in classes:
        if len(by_class.get(cls, [])) < 3:
            raise SplitError(
                f"class '{cls}' has only {len(by_class.get(cls, []))} example(s); "
                "need at least 3"
            )
    foreign = set(by_class) - set(classes)
    if foreign:
        raise SplitError(f"examples carry labels outside the taxonomy: {sorted(foreign)}")

    assignments: dict[str, str] = {}
    labels: dict[str, str] = {}
    counts: dict[str, dict[str, int]] = {}

    for cls in classes:
        members = by_class[cls]
        rng = np.random.default_rng(np.random.SeedSequence([seed, stable_hash64(cls)]))
        if group_by_patient:
            units: list[list[LabeledExample]] = _patient_groups(members)
        else:
            units = [[ex] for ex in members]
        order = rng.permutation(len(units))
        shuffled = [units[i] for i in order]

        sizes = apportion(len(shuffled), ratios)
        counts[cls] = {}
        cursor = 0
        for subset, n in zip(SUBSETS, sizes):
            chunk = shuffled[cursor:cursor + n]
            cursor += n
            n_examples = 0
            for group in chunk:
                for ex in group:
                    assignments[ex.example_id] = subset
                    labels[ex.example_id] = ex.label
                    n_examples += 1
            counts[cls][subset] = n_examples

    return SplitManifest(
        seed=seed,
        taxonomy=taxonomy,
        ratios=tuple(ratios),
        assignments=assignments,
        labels=labels,
        per_class_counts=counts,
    )


def _patient_groups(members: list[LabeledExample]) -> list[list[LabeledExample]]:
    grouped: dict[str, list[LabeledExample]] = {}
    for ex in members:
        grouped.setdefault(ex.patient_id, []).append(ex)
    return [grouped[pid] for pid in sorted(grouped)]


def _infer_taxonomy(classes: list[str]) -> ClassTaxonomy:
    """Use a canonical taxonomy when the class set matches one, else ad hoc."""
    for tax in CANONICAL_TAXONOMIES.values():
        if sorted(tax.classes) == classes:
            return tax
    return ClassTaxonomy("custom", tuple(classes))


def serialize_manifest(manifest: SplitManifest) -> str:
    """Line-oriented text form; byte-identical for identical manifests."""
    lines = ["# split-manifest v1"]
    lines.append(f"seed\t{manifest.seed}")
    lines.append(
        "taxonomy\t{}\t{}".format(manifest.taxonomy.name, ",".join(manifest.taxonomy.classes))
    )
    lines.append("ratios\t" + "\t".join(repr(r) for r in manifest.ratios))
    lines.append(f"age_min\t{_fmt_stat(manifest.age_min)}")
    lines.append(f"age_max\t{_fmt_stat(manifest.age_max)}")
    for cls in manifest.taxonomy.classes:
        for subset in SUBSETS:
            lines.append(f"counts\t{cls}\t{subset}\t{manifest.per_class_counts[cls][subset]}")
    lines.append(f"examples\t{len(manifest.assignments)}")
    for eid in sorted(manifest.assignments):
        lines.append(f"{eid}\t{manifest.labels[eid]}\t{manifest.assignments[eid]}")
    return "\n".join(lines) + "\n"


def _fmt_stat(value: float | None) -> str:
    return "none" if value is None else repr(float(value))


def write_manifest(manifest: SplitManifest, path: str | Path):
    Path(path).write_text(serialize_manifest(manifest))


def parse_manifest(text: str) -> SplitManifest:
    lines = text.splitlines()
    if not lines or lines[0] != "# split-manifest v1":
        raise ContractError("not a split manifest (bad header line)")

    seed = None
    taxonomy = None
    ratios = None
    age_min = age_max = None
    counts: dict[str, dict[str, int]] = {}
    assignments: dict[str, str] = {}
    labels: dict[str, str] = {}
    n_expected = None

    for line in lines[1:]:
        if not line:
            continue
        parts = line.split("\t")
        key = parts[0]
        if key == "seed":
            seed = int(parts[1])
        elif key == "taxonomy":
            name, classes = parts[1], tuple(parts[2].split(","))
            canonical = CANONICAL_TAXONOMIES.get(name)
            taxonomy = canonical if canonical and canonical.classes == classes \
                else ClassTaxonomy(name, classes)
        elif key == "ratios":
            ratios = tuple(float(p) for p in parts[1:])
        elif key == "age_min":
            age_min = None if parts[1] == "none" else float(parts[1])
        elif key == "age_max":
            age_max = None if parts[1] == "none" else float(parts[1])
        elif key == "counts":
            counts.setdefault(parts[1], {})[parts[2]] = int(parts[3])
        elif key == "examples":
            n_expected = int(parts[1])
        else:
            eid, label, subset = parts
            assignments[eid] = subset
            labels[eid] = label

    if seed is None or taxonomy is None or ratios is None:
        raise ContractError("split manifest missing header fields")
    if n_expected is not None and n_expected != len(assignments):
        raise ContractError(
            f"split manifest example count mismatch: header says {n_expected}, "
            f"found {len(assignments)}"
        )
    return SplitManifest(
        seed=seed,
        taxonomy=taxonomy,
        ratios=ratios,  # type: ignore[arg-type]
        assignments=assignments,
        labels=labels,
        per_class_counts=counts,
        age_min=age_min,
        age_max=age_max,
    )


def read_manifest(path: str | Path) -> SplitManifest:
    return parse_manifest(Path(path).read_text())
