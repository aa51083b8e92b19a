"""Confusion matrices and per-class precision/recall/F1 reports.

Row and column order always follow the taxonomy class order, and the text
rendering mirrors the result-table layout: one metric row per class plus a
trailing overall-accuracy row.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ClassTaxonomy
from .errors import ContractError, EvaluationError


@dataclass
class ConfusionMatrix:
    taxonomy: ClassTaxonomy
    counts: np.ndarray  # rows = true class, columns = predicted class

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = self.taxonomy.size
        if counts.shape != (k, k):
            raise ContractError(
                f"confusion matrix must be {k}x{k} for taxonomy "
                f"'{self.taxonomy.name}', got {counts.shape}"
            )
        if (counts < 0).any():
            raise ContractError("confusion matrix entries must be non-negative")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass
class EvaluationReport:
    taxonomy: ClassTaxonomy
    per_class: dict[str, ClassMetrics]
    support: dict[str, int]
    overall_accuracy: float
    confusion: ConfusionMatrix


def confusion_matrix(
    true_labels: Sequence[str],
    predicted_labels: Sequence[str],
    taxonomy: ClassTaxonomy,
) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a KxK grid in taxonomy order."""
    if len(true_labels) != len(predicted_labels):
        raise ContractError(
            f"label list length mismatch: {len(true_labels)} true vs "
            f"{len(predicted_labels)} predicted"
        )
    k = taxonomy.size
    counts = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        counts[taxonomy.index_of(t), taxonomy.index_of(p)] += 1
    return ConfusionMatrix(taxonomy=taxonomy, counts=counts)


def compute_report(cm: ConfusionMatrix) -> EvaluationReport:
    """Per-class precision/recall/F1 plus overall accuracy.

    Zero-denominator convention: a metric is 0 when its denominator is 0.
    """
    if cm.total == 0:
        raise EvaluationError("cannot compute metrics on a zero-total confusion matrix")

    counts = cm.counts
    diag = np.diag(counts).astype(np.float64)
    col_sums = counts.sum(axis=0).astype(np.float64)
    row_sums = counts.sum(axis=1).astype(np.float64)

    per_class: dict[str, ClassMetrics] = {}
    support: dict[str, int] = {}
    for i, cls in enumerate(cm.taxonomy.classes):
        precision = diag[i] / col_sums[i] if col_sums[i] > 0 else 0.0
        recall = diag[i] / row_sums[i] if row_sums[i] > 0 else 0.0
        f1 = (
            2.0 * precision * recall / (precision + recall)
            if (precision + recall) > 0
            else 0.0
        )
        per_class[cls] = ClassMetrics(precision=precision, recall=recall, f1=f1)
        support[cls] = int(row_sums[i])

    accuracy = float(diag.sum() / cm.total)
    return EvaluationReport(
        taxonomy=cm.taxonomy,
        per_class=per_class,
        support=support,
        overall_accuracy=accuracy,
        confusion=cm,
    )


def render_text(report: EvaluationReport) -> str:
    """Result-table layout: class rows with 4-decimal metrics, then accuracy."""
    rows = [("Classes", "Precision", "Recall", "F1-score")]
    for cls in report.taxonomy.classes:
        m = report.per_class[cls]
        rows.append((cls, f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}"))

    name_w = max(len(r[0]) for r in rows + [("Overall Accuracy",) * 4])
    col_w = 10
    lines = []
    for r in rows:
        lines.append(r[0].ljust(name_w) + "".join(c.rjust(col_w) for c in r[1:]))
    lines.append(
        "Overall Accuracy".ljust(name_w)
        + "".rjust(col_w) * 2
        + f"{report.overall_accuracy:.4f}".rjust(col_w)
    )
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvaluationReport) -> dict:
    """Lossless machine-readable form (full-precision floats)."""
    return {
        "taxonomy": {
            "name": report.taxonomy.name,
            "classes": list(report.taxonomy.classes),
        },
        "confusion_matrix": report.confusion.counts.tolist(),
        "per_class": {
            cls: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
            for cls, m in report.per_class.items()
        },
        "support": dict(report.support),
        "overall_accuracy": report.overall_accuracy,
    }


def report_from_dict(data: dict) -> EvaluationReport:
    taxonomy = ClassTaxonomy(data["taxonomy"]["name"], tuple(data["taxonomy"]["classes"]))
    cm = ConfusionMatrix(taxonomy=taxonomy, counts=np.asarray(data["confusion_matrix"]))
    per_class = {
        cls: ClassMetrics(m["precision"], m["recall"], m["f1"])
        for cls, m in data["per_class"].items()
    }
    return EvaluationReport(
        taxonomy=taxonomy,
        per_class=per_class,
        support={c: int(n) for c, n in data["support"].items()},
        overall_accuracy=data["overall_accuracy"],
        confusion=cm,
    )


def write_reports(
    report: EvaluationReport,
    text_path: str | Path,
    json_path: str | Path,
    run_manifest: str | None = None,
):
    Path(text_path).write_text(render_text(report))
    payload = report_to_dict(report)
    if run_manifest is not None:
        payload["run_manifest"] = run_manifest
    Path(json_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_report(json_path: str | Path) -> EvaluationReport:
    return report_from_dict(json.loads(Path(json_path).read_text()))
