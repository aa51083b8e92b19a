"""Multimodal oral-lesion classification pipeline.

Data-centric training for lesion photographs plus patient metadata:
stratified splitting, recipe-driven augmentation, minority-class
oversampling, two-branch fusion training with a freeze/fine-tune schedule,
and per-class evaluation reports.
"""

from .dataset import (
    FOUR_CLASS,
    THREE_CLASS,
    TWO_CLASS,
    ClassTaxonomy,
    IngestResult,
    LabeledExample,
    MetadataTable,
    PatientMetadata,
    canonical_taxonomy,
    ingest_images,
    load_metadata,
    resize_image,
)
from .splitting import SplitManifest, apportion, stratified_split
from .transforms import (
    NormalizationParams,
    TransformSpec,
    apply_transform,
    default_recipe,
    scale_to_unit,
    standardize,
)
from .augment import (
    AugmentationPlan,
    expand_training_set,
    oversample_minority,
    render_example,
)
from .evaluation import (
    ConfusionMatrix,
    EvaluationReport,
    compute_report,
    confusion_matrix,
    render_text,
)
from .model import EncoderSpec, FusionModel, build_model, predict
from .training import (
    ClassWeights,
    TrainingSchedule,
    compute_class_weights,
    train,
    weighted_cross_entropy,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentationPlan",
    "ClassTaxonomy",
    "ClassWeights",
    "ConfusionMatrix",
    "EncoderSpec",
    "EvaluationReport",
    "FOUR_CLASS",
    "FusionModel",
    "IngestResult",
    "LabeledExample",
    "MetadataTable",
    "NormalizationParams",
    "PatientMetadata",
    "SplitManifest",
    "THREE_CLASS",
    "TWO_CLASS",
    "TrainingSchedule",
    "TransformSpec",
    "apply_transform",
    "apportion",
    "build_model",
    "canonical_taxonomy",
    "compute_class_weights",
    "compute_report",
    "confusion_matrix",
    "default_recipe",
    "expand_training_set",
    "ingest_images",
    "load_metadata",
    "oversample_minority",
    "predict",
    "render_example",
    "render_text",
    "resize_image",
    "scale_to_unit",
    "standardize",
    "stratified_split",
    "train",
    "weighted_cross_entropy",
]
