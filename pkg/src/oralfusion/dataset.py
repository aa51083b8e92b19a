"""Dataset ingestion: class taxonomies, patient metadata, image corpus.

Expected on-disk layout::

    <root>/<ClassName>/<patient_id>_<k>.<ext>     ext in {jpg, jpeg, png}
    <root>/metadata.csv                           header: patient_id,age,gender,
                                                  smoking,betel_quid,alcohol

The patient id of an image is the filename prefix before the first
underscore. Example ids are the path of the image relative to the dataset
root, so they stay unique, sortable and auditable.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ContractError,
    IngestionError,
    InvalidImageError,
    RowError,
    SchemaError,
    UnresolvedPatientError,
)

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}
IMAGE_SIZE = 224

METADATA_COLUMNS = ("patient_id", "age", "gender", "smoking", "betel_quid", "alcohol")

# Categorical encoding used for the metadata branch. Matching is
# case-insensitive on trimmed values.
GENDER_ENCODING = {"male": 1, "female": 0}
YES_NO_ENCODING = {"yes": 1, "no": 0}


@dataclass(frozen=True)
class ClassTaxonomy:
    """An ordered set of class labels.

    The order is fixed and determines the row/column order of every
    downstream confusion matrix and report.
    """

    name: str
    classes: tuple[str, ...]

    def __post_init__(self):
        if not (2 <= len(self.classes) <= 4):
            raise ContractError(
                f"taxonomy '{self.name}' must have 2-4 classes, got {len(self.classes)}"
            )
        if len(set(self.classes)) != len(self.classes):
            raise ContractError(f"taxonomy '{self.name}' has duplicate classes")

    @property
    def size(self) -> int:
        return len(self.classes)

    def index_of(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ContractError(
                f"label '{label}' is not in taxonomy '{self.name}' {list(self.classes)}"
            ) from None


TWO_CLASS = ClassTaxonomy("two_class", ("OPMD", "Benign"))
THREE_CLASS = ClassTaxonomy("three_class", ("OPMD", "Benign", "Healthy"))
FOUR_CLASS = ClassTaxonomy("four_class", ("OPMD", "Benign", "Healthy", "OralCancer"))

CANONICAL_TAXONOMIES = {t.name: t for t in (TWO_CLASS, THREE_CLASS, FOUR_CLASS)}


def canonical_taxonomy(name: str) -> ClassTaxonomy:
    try:
        return CANONICAL_TAXONOMIES[name]
    except KeyError:
        raise ContractError(
            f"unknown taxonomy '{name}', expected one of {sorted(CANONICAL_TAXONOMIES)}"
        ) from None


@dataclass(frozen=True)
class PatientMetadata:
    """One cleaned, numerically encoded clinical record.

    ``age_norm`` is min-max normalized over the table the record was loaded
    from; the binary fields use the module-level encoding tables.
    """

    patient_id: str
    age_years: float
    age_norm: float
    gender: int
    smoking: int
    betel_quid: int
    alcohol: int

    def vector(self) -> np.ndarray:
        """Fixed-order 5-vector (age, gender, smoking, betel_quid, alcohol)."""
        return np.array(
            [self.age_norm, self.gender, self.smoking, self.betel_quid, self.alcohol],
            dtype=np.float32,
        )


@dataclass
class MetadataTable:
    """All patient records plus the age statistics used to normalize them."""

    records: dict[str, PatientMetadata]
    age_min: float
    age_max: float

    def __len__(self) -> int:
        return len(self.records)

    def get(self, patient_id: str) -> PatientMetadata | None:
        return self.records.get(patient_id)

    def vector(self, patient_id: str) -> np.ndarray:
        record = self.records.get(patient_id)
        if record is None:
            raise UnresolvedPatientError(f"no metadata record for patient '{patient_id}'")
        return record.vector()


def encode_metadata_vector(
    age_years: float, gender: str, smoking: str, betel_quid: str,
    alcohol: str, age_min: float, age_max: float,
) -> np.ndarray:
    """Encode one raw row into the 5-vector using explicit age statistics.

    Used at inference time, where the age range comes from the checkpoint
    rather than the ingested table. Values outside the stored range clamp
    to [0, 1].
    """
    span = age_max - age_min
    age_norm = 0.0 if span <= 0 else (age_years - age_min) / span
    age_norm = min(max(age_norm, 0.0), 1.0)
    return np.array(
        [
            age_norm,
            _encode_categorical(gender, GENDER_ENCODING, "gender"),
            _encode_categorical(smoking, YES_NO_ENCODING, "smoking"),
            _encode_categorical(betel_quid, YES_NO_ENCODING, "betel_quid"),
            _encode_categorical(alcohol, YES_NO_ENCODING, "alcohol"),
        ],
        dtype=np.float32,
    )


def _encode_categorical(value: str, table: dict[str, int], column: str) -> int:
    key = value.strip().lower()
    if key not in table:
        raise ValueError(f"unmappable {column} value '{value}'")
    return table[key]


def load_metadata(csv_path: str | Path) -> MetadataTable:
    """Load and encode the patient metadata table.

    Raises:
        SchemaError: a required column is missing.
        RowError: a row has a non-numeric/negative age, a missing value, or
            an unmappable categorical value.
        IngestionError: duplicate patient ids.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise SchemaError(f"metadata table not found: {csv_path}")

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in METADATA_COLUMNS if c not in header]
        if missing:
            raise SchemaError(
                f"{csv_path.name} is missing required column(s): {', '.join(missing)}"
            )
        raw_rows = list(reader)

    parsed: list[tuple[str, float, int, int, int, int]] = []
    seen: dict[str, int] = {}
    duplicates: list[str] = []
    for idx, row in enumerate(raw_rows, start=1):
        patient_id = (row["patient_id"] or "").strip()
        if not patient_id:
            raise RowError(idx, "empty patient_id")
        if patient_id in seen:
            duplicates.append(patient_id)
        seen[patient_id] = idx

        age_text = (row["age"] or "").strip()
        try:
            age = float(age_text)
        except ValueError:
            raise RowError(idx, f"non-numeric age '{age_text}'") from None
        if not np.isfinite(age) or age < 0:
            raise RowError(idx, f"age must be a non-negative number, got '{age_text}'")

        # No imputation: a missing or unmappable value is a hard error.
        try:
            gender = _encode_categorical(row["gender"] or "", GENDER_ENCODING, "gender")
            smoking = _encode_categorical(row["smoking"] or "", YES_NO_ENCODING, "smoking")
            betel = _encode_categorical(row["betel_quid"] or "", YES_NO_ENCODING, "betel_quid")
            alcohol = _encode_categorical(row["alcohol"] or "", YES_NO_ENCODING, "alcohol")
        except ValueError as exc:
            raise RowError(idx, str(exc)) from None

        parsed.append((patient_id, age, gender, smoking, betel, alcohol))

    if duplicates:
        raise IngestionError(
            "duplicate patient_id(s) in metadata table: " + ", ".join(sorted(set(duplicates)))
        )
    if not parsed:
        raise SchemaError(f"{csv_path.name} contains no data rows")

    ages = [p[1] for p in parsed]
    age_min, age_max = min(ages), max(ages)
    span = age_max - age_min

    records = {}
    for patient_id, age, gender, smoking, betel, alcohol in parsed:
        age_norm = 0.0 if span == 0 else (age - age_min) / span
        records[patient_id] = PatientMetadata(
            patient_id=patient_id,
            age_years=age,
            age_norm=age_norm,
            gender=gender,
            smoking=smoking,
            betel_quid=betel,
            alcohol=alcohol,
        )
    return MetadataTable(records=records, age_min=age_min, age_max=age_max)


ORIGIN_ORIGINAL = "original"
ORIGIN_AUGMENTED = "augmented"
ORIGIN_DUPLICATED = "duplicated"
ORIGINS = (ORIGIN_ORIGINAL, ORIGIN_AUGMENTED, ORIGIN_DUPLICATED)


@dataclass(frozen=True)
class LabeledExample:
    """The unit flowing through split, augmentation and training.

    ``image_path`` is relative to the dataset root. For augmented examples
    ``parent_id``/``copy_index`` identify the source image and the
    deterministic per-copy seed; for duplicated examples ``parent_id`` names
    the example whose pixels are shared.
    """

    example_id: str
    image_path: str
    patient_id: str
    label: str
    origin: str = ORIGIN_ORIGINAL
    parent_id: str | None = None
    copy_index: int | None = None

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ContractError(f"unknown origin '{self.origin}'")


@dataclass
class IngestResult:
    examples: list[LabeledExample]
    skipped_folders: dict[str, int] = field(default_factory=dict)
    per_class_counts: dict[str, int] = field(default_factory=dict)


def patient_id_from_filename(filename: str) -> str:
    """Filename prefix before the first underscore (layout contract)."""
    return Path(filename).stem.split("_", 1)[0]


def ingest_images(
    root: str | Path,
    taxonomy: ClassTaxonomy,
    metadata: MetadataTable,
) -> IngestResult:
    """Walk the class folders of ``root`` and pair images with metadata.

    Folders outside the taxonomy are skipped but counted. Every returned
    example has a resolvable metadata record and origin=original. The
    example list is sorted by example id so ingestion order never matters.

    Raises:
        IngestionError: a taxonomy class folder is missing.
        UnresolvedPatientError: an image's patient id has no metadata row.
        InvalidImageError: an image file cannot be decoded.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root not found: {root}")

    for cls in taxonomy.classes:
        if not (root / cls).is_dir():
            raise IngestionError(f"missing class folder '{cls}' under {root}")

    skipped: dict[str, int] = {}
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        if folder.name not in taxonomy.classes:
            n = sum(1 for f in folder.iterdir() if f.suffix.lower() in IMAGE_EXTENSIONS)
            if n:
                skipped[folder.name] = n

    examples: list[LabeledExample] = []
    unresolved: list[str] = []
    for cls in taxonomy.classes:
        files = sorted(
            f for f in (root / cls).iterdir()
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            logger.warning("class folder '%s' contains no images", cls)
        for f in files:
            rel = f"{cls}/{f.name}"
            patient_id = patient_id_from_filename(f.name)
            if metadata.get(patient_id) is None:
                unresolved.append(rel)
                continue
            try:
                with Image.open(f) as img:
                    img.size  # decodes the header only
            except (UnidentifiedImageError, OSError) as exc:
                raise InvalidImageError(f"unreadable image file {rel}: {exc}") from None
            examples.append(
                LabeledExample(
                    example_id=rel,
                    image_path=rel,
                    patient_id=patient_id,
                    label=cls,
                )
            )

    if unresolved:
        raise UnresolvedPatientError(
            "image(s) with no metadata record: " + ", ".join(unresolved)
        )

    examples.sort(key=lambda e: e.example_id)
    counts = {cls: sum(1 for e in examples if e.label == cls) for cls in taxonomy.classes}
    return IngestResult(examples=examples, skipped_folders=skipped, per_class_counts=counts)


def resize_image(image: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Direct bilinear resize to ``size`` x ``size`` (aspect not preserved)."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidImageError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidImageError("image has a zero dimension")
    if arr.shape[0] == size and arr.shape[1] == size:
        return arr.copy()
    return cv2.resize(arr, (size, size), interpolation=cv2.INTER_LINEAR)


def load_image(root: str | Path, image_path: str, size: int = IMAGE_SIZE) -> np.ndarray:
    """Read an image as RGB uint8 and resize it to the model input size."""
    full = Path(root) / image_path
    try:
        with Image.open(full) as img:
            rgb = np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise InvalidImageError(f"unreadable image file {image_path}: {exc}") from None
    return resize_image(rgb, size)
