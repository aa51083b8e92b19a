"""Exception hierarchy for the pipeline.

Every error carries an exit code so the CLI can map failures onto its
documented statuses: 1 = validation error, 2 = data error, 3 = training or
numeric error.
"""


class PipelineError(Exception):
    """Base class for all pipeline failures."""

    exit_code = 1


class ConfigError(PipelineError):
    """Invalid configuration: bad ratios, unknown taxonomy, bad paths."""

    exit_code = 1


class PlanError(ConfigError):
    """Invalid augmentation plan (unknown transform kind, bad magnitudes)."""


class DataError(PipelineError):
    """Problems with the dataset itself."""

    exit_code = 2


class SchemaError(DataError):
    """Metadata table is missing required columns."""


class RowError(DataError):
    """A single metadata row failed cleaning or encoding."""

    def __init__(self, row_index: int, message: str):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class IngestionError(DataError):
    """Image corpus could not be paired with metadata or read."""


class UnresolvedPatientError(IngestionError):
    """An image's patient id has no metadata record."""


class InvalidImageError(DataError):
    """Pixel data violates its contract (empty, out of range, unreadable)."""


class SplitError(DataError):
    """Stratified split preconditions violated."""


class ContractError(DataError):
    """An operation received inputs outside its stated contract."""


class OversamplingError(DataError):
    """Oversampling saw a class with no examples."""


class EvaluationError(DataError):
    """Evaluation on degenerate inputs (e.g. empty test subset)."""


class TrainingError(PipelineError):
    """Training could not run or aborted."""

    exit_code = 3


class NumericError(TrainingError):
    """Non-finite loss or metric during training."""


class BuildError(ConfigError):
    """Model could not be constructed from its spec."""
