"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data/format problems exit 2, numerical-consistency and training
failures exit 3.
"""


class DCMatchError(Exception):
    """Base class for all package errors."""


class InputError(DCMatchError, ValueError):
    """An argument violates its contract (domain, finiteness, emptiness)."""


class ShapeError(DCMatchError, ValueError):
    """Array dimensions do not line up."""


class NumericalConsistencyError(DCMatchError, FloatingPointError):
    """A value left its mathematically guaranteed range by more than the
    tolerated floating-point guard band."""


class DataError(DCMatchError):
    """Base class for file and wire-format problems."""


class BundleManifestError(DataError):
    """Bundle manifest is missing, malformed, or self-inconsistent."""


class BundleShapeError(DataError):
    """Bundle payload length or offsets disagree with the manifest."""


class BundlePayloadError(DataError):
    """Bundle payload is truncated or contains invalid values."""


class TeacherFileError(DataError):
    """Teacher-distribution CSV is malformed or not a valid simplex."""


class TextBankError(DataError):
    """Text-embedding CSV is malformed or rows are not unit vectors."""


class CheckpointError(DataError):
    """Checkpoint file or its sidecar manifest is invalid."""


class TrainingError(DCMatchError):
    """Training diverged or produced a non-finite loss."""
