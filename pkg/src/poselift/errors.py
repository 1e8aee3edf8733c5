"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """An operation was called outside its documented contract."""


class DatasetFormatError(ValueError):
    """A dataset file is malformed.

    Carries the 1-based line number when the failure is tied to a line.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointDigestError(CheckpointError):
    """Stored digest does not match the file contents (corruption/truncation)."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointManifestError(CheckpointError):
    """Tensor manifest is inconsistent with the configuration or payload."""


class AlignmentError(ValueError):
    """Procrustes alignment is undefined for the given (degenerate) input."""
