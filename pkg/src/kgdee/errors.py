"""Exception hierarchy shared by every stage of the pipeline."""


class KgdeeError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(KgdeeError, ValueError):
    """Operand shapes do not line up."""


class DomainError(KgdeeError, ValueError):
    """Input lies outside the domain of an operation (empty vector, zero count, ...)."""


class DataError(KgdeeError, ValueError):
    """Malformed or inconsistent input data (files, documents, annotations)."""


class IngestError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class TrainingError(KgdeeError, ArithmeticError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")


class GradientCheckError(KgdeeError, ArithmeticError):
    """Finite-difference verification hit a non-finite gradient."""


class DecodeError(KgdeeError, RuntimeError):
    """EDAG expansion exceeded its branch budget."""


class NumericClampWarning(RuntimeWarning):
    """A probability was clamped away from zero inside a loss."""
