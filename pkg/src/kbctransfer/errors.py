"""Exception types raised across the package."""


class KBCError(Exception):
    """Base class for all package errors."""


class ShapeError(KBCError, ValueError):
    """Operand shapes are incompatible for an operation."""


class NumericError(KBCError, ValueError):
    """An operation received or produced non-finite values."""


class FormatError(KBCError, ValueError):
    """An input file does not follow its expected layout."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class CheckpointError(KBCError):
    """A checkpoint is missing, inconsistent, or incompatible."""


class TransferError(KBCError):
    """A pre-trained model cannot initialize the requested target model."""


class TrainingError(KBCError):
    """Training diverged or was misconfigured."""
