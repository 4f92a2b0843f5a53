"""Exception types shared across the package."""


class NHGLNError(Exception):
    """Base class for all package errors."""


class DimensionError(NHGLNError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(NHGLNError, ValueError):
    """A precondition of an operation was violated."""


class LabelError(ContractError):
    """A class label lies outside ``[0, C)``."""


class ParameterError(ContractError):
    """A scalar hyperparameter is out of its valid range."""


class ValidationError(NHGLNError, ValueError):
    """Layout, partition or configuration failed validation."""


class MetadataError(NHGLNError, ValueError):
    """A dataset lacks the tags a split protocol needs."""


class FormatError(NHGLNError, ValueError):
    """A binary file is malformed; ``offset`` is where it was detected."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalAbort(NHGLNError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, last_finite=None):
        msg = f"non-finite loss at step {step}"
        if last_finite is not None:
            msg += f"; last finite breakdown: {last_finite}"
        super().__init__(msg)
        self.step = step
        self.last_finite = last_finite
