"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`GanTransferError`, so the
CLI can map families of failures onto stable exit codes.
"""


class GanTransferError(Exception):
    """Base class for all package errors."""


# tensor / autodiff
class ShapeMismatch(GanTransferError, ValueError):
    pass


class DomainError(GanTransferError, ValueError):
    pass


class InvalidHyperparameter(GanTransferError, ValueError):
    pass


class DegenerateBatch(GanTransferError, ValueError):
    pass


class InvalidTarget(GanTransferError, ValueError):
    pass


class DetachedTensor(GanTransferError, RuntimeError):
    pass


class NumericalOverflow(GanTransferError, FloatingPointError):
    pass


# models / training
class NoHead(GanTransferError, ValueError):
    pass


class MissingGradient(GanTransferError, RuntimeError):
    pass


class EmptyBatch(GanTransferError, ValueError):
    pass


class NonFiniteLoss(GanTransferError, FloatingPointError):
    """A loss became NaN or Inf; ``diagnostics`` holds the state at abort."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# data
class EmptyDataset(GanTransferError, ValueError):
    pass


class MissingClassDir(GanTransferError, FileNotFoundError):
    pass


class UndecodableImage(GanTransferError, ValueError):
    pass


class TooSmall(GanTransferError, ValueError):
    pass


class SizeMismatch(GanTransferError, ValueError):
    pass


class UntrainedGenerator(GanTransferError, RuntimeError):
    pass


class CorruptArchive(GanTransferError, ValueError):
    pass


# metrics
class LengthMismatch(GanTransferError, ValueError):
    pass


class InvalidLabel(GanTransferError, ValueError):
    pass


class EmptyMatrix(GanTransferError, ValueError):
    pass


class ConfigError(GanTransferError, ValueError):
    pass
