"""Exception hierarchy shared by every pipeline stage.

The CLI maps these onto exit codes, so each class corresponds to one
error family rather than one call site.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PipelineError, ValueError):
    """An argument is outside the domain of the operation."""


class GeometryError(DomainError):
    """A label polygon is malformed."""


class InfeasiblePlanError(DomainError):
    """No square spectrogram plan exists for the requested length."""


class FormatError(PipelineError):
    """A file or stream does not follow its documented layout."""


class ProvenanceError(FormatError):
    """Artifacts produced by different models were mixed."""


class NumericError(PipelineError, ArithmeticError):
    """A computation produced non-finite values."""


class TrainingError(NumericError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(PipelineError):
    """A configuration value is missing or invalid."""
