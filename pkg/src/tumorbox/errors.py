"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation/configuration problems are
usage errors (2), a strict-mode empty detection is 3, and file format or
I/O trouble is 4.
"""


class TumorBoxError(Exception):
    """Base class for all package errors."""


class ValidationError(TumorBoxError):
    """An input value violates a documented invariant or precondition."""


class ConfigurationError(TumorBoxError):
    """Inconsistent run setup, e.g. a representative slice without an atlas."""


class FormatError(TumorBoxError):
    """A file could not be parsed (bad header key, malformed JSON, ...)."""


class UnsupportedFeatureError(FormatError):
    """The file is recognised but uses a feature outside the supported subset."""


class TruncatedDataError(FormatError):
    """The binary payload is shorter than the header-declared dimensions imply."""


class NoTumorDetectedError(TumorBoxError):
    """The pipeline produced an empty tumor map.

    When raised by the full pipeline, ``report`` carries the per-slice
    diagnostics gathered up to the failure.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EmptyGroundTruthError(TumorBoxError):
    """A ground-truth volume contains no tumor voxels at all."""
