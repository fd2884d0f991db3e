"""Exception types shared across the package.

Every error carries a short category slug so the CLI can emit uniform
``error: <category>: <detail>`` diagnostics and choose the right exit code
(2 for validation problems, 3 for numerical failures).
"""


class NsgpError(Exception):
    """Base class; `category` is a short slug, `detail` the human message."""

    category = "error"
    exit_code = 2

    def __init__(self, detail):
        self.detail = str(detail)
        super().__init__(f"{self.category}: {self.detail}")


class ValidationError(NsgpError):
    """Bad inputs: parameters, dimensions, files, configuration."""

    exit_code = 2


class NumericalError(NsgpError):
    """Failures arising during computation (solver breakdowns etc.)."""

    exit_code = 3


class InvalidParameterError(ValidationError):
    category = "invalid-parameter"


class DimensionOverflowError(ValidationError):
    category = "dimension-overflow"


class DimensionMismatchError(ValidationError):
    category = "dimension-mismatch"


class UnknownParameterError(ValidationError):
    category = "unknown-parameter"


class UnknownKindError(ValidationError):
    category = "unknown-kind"


class RankDeficientDesignError(ValidationError):
    category = "rank-deficient-design"


class GridMismatchError(ValidationError):
    category = "grid-mismatch"


class TooFewObservationsError(ValidationError):
    category = "too-few-observations"


class TooLargeError(ValidationError):
    category = "too-large"


class EmptyCandidateListError(ValidationError):
    category = "empty-candidate-list"


class ConfigParseError(ValidationError):
    category = "config-parse"


class PcgFailureError(NumericalError):
    category = "pcg-failure"


class BreakdownError(NumericalError):
    category = "breakdown"


class NoProgressError(NumericalError):
    category = "no-progress"


class OptimizerFailureError(NumericalError):
    category = "optimizer-failure"


class SingularConditioningError(NumericalError):
    category = "singular-conditioning"
