"""Exception types shared across the toolkit."""


class TagexError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(TagexError):
    """Operands have non-conformant shapes."""


class NumericError(TagexError):
    """A computation produced NaN or Inf."""


class ContractError(TagexError):
    """A documented precondition was violated by the caller."""


class ConfigError(TagexError):
    """Configuration values are inconsistent or out of range."""


class IngestionError(TagexError):
    """An input file could not be parsed."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CorpusValidationError(TagexError):
    """A corpus record failed content validation."""


class TrainingDiverged(TagexError):
    """Training loss became non-finite."""

    def __init__(self, epoch):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


class OracleError(TagexError):
    """A labeling oracle could not answer a query."""
