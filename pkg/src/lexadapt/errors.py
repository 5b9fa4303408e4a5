"""Exception types shared across the package."""


class LexAdaptError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LexAdaptError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(LexAdaptError):
    """Operand values lie outside an operation's mathematical domain."""


class NumericError(LexAdaptError):
    """A forward value came out NaN or infinite; the step is aborted."""


class ContractError(LexAdaptError):
    """An API precondition was violated by the caller."""


class ConfigError(LexAdaptError):
    """Invalid or inconsistent configuration."""


class VocabularyError(LexAdaptError):
    """Index or symbol outside the active vocabulary."""


class ValidationError(LexAdaptError):
    """A corpus file failed validation."""


class CheckpointError(LexAdaptError):
    """A checkpoint is unreadable or incompatible with the configuration."""


class ConstantInputError(LexAdaptError):
    """Correlation is undefined because an input sequence is constant."""
