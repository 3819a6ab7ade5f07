"""Exception types shared across the toolkit."""


class SeqVerifyError(Exception):
    """Base class for all toolkit errors."""


class InsufficientSamplesError(SeqVerifyError):
    """A density fit was requested with too few samples for some label."""


class EmptyStreamError(SeqVerifyError):
    """A distance stream yielded no valid observation at all."""


class EmptyHistoryError(SeqVerifyError):
    """An LLR history operation was called on an empty history."""


class DomainError(SeqVerifyError):
    """A numeric argument is outside its admissible open interval."""


class WindowOverflowError(SeqVerifyError):
    """A conflict-resolution window exceeded its segment cap."""


class ConfigError(SeqVerifyError):
    """A configuration document violates the schema or an invariant."""


class InsufficientPairsError(SeqVerifyError):
    """A world does not contain enough labeled pairs for the request."""


class SingularSystemError(SeqVerifyError):
    """The pose-graph normal equations are rank deficient beyond the gauge."""
