"""Exception types shared across the package."""


class SafsarError(Exception):
    """Base class for all package errors."""


class ShapeError(SafsarError):
    """Operand shapes are incompatible."""


class DomainError(SafsarError):
    """A value lies outside an operation's domain (empty input, zero count, ...)."""


class ContractError(SafsarError):
    """A documented precondition was violated by the caller."""


class ConfigError(SafsarError):
    """Invalid structural configuration (divisibility, crop size, depth, ...)."""


class CapacityError(SafsarError):
    """A dataset split is too small for the requested episode layout."""


class DegenerateVectorError(DomainError):
    """Cosine similarity requested on a (near-)zero vector."""


class StaleTapeError(SafsarError):
    """A tensor produced under one tape was reused under another or after reset."""


class DivergedError(SafsarError):
    """Training produced a non-finite loss."""

    def __init__(self, episode: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at episode {episode}")
        self.episode = episode
        self.loss = loss


class NonDeterministicError(SafsarError):
    """A function under gradient check returned different values on repeated calls."""


class CacheError(SafsarError):
    """Base class for feature-cache format errors."""


class NotACacheError(CacheError):
    """File is missing or does not carry the cache magic."""


class CacheVersionError(CacheError):
    """Cache format version is not supported."""


class CacheCorruptionError(CacheError):
    """Cache contents are inconsistent with the declared layout."""
