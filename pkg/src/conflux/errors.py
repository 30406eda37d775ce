"""Exception types shared across the package."""


class ConfluxError(Exception):
    """Base class for all domain errors raised by this package."""


class DuplicateBlock(ConfluxError):
    pass


class UnknownBlock(ConfluxError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class InvalidBlock(ConfluxError):
    """A block violates a structural rule (second genesis, parent listed as reference, ...)."""


class CyclicReference(ConfluxError):
    pass


class NotOnPivotChain(ConfluxError):
    pass


class ConfigInvalid(ConfluxError):
    pass


class ScheduleInfeasible(ConfluxError):
    pass


class DomainError(ConfluxError, ValueError):
    pass
