"""Exception and warning types shared across the package."""


class SramFaultError(Exception):
    """Base class for every error raised by this package."""


# fault-map ingestion
class MalformedHeader(SramFaultError, ValueError):
    pass


class MalformedRecord(SramFaultError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CoordinateOutOfRange(MalformedRecord):
    pass


class DuplicateFault(UserWarning):
    """Duplicate fault records were merged while parsing."""


class GeometryMismatch(SramFaultError, ValueError):
    pass


# generation
class EmptyHistogram(SramFaultError, ValueError):
    pass


class InfeasibleTarget(SramFaultError, ValueError):
    pass


class RetryBudgetExhausted(UserWarning):
    """Some blocks never reached the similarity threshold and were accepted
    as the best candidate seen."""


# injection
class NonFiniteInput(SramFaultError, ValueError):
    pass


class CapacityExceeded(SramFaultError, ValueError):
    def __init__(self, required_blocks: int, available_blocks: int):
        super().__init__(
            f"layout needs {required_blocks} blocks, geometry has {available_blocks}"
        )
        self.required_blocks = required_blocks
        self.available_blocks = available_blocks


class MaskRequired(SramFaultError, ValueError):
    pass


# evaluation
class ShapeMismatch(SramFaultError, ValueError):
    pass


class MissingProfile(SramFaultError, KeyError):
    pass


class GridMismatch(SramFaultError, ValueError):
    pass
