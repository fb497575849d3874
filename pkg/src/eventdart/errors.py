"""Exception hierarchy shared across the package."""


class DartError(Exception):
    """Base class for every error raised by eventdart."""


class ConfigError(DartError, ValueError):
    pass


class TruncatedRecord(DartError, ValueError):
    pass


class OutOfBounds(DartError, ValueError):
    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"event {index} lies outside the sensor")


class ParseError(DartError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InvalidTimestamp(DartError, ValueError):
    pass


class OrderViolation(DartError, ValueError):
    pass


class OverlapError(DartError, ValueError):
    pass


class InvalidBox(DartError, ValueError):
    pass


class OutOfRange(DartError, ValueError):
    pass


class CenterEvent(DartError, ValueError):
    """Raised for a zero offset, which has no defined angle."""


class DomainError(DartError, ValueError):
    pass


class ShapeError(DartError, ValueError):
    pass


class DegenerateTraining(DartError, ValueError):
    pass


class NoEvidence(DartError, RuntimeError):
    pass


class InsufficientInit(DartError, ValueError):
    pass


class NoComponent(DartError, ValueError):
    pass


class InsufficientCandidates(DartError, ValueError):
    pass


class NoGroundTruth(DartError, ValueError):
    pass


class NoSuccesses(DartError, ValueError):
    pass
