"""Exception hierarchy shared across the package."""


class MPEntangleError(Exception):
    """Base class for all package errors."""


class InvalidParameters(MPEntangleError, ValueError):
    pass


class InvalidTimeGrid(MPEntangleError, ValueError):
    pass


class NetworkError(MPEntangleError):
    pass


class NonUnitarySplitter(NetworkError):
    pass


class LaserLeakage(NetworkError):
    pass


class NetworkTopologyError(NetworkError, ValueError):
    pass


class QuadratureResolutionError(MPEntangleError, ValueError):
    pass


class NonPositiveVariance(MPEntangleError, ArithmeticError):
    pass


class UndefinedQ(MPEntangleError, ArithmeticError):
    pass


class ChannelIncompleteness(MPEntangleError):
    pass


class NormUnderflow(MPEntangleError):
    pass


class Indistinguishable(MPEntangleError):
    """Raised when two count distributions overlap too much to classify."""


class ScenarioError(MPEntangleError):
    """Scenario file could not be parsed or validated.

    ``field`` holds the dotted path of the offending entry (or ``None`` for
    parse errors) so the CLI can point at it.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


class CrossCheckFailure(MPEntangleError):
    def __init__(self, message, diff=None):
        super().__init__(message)
        self.diff = diff or []
