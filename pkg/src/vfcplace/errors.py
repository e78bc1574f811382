"""Exception types raised across the package."""


class VfcError(Exception):
    """Base class for all package errors."""


class UnknownNode(VfcError, KeyError):
    pass


class InvalidPath(VfcError, ValueError):
    pass


class UnknownSegment(VfcError, KeyError):
    pass


class MalformedRecord(VfcError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCluster(VfcError):
    pass


class TargetExceedsNodes(VfcError, ValueError):
    pass


class UndefinedScore(VfcError, ZeroDivisionError):
    pass


class NoControlNode(VfcError):
    pass


class NoSources(VfcError):
    pass


class InstanceTooLarge(VfcError):
    pass


class Infeasible(VfcError):
    pass


class InconsistentGap(VfcError, ValueError):
    """Heuristic beat a proven-optimal solution, which indicates a bug."""


class InvalidSpec(VfcError, ValueError):
    pass


class SearchBudgetExceeded(VfcError):
    """The time budget ran out before any feasible solution was found."""
