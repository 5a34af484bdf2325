"""Exception hierarchy shared by the solvers, simulator, and CLI."""


class RfdTrafficError(Exception):
    """Base class for every error raised by this package."""


class ParseError(RfdTrafficError):
    """Malformed input syntax (graph, network, or scenario files)."""


class ValidationError(RfdTrafficError):
    """Input parsed but violates a structural invariant."""


class UnknownNode(RfdTrafficError):
    pass


class Unreachable(RfdTrafficError):
    """No directed path exists between the requested nodes."""


class InfeasibleParams(RfdTrafficError):
    pass


class NotConverged(RfdTrafficError):
    """A metaheuristic never produced a usable path.

    ``stats`` carries whatever diagnostics the solver collected.
    """

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class NotFound(RfdTrafficError):
    """No random walk reached the destination."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class NoDescent(RfdTrafficError):
    """Steepest-descent extraction stalled on a node without a downhill edge."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


class NotBlocked(RfdTrafficError):
    """deposit_sediment was called on a node that is not a pit."""


class InfeasibleCycle(RfdTrafficError):
    pass


class MalformedRecord(RfdTrafficError):
    pass


class UnknownUnit(RfdTrafficError):
    pass
