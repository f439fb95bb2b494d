"""Exception types shared across the package."""


class SupSlopeError(Exception):
    pass


class SpecError(SupSlopeError, ValueError):
    """Invalid symmetric-function specification."""


class ConeViolationError(SupSlopeError, ValueError):
    """An eigenvalue tuple lies outside the open cone Gamma_k.

    ``index`` is the first i with S_i <= 0 at the worst node ``node``.
    """

    def __init__(self, index, margin, node=()):
        self.index = index
        self.margin = margin
        self.node = node
        where = f" at node {node}" if node else ""
        super().__init__(f"outside cone{where}: S_{index} <= 0 (margin {margin:.3e})")


class AdmissibilityError(SupSlopeError):
    """A potential u leaves the admissible set somewhere on the grid."""

    def __init__(self, node, margin):
        self.node = node
        self.margin = margin
        super().__init__(f"inadmissible potential: worst node {node}, cone margin {margin:.3e}")


class MetricError(SupSlopeError, ValueError):
    """A metric field fails positive definiteness or symmetry."""

    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message if node is None else f"{message} at node {node}")


class GridError(SupSlopeError, ValueError):
    pass


class ExprError(SupSlopeError, ValueError):
    """Base for expression-language errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class UnknownIdentifierError(ExprError):
    def __init__(self, name, offset=None):
        self.name = name
        self.offset = offset
        where = "" if offset is None else f" at offset {offset}"
        super().__init__(f"unknown identifier {name!r}{where}")


class ExprEvalError(ExprError):
    def __init__(self, message, node):
        self.node = node
        super().__init__(f"{message} at grid index {node}")


class ContinuityFailure(SupSlopeError):
    """The continuity path could not be followed to t = 1.

    Carries the last accepted state and the trace up to that point.
    """

    def __init__(self, message, state, trace):
        self.state = state
        self.trace = trace
        super().__init__(message)


class NewtonFailure(SupSlopeError):
    """One Newton solve at fixed t failed (damping, linear solve or budget)."""

    def __init__(self, message, iterations=0, reason="newton"):
        self.iterations = iterations
        self.reason = reason
        super().__init__(message)


class SubsolutionFailure(SupSlopeError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message if node is None else f"{message} at node {node}")


class ConfigError(SupSlopeError, ValueError):
    pass
