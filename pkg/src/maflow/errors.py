"""Exception hierarchy shared by all maflow modules."""


class MAFlowError(Exception):
    """Base class for every error raised by this package."""


# grid
class BadSpacing(MAFlowError, ValueError):
    pass


class EmptyInterior(MAFlowError):
    pass


class NoIntersection(MAFlowError):
    pass


# fields
class IndexOutOfRange(MAFlowError, IndexError):
    pass


class TooFewSlices(MAFlowError, ValueError):
    pass


class GridMismatch(MAFlowError, ValueError):
    pass


class EmptyFamily(MAFlowError, ValueError):
    pass


# stencil
class UnresolvableArm(MAFlowError):
    pass


# checkers
class NonpositiveA(MAFlowError, ValueError):
    pass


class NotParabolicPotential(MAFlowError):
    pass


class DegenerateFit(MAFlowError):
    pass


class NotSemiConcave(MAFlowError):
    pass


# regularize
class KernelOutOfRange(UserWarning):
    """Warning: the mollifier support left [0, T] and time values were clamped."""


# envelope / solver
class MaxIterExceeded(MAFlowError):
    pass


class InnerDivergence(MAFlowError):
    pass


class DegenerateG(MAFlowError, ValueError):
    pass


# expressions
class ExprSyntaxError(MAFlowError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifier(MAFlowError, ValueError):
    pass


class UnboundVariable(MAFlowError, KeyError):
    pass


class DomainError(MAFlowError, ValueError):
    pass


class UnknownCase(MAFlowError, KeyError):
    pass
