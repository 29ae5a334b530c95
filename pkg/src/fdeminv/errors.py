"""Exception hierarchy shared by the forward model, the linear algebra and the solvers."""


class FdemError(Exception):
    """Base class for every error raised by ``fdeminv``."""


class NonFinite(FdemError, ArithmeticError):
    pass


class DivisionDegenerate(FdemError, ZeroDivisionError):
    pass


class NoConvergence(FdemError, RuntimeError):
    pass


class SizeTooSmall(FdemError, ValueError):
    pass


class DimensionMismatch(FdemError, ValueError):
    pass


class BadOrder(FdemError, ValueError):
    pass


class CommonNullspace(FdemError, ValueError):
    """The stacked pair ``[A; L]`` does not have full column rank."""


class TruncationOutOfRange(FdemError, ValueError):
    pass


class LineSearchFailed(FdemError, RuntimeError):
    """No admissible damping parameter above the floor."""


class ZeroReference(FdemError, ValueError):
    pass


class SizeCap(FdemError, ValueError):
    pass


class SolverAbort(FdemError, RuntimeError):
    """Every column of an inversion failed."""
