"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes of two objects do not agree."""


class CoverageError(ValueError):
    """A state-action cell required by a lookup-table fit is missing from the data."""


class InfiniteDivergenceError(ValueError):
    """KL(p || q) is infinite because q puts zero mass where p does not."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-convergence, divergence, singular system)."""


class ConvergenceError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class InfeasibleError(NumericalError):
    pass
