"""Exception types raised by the solver modules."""


class LpsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LpsError):
    """Invalid geometry, discretization or benchmark configuration."""


class FrameDegenerate(LpsError):
    """The intact-bond first moment vanishes, so no normal can be estimated."""


class WeightsSingular(LpsError):
    """Quadrature constraints cannot be met on a point's stencil."""

    def __init__(self, index, residual=None):
        self.index = index
        self.residual = residual
        msg = f"quadrature weights singular at point {index}"
        if residual is not None:
            msg += f" (relative residual {residual:.3e})"
        super().__init__(msg)


class NonIntegrable(LpsError):
    """Requested moment diverges against the 1/|y|^3 singularity."""


class SolveFailed(LpsError):
    """Sparse solve failed or missed the residual tolerance."""


class CriterionInvalid(LpsError):
    """Critical stretch radicand is not positive."""


class SubiterationDiverged(LpsError):
    """Bond-breaking subiterations did not settle within the cap."""
