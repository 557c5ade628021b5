"""Exception types shared across the package."""


class MfalError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(MfalError):
    pass


class NotPositiveDefinite(MfalError):
    pass


class SolverSingular(MfalError):
    pass


class NonlinearSolveFailed(MfalError):
    pass


class OutOfDomain(MfalError):
    pass


class UnknownFidelity(MfalError):
    pass


class NotFitted(MfalError):
    pass


class NonFiniteLoss(MfalError):
    pass


class NegativeMI(MfalError):
    pass


class DegenerateExpansion(MfalError):
    pass


class ZeroNormalizer(MfalError):
    pass


class MissingArtifacts(MfalError):
    pass
