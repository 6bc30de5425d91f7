"""Exception types raised across the package."""


class PerfolabError(Exception):
    """Base class for all package errors."""


class GridCoverageFailure(PerfolabError):
    pass


class DegenerateCell(PerfolabError):
    pass


class PerforationTooLarge(PerfolabError):
    """Hole radius too large for its cell at this eps.

    ``sites`` lists the offending site indices.
    """

    def __init__(self, message, sites=()):
        super().__init__(message)
        self.sites = list(sites)


class InvalidExponent(PerfolabError):
    pass


class MeshQualityFailure(PerfolabError):
    pass


class HoleResolutionFailure(PerfolabError):
    pass


class TagMismatch(PerfolabError):
    pass


class EmptyFreeSet(PerfolabError):
    pass


class ZeroDenominator(PerfolabError):
    pass


class IncompatibleMeshes(PerfolabError):
    pass


class FactorizationFailure(PerfolabError):
    pass


class ConvergenceFailure(PerfolabError):
    def __init__(self, message, k_achieved=0):
        super().__init__(message)
        self.k_achieved = k_achieved


class SizeExceeded(PerfolabError):
    pass


class SupportOverflow(PerfolabError):
    pass


class TubeOverlap(PerfolabError):
    pass
