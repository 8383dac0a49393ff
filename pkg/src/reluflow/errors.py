"""Exception hierarchy shared across the package."""


class ReluFlowError(Exception):
    """Base class for all package errors."""


class EvaluationError(ReluFlowError, ValueError):
    """A density returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class BudgetError(ReluFlowError):
    """A switch budget was exceeded or could not be represented."""

    def __init__(self, message, achieved_tv=None, switches=None, budget=None):
        super().__init__(message)
        self.achieved_tv = achieved_tv
        self.switches = switches
        self.budget = budget


class SearchExhaustedError(ReluFlowError):
    """An iterative search hit its iteration cap."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ComplexityError(ReluFlowError):
    """Piece count of a piecewise density exceeded the configured cap."""

    def __init__(self, message, count):
        super().__init__(message)
        self.count = count


class SpectralError(ReluFlowError):
    """A covariance matrix was not symmetric positive definite."""


class CertificationError(ReluFlowError):
    """Tail domination could not be certified."""

    def __init__(self, message, worst_ratio=None, radius=None):
        super().__init__(message)
        self.worst_ratio = worst_ratio
        self.radius = radius


class UnsupportedDimensionError(ReluFlowError, ValueError):
    pass


class AbsoluteContinuityError(ReluFlowError, ValueError):
    """The reference density vanishes where the other one does not."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class DistinctnessError(ReluFlowError, ValueError):
    pass


class SeparationError(ReluFlowError):
    pass


class RankError(ReluFlowError):
    def __init__(self, message, s=None, singular_values=None):
        super().__init__(message)
        self.s = s
        self.singular_values = singular_values


class SynthesisError(ReluFlowError):
    """Structured synthesis failure; ``details`` is JSON-serializable."""

    def __init__(self, kind, message, details=None):
        super().__init__(message)
        self.kind = kind
        self.details = dict(details or {})

    def to_dict(self):
        return {"kind": self.kind, "message": str(self), "details": self.details}
