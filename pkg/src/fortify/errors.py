"""Exception hierarchy shared by every module of the package."""


class FortifyError(Exception):
    """Base class for all package errors."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "type": type(self).__name__, "message": str(self)}


class RoleError(FortifyError, KeyError):
    kind = "role"

    def __str__(self):
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class ParseError(FortifyError, ValueError):
    kind = "parse"

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(FortifyError, ValueError):
    kind = "domain"


class ProxyIndexError(FortifyError, IndexError):
    kind = "index"


class ShapeError(FortifyError, ValueError):
    kind = "shape"


class ConstraintError(FortifyError, ValueError):
    kind = "constraint"


class SupportError(FortifyError, ValueError):
    kind = "support"


class AbsoluteContinuityError(SupportError):
    kind = "absolute_continuity"


class BasisDeficiencyError(FortifyError, ValueError):
    kind = "basis_deficiency"


class IdentificationError(FortifyError, ArithmeticError):
    kind = "identification"

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class NonConvergenceError(FortifyError, RuntimeError):
    kind = "non_convergence"

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class PropensityFitError(FortifyError, RuntimeError):
    kind = "propensity_fit"


class InferenceError(FortifyError, RuntimeError):
    kind = "inference"


class ConfigError(FortifyError, ValueError):
    kind = "config"
