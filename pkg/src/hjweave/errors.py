"""Exception taxonomy shared by all hjweave modules.

Each error class maps to a distinct CLI exit code where the command-line
runner needs one (config 2, convergence 3, stability 4, search box 5);
everything else exits 1.
"""


class HjweaveError(Exception):
    """Base class for all library errors."""


class InvalidMatrixError(HjweaveError):
    """Coupling matrix is not square or contains non-finite entries."""


class DomainError(HjweaveError):
    """Scalar argument outside its admissible domain (t <= 0, kappa >= 1, ...)."""


class RangeError(HjweaveError):
    """Result would overflow double precision (extreme ||A||*tau)."""


class PreconditionError(HjweaveError):
    """Operation called outside its certified precondition."""


class InvalidInputError(HjweaveError):
    """Dimension or shape mismatch between operands."""


class ConvergenceError(HjweaveError):
    """Iterative solver failed to reach its tolerance.

    Carries the last iterate and diagnostics so callers can fall back.
    """

    def __init__(self, message, last_iterate=None, diagnostics=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics or {}


class AccuracyError(HjweaveError):
    """Integrator error estimate above tolerance after maximum refinement."""


class SingularityError(HjweaveError):
    """Velocity Hessian numerically singular along a flow."""


class InvalidInitializationError(HjweaveError):
    """Characteristic bundle initial momenta are mutually inconsistent."""


class StabilityError(HjweaveError):
    """Explicit scheme violated its stability bound at runtime."""


class SearchBoxError(HjweaveError):
    """Outer minimization argmin stuck on the (already widened) box boundary."""


class InvalidComparisonError(HjweaveError):
    """Value fields live on different grids or times."""


class ConfigError(HjweaveError):
    """Problem configuration failed schema validation."""


EXIT_CODES = {
    ConfigError: 2,
    ConvergenceError: 3,
    StabilityError: 4,
    SearchBoxError: 5,
}


def exit_code_for(exc: BaseException) -> int:
    """Exit code for an exception, walking the class hierarchy."""
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1
