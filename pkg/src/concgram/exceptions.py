"""Exception hierarchy shared by every module of the package."""


class ConcGramError(Exception):
    """Base class for all package errors."""


class ContractError(ConcGramError, ValueError):
    """An input violates the documented preconditions of an operation."""


class ConvergenceError(ConcGramError, RuntimeError):
    """An iterative routine hit its iteration budget.

    ``last`` holds whatever the routine had computed when it stopped and
    ``history`` the residual sequence, when one was tracked.
    """

    def __init__(self, message, last=None, history=None):
        super().__init__(message)
        self.last = last
        self.history = list(history) if history is not None else []


class FixedPointError(ConvergenceError):
    """The deterministic-equivalent fixed point did not converge."""


class PartialResultError(ConcGramError, RuntimeError):
    """Some points of a batched computation failed.

    ``failed`` lists the offending inputs and ``partial`` carries the result
    computed for the remaining ones.
    """

    def __init__(self, message, failed, partial=None):
        super().__init__(message)
        self.failed = list(failed)
        self.partial = partial


class InvalidMomentError(ContractError):
    """A second-moment matrix is not compatible with its mean."""


class EstimationError(ContractError):
    """Moments cannot be estimated from the given sample."""


class StructureError(ContractError):
    """Network layers have incompatible shapes."""


class InvalidContourError(ContractError):
    """An integration contour crosses the support of the spectral density."""


class ConfigError(ConcGramError, ValueError):
    """A run configuration is malformed or fails schema validation."""
