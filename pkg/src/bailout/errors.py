"""Exception and warning types shared across the package.

Every exception carries a machine-readable ``code`` so the command-line
front-end can map it to an exit status and record it in ``summary.json``.
"""


class BailoutError(Exception):
    code = "BAILOUT_ERROR"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context


class ValidationError(BailoutError):
    code = "VALIDATION_FAILED"

    def __init__(self, violations, message=None):
        self.violations = list(violations)
        if message is None:
            message = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(message)


class ConfigError(BailoutError):
    code = "CONFIG_ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class BatchTooLarge(BailoutError):
    code = "OUT_OF_MEMORY"


class ZeroBarrierUnboundedVariation(BailoutError):
    code = "ZERO_BARRIER_UNBOUNDED_VARIATION"


class NoUpperBracket(BailoutError):
    code = "NO_UPPER_BRACKET"


class NoRoot(BailoutError):
    code = "NO_ROOT"


class QuadratureFailure(BailoutError):
    code = "QUADRATURE_FAILURE"


class SingularBVP(BailoutError):
    code = "SINGULAR_BVP"


class ClassDViolation(BailoutError):
    code = "CLASS_D_VIOLATION"


class MaxIterExceeded(BailoutError):
    code = "MAX_ITER_EXCEEDED"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class HorizonTooShortWarning(UserWarning):
    """Too many paths are still alive when the simulation horizon ends."""

    code = "HORIZON_TOO_SHORT"
