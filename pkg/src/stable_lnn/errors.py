"""Exception types shared across the package."""


class LNNError(Exception):
    """Base class for all package errors."""


class NonFiniteJetError(LNNError, FloatingPointError):
    """A jet primitive produced NaN or Inf.

    ``index`` is the position of the offending primitive on the active tape
    (or ``None`` when no tape was recording); ``kind`` names the primitive.
    """

    def __init__(self, kind, index=None):
        self.kind = kind
        self.index = index
        where = f" at tape index {index}" if index is not None else ""
        super().__init__(f"non-finite result from jet primitive '{kind}'{where}")


class JetDomainError(LNNError, ValueError):
    """A jet primitive was evaluated outside its domain (log/sqrt/div)."""


class SingularMassMatrix(LNNError, ArithmeticError):
    """The velocity Hessian is (numerically) not invertible."""


class DomainViolation(LNNError, ValueError):
    """A state lies too close to a coordinate singularity of a system."""


class StepUnderflow(LNNError, RuntimeError):
    """Adaptive step size collapsed below the allowed minimum."""


class UnrecoverableDivergence(LNNError, RuntimeError):
    """Training produced too many consecutive non-finite steps."""


class ConfigError(LNNError, ValueError):
    """Invalid experiment configuration."""
