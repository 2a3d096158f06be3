"""Stable Lagrangian neural networks: jets, regularized training and evaluation."""
from .errors import (ConfigError, DomainViolation, LNNError, SingularMassMatrix,
                     UnrecoverableDivergence)

__version__ = "0.1.0"
__all__ = ["ConfigError", "DomainViolation", "LNNError", "SingularMassMatrix",
           "UnrecoverableDivergence", "__version__"]
