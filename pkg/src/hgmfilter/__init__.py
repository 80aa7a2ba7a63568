"""Gaussian-assumed Bayesian filtering via the holonomic gradient method."""

from .errors import HGMError
from .ratfun import Polynomial, RationalFunction, RatMatrix, parse_expression

__version__ = "0.1.0"

__all__ = ["HGMError", "Polynomial", "RationalFunction", "RatMatrix", "parse_expression"]
