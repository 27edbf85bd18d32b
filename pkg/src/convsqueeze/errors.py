"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, malformed or
missing data exits 2, and numerical failures (fit, solver, unreachable
compression targets) exit 3.
"""
from __future__ import annotations


class ConvSqueezeError(Exception):
    """Base class for all package errors."""


class UsageError(ConvSqueezeError):
    """Bad command-line arguments or an inconsistent flag combination."""


class DataError(ConvSqueezeError):
    """Malformed manifests, missing blobs, or invalid tensors."""


class NumericalError(ConvSqueezeError):
    """A numerical procedure failed (fit, solver divergence, bad target)."""


class PlannerError(NumericalError):
    """The rate solver did not converge; carries the last iterate."""

    def __init__(self, message: str, *, i_bar: float, iterations: int, residual: float):
        super().__init__(message)
        self.i_bar = i_bar
        self.iterations = iterations
        self.residual = residual
