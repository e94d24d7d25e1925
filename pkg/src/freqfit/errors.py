"""Exception hierarchy shared by all freqfit modules."""

from __future__ import annotations


class FreqFitError(Exception):
    """Base class for every error raised by freqfit."""


class ModelError(FreqFitError, ValueError):
    """Invalid pencil, box, builder input or problem definition."""


class MatrixFileError(ModelError):
    """A Matrix Market file or manifest could not be used.

    ``path`` names the offending file; ``kind`` is one of ``"unreadable"``,
    ``"format"``, ``"dimension"`` or ``"asymmetric"``.
    """

    def __init__(self, message: str, path=None, kind: str = "format"):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path
        self.kind = kind


class NotPositiveDefinite(FreqFitError):
    """K(x) or M(x) failed a positive-definite factorization."""

    def __init__(self, message: str, x=None):
        super().__init__(message)
        self.x = x


class ConvergenceError(FreqFitError):
    """An iterative solver ran out of restarts or iterations."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class SingularScaling(FreqFitError):
    """A zero frequency or zero target made a relative scaling undefined."""


class InfeasibleProblem(FreqFitError):
    """No subproblem of a global search produced a usable minimum."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class ConfigError(FreqFitError):
    """A run configuration could not be validated."""
