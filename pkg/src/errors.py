"""
Exceptions raised by the library.

Validation problems derive from ValueError; numerical failures derive from
numpy's LinAlgError or RuntimeError. The CLI maps the first family to exit
status 2 and the second to exit status 3.
"""

from typing import Iterable, Optional, Tuple

from numpy.linalg import LinAlgError


class ShapeError(ValueError):
    """Input array has the wrong shape or is not symmetric."""


class GraphValidationError(ValueError):
    """Graph description is malformed."""


class NotChordalError(ValueError):
    """A chordal graph was required."""

    def __init__(self, certificate: int):
        self.certificate = certificate
        super().__init__(
            f"Graph is not chordal: fill-in required at vertex {certificate + 1}"
        )


class NotNestedError(ValueError):
    """The null graph is not contained in the alternative graph."""

    def __init__(self, offending_edges: Iterable[Tuple[int, int]], message: Optional[str] = None):
        self.offending_edges = tuple(offending_edges)
        if message is None:
            shown = ", ".join(f"({i + 1},{j + 1})" for i, j in self.offending_edges[:10])
            more = "" if len(self.offending_edges) <= 10 else f" and {len(self.offending_edges) - 10} more"
            message = f"Null graph is not nested in the alternative: edges {shown}{more} missing from the alternative"
        super().__init__(message)


class NotPositiveDefiniteError(LinAlgError):
    """Cholesky factorization failed; `pivot` is the 1-based failing pivot."""

    def __init__(self, pivot: int, context: str = "matrix"):
        self.pivot = pivot
        self.context = context
        super().__init__(f"{context} is not positive definite (pivot {pivot})")


class NoCompletionError(NotPositiveDefiniteError):
    """A partial matrix on a graph has no positive definite completion.

    `trace` is tr(Omega M) for a positive definite Omega supported on the
    graph; a value at or below zero rules the completion out.
    """

    def __init__(self, trace: float, context: str = "partial matrix"):
        self.pivot = 0
        self.context = context
        self.trace = trace
        LinAlgError.__init__(self, f"{context} has no positive definite completion (tr(Omega M) = {trace:.3e})")


class ConvergenceError(RuntimeError):
    """An iterative fit did not reach its tolerance."""

    def __init__(self, iterations: int, residual: float, method: str = "IPS"):
        self.iterations = iterations
        self.residual = residual
        self.method = method
        super().__init__(
            f"{method} did not converge after {iterations} iterations (max residual {residual:.3e})"
        )


class DegenerateTestError(ValueError):
    """The test statistic is zero or a factor of the adjustment is not positive."""


class DomainError(ValueError):
    """A path parameter lies outside [0, t_max)."""


class UnboundedPathError(RuntimeError):
    """Positive definiteness was never lost below the search cap."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature ran out of panels before reaching its tolerance."""

    def __init__(self, achieved: float, panels: int):
        self.achieved = achieved
        self.panels = panels
        super().__init__(
            f"Quadrature did not converge: relative error {achieved:.3e} with {panels} panels"
        )


class TestStageError(RuntimeError):
    """Wraps a failure inside test_nested with the stage where it happened."""

    __test__ = False  # not a pytest test class

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
