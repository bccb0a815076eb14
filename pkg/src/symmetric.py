"""
Symmetric-matrix kernels.

Half-vectorization, duplication weights, Isserlis matrices and
log-determinants. Symmetric matrices are plain 2-D numpy arrays and
half-vectors are 1-D arrays; the half-vector ordering is the lower
triangle stacked column by column, (1,1), (2,1), ..., (q,1), (2,2), ...,
and every edge list in the package follows it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, lapack

from .errors import NotPositiveDefiniteError, ShapeError

if TYPE_CHECKING:
    from .graphs import ChordalDecomposition, Graph

LN2 = math.log(2.0)


@dataclass(frozen=True)
class IsserlisBlock:
    """Rows and columns of an Isserlis matrix selected by an edge list."""

    edges: Tuple[Tuple[int, int], ...]
    matrix: np.ndarray


def _square(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {arr.shape}")
    return arr


def as_symmetric(a, name: str = "matrix") -> np.ndarray:
    """Return `a` as a float array, rejecting non-square or asymmetric input."""
    arr = _square(a, name)
    if not np.array_equal(arr, arr.T):
        raise ShapeError(f"{name} is not symmetric")
    return arr


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


@lru_cache(maxsize=None)
def vech_indices(q: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column indices (row >= column) in half-vector order."""
    cols, rows = np.triu_indices(q)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def order_from_length(length: int) -> int:
    """Matrix order q for a half-vector of length q(q+1)/2."""
    disc = 8 * length + 1
    root = math.isqrt(disc)
    if length < 1 or root * root != disc:
        raise ShapeError(f"length {length} is not a triangular number")
    return (root - 1) // 2


def vech(a) -> np.ndarray:
    arr = as_symmetric(a)
    rows, cols = vech_indices(arr.shape[0])
    return arr[rows, cols].copy()


def unvech(v) -> np.ndarray:
    values = np.asarray(v, dtype=float)
    if values.ndim != 1:
        raise ShapeError(f"half-vector must be one-dimensional, got shape {values.shape}")
    q = order_from_length(values.size)
    rows, cols = vech_indices(q)
    out = np.zeros((q, q))
    out[rows, cols] = values
    out[cols, rows] = values
    return out


def j_weights(q: int) -> np.ndarray:
    """Diagonal of J = G'G: 1 at diagonal positions, 2 elsewhere."""
    if q < 1:
        raise ShapeError(f"order must be at least 1, got {q}")
    rows, cols = vech_indices(q)
    return np.where(rows == cols, 1.0, 2.0)


def cholesky_lower(a, context: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; the factorization doubles as the PD test."""
    arr = _square(a, context)
    if arr.shape[0] == 0:
        return arr.copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{context} has non-finite entries")
    factor, info = lapack.dpotrf(arr, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(int(info), context)
    if info < 0:
        raise ValueError(f"illegal argument {-info} passed to dpotrf")
    return factor


def logdet_pd(a, context: str = "matrix") -> float:
    """Natural log-determinant of a positive definite matrix."""
    factor = cholesky_lower(a, context)
    return float(2.0 * np.sum(np.log(np.diagonal(factor))))


def inv_pd(a, context: str = "matrix") -> np.ndarray:
    factor = cholesky_lower(a, context)
    inverse = cho_solve((factor, True), np.eye(factor.shape[0]))
    return symmetrize(inverse)


def isserlis_block(s, edges: Sequence[Tuple[int, int]]) -> IsserlisBlock:
    """Isserlis matrix of `s` restricted to `edges` (0-based pairs, i >= j).

    Entry (a, b) for edges (i, j) and (r, s) is s_ir s_js + s_is s_jr, the
    covariance of the sample-covariance entries under Gaussianity.
    """
    arr = _square(s)
    q = arr.shape[0]
    edge_tuple = tuple((int(i), int(j)) for i, j in edges)
    for i, j in edge_tuple:
        if not (0 <= j <= i < q):
            raise IndexError(f"edge ({i + 1},{j + 1}) is out of range for order {q}")
    if not edge_tuple:
        return IsserlisBlock(edges=(), matrix=np.zeros((0, 0)))
    ii = np.fromiter((e[0] for e in edge_tuple), dtype=np.intp, count=len(edge_tuple))
    jj = np.fromiter((e[1] for e in edge_tuple), dtype=np.intp, count=len(edge_tuple))
    matrix = arr[np.ix_(ii, ii)] * arr[np.ix_(jj, jj)] + arr[np.ix_(ii, jj)] * arr[np.ix_(jj, ii)]
    return IsserlisBlock(edges=edge_tuple, matrix=matrix)


def isserlis_logdet(
    a,
    graph: "Graph",
    decomp: Optional["ChordalDecomposition"] = None,
) -> float:
    """ln |Iss(a)_kk| for the edge set k of `graph`.

    With a clique/separator decomposition only clique and separator
    submatrices are factorized; without one the dense block is built. The
    two agree whenever the inverse of `a` vanishes off the graph.
    """
    arr = _square(a)
    if decomp is None:
        block = isserlis_block(arr, graph.edges)
        return logdet_pd(block.matrix, "Isserlis block")
    total = graph.q * LN2
    for clique in decomp.cliques:
        idx = np.asarray(clique)
        total += (len(clique) + 1) * logdet_pd(arr[np.ix_(idx, idx)], "clique submatrix")
    for separator in decomp.separators:
        if not separator:
            continue
        idx = np.asarray(separator)
        total -= (len(separator) + 1) * logdet_pd(arr[np.ix_(idx, idx)], "separator submatrix")
    return float(total)
