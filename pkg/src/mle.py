"""
Sufficient statistics and constrained maximum-likelihood fitting.

All fitting works from the moment matrix M = unvech(u) = n/(n-1) S_sat, so
every log-likelihood and test statistic downstream carries the (n-1)
scaling of the restricted likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve

from .config import config
from .errors import ConvergenceError, NoCompletionError, NotPositiveDefiniteError, ShapeError
from .graphs import ChordalDecomposition, Graph, chordality, clique_decomposition, maximal_cliques
from .symmetric import as_symmetric, cholesky_lower, inv_pd, logdet_pd, symmetrize, unvech, vech

FIT_METHODS = ("auto", "ips")
NEWTON_MAX_STEPS = 500
QUADRATIC_REGION = 0.25


@dataclass(frozen=True)
class SuffStats:
    n: int
    q: int
    s_sat: np.ndarray
    u: np.ndarray
    ybar: Optional[np.ndarray] = None

    @property
    def moments(self) -> np.ndarray:
        """unvech(u), the (n-1)-scaled covariance estimate."""
        return unvech(self.u)


@dataclass(frozen=True)
class ExistenceVerdict:
    ok: bool
    max_clique: int
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class GgmFit:
    graph: Graph
    omega_hat: np.ndarray
    sigma_hat: np.ndarray
    loglik: float
    iterations: int
    max_residual: float
    method: str = field(default="auto")

    @property
    def sigma_k(self) -> np.ndarray:
        return self.graph.restrict(self.sigma_hat)

    @property
    def omega_k(self) -> np.ndarray:
        return self.graph.restrict(self.omega_hat)

    @property
    def logdet_omega(self) -> float:
        return logdet_pd(self.omega_hat, "fitted concentration")


def suff_stats(data) -> SuffStats:
    y = np.asarray(data, dtype=float)
    if y.ndim != 2:
        raise ShapeError(f"data must be an n x q matrix, got shape {y.shape}")
    n, q = y.shape
    if n < 2:
        raise ShapeError(f"at least two observations are needed, got {n}")
    if q < 1:
        raise ShapeError("data has no columns")
    if not np.all(np.isfinite(y)):
        raise ShapeError("data contains missing or non-finite values")
    ybar = y.mean(axis=0)
    centred = y - ybar
    s_sat = symmetrize(centred.T @ centred / n)
    return SuffStats(n=n, q=q, s_sat=s_sat, u=n / (n - 1) * vech(s_sat), ybar=ybar)


def suff_stats_from_covariance(s_sat, n: int, ybar=None) -> SuffStats:
    """SuffStats from a saturated covariance estimate (divisor n)."""
    if n < 2:
        raise ShapeError(f"at least two observations are needed, got {n}")
    s = as_symmetric(s_sat, "covariance estimate")
    mean = None if ybar is None else np.asarray(ybar, dtype=float)
    return SuffStats(n=int(n), q=s.shape[0], s_sat=s, u=n / (n - 1) * vech(s), ybar=mean)


def existence_check(g: Graph, n: int) -> ExistenceVerdict:
    """MLE existence: n must exceed the largest clique of g.

    Non-chordal graphs are judged by their own maximal cliques; the fit is
    the authoritative signal there.
    """
    largest = max(len(c) for c in maximal_cliques(g))
    if n > largest:
        return ExistenceVerdict(ok=True, max_clique=largest)
    return ExistenceVerdict(
        ok=False,
        max_clique=largest,
        reason=f"n={n} does not exceed the maximal clique size {largest}",
    )


def _relative_residual(sigma: np.ndarray, moments: np.ndarray, g: Graph) -> float:
    fitted = g.restrict(sigma)
    target = g.restrict(moments)
    return float(np.max(np.abs(fitted - target) / np.maximum(1.0, np.abs(target))))


def _pad(block: np.ndarray, idx: Sequence[int], q: int) -> np.ndarray:
    out = np.zeros((q, q))
    ix = np.asarray(idx)
    out[np.ix_(ix, ix)] = block
    return out


def decomposable_estimate(moments: np.ndarray, decomp: ChordalDecomposition) -> np.ndarray:
    """Closed-form concentration for a chordal graph (clique/separator assembly)."""
    q = moments.shape[0]
    omega = np.zeros((q, q))
    for clique in decomp.cliques:
        idx = np.asarray(clique)
        omega += _pad(inv_pd(moments[np.ix_(idx, idx)], "clique submatrix"), clique, q)
    for separator in decomp.separators:
        if not separator:
            continue
        idx = np.asarray(separator)
        omega -= _pad(inv_pd(moments[np.ix_(idx, idx)], "separator submatrix"), separator, q)
    return symmetrize(omega)


def _ips(
    moments: np.ndarray,
    g: Graph,
    cliques: List[Tuple[int, ...]],
    omega: np.ndarray,
    tol: float,
    max_sweeps: int,
) -> Tuple[np.ndarray, np.ndarray, int, float]:
    mask = g.zero_mask()
    members = [np.asarray(c) for c in cliques]
    blocks = [np.ix_(idx, idx) for idx in members]
    targets = [inv_pd(moments[block], "clique submatrix") for block in blocks]
    sigma = inv_pd(omega, "concentration iterate")
    residual = _relative_residual(sigma, moments, g)
    sweeps = 0
    while residual > tol:
        if sweeps >= max_sweeps:
            raise ConvergenceError(sweeps, residual)
        for idx, block, target in zip(members, blocks, targets):
            fitted = inv_pd(sigma[block], "fitted clique covariance")
            omega[block] += target - fitted
            # rank-|C| update; afterwards sigma matches the moments on the clique
            side = sigma[:, idx] @ fitted
            sigma = symmetrize(sigma - side @ (sigma[block] - moments[block]) @ side.T)
        omega = symmetrize(omega)
        omega[mask] = 0.0
        sigma = inv_pd(omega, "concentration iterate")
        sweeps += 1
        residual = _relative_residual(sigma, moments, g)
    return omega, sigma, sweeps, residual


@dataclass(frozen=True)
class Completion:
    """Maximum-determinant completion of a partial covariance on a graph."""

    sigma: np.ndarray
    omega: np.ndarray
    logdet_sigma: float
    iss_logdet: float
    steps: int
    decrement: float


def _newton_start(moments: np.ndarray, g: Graph, omega_start) -> np.ndarray:
    if omega_start is not None:
        omega = np.array(omega_start, dtype=float)
        omega[g.zero_mask()] = 0.0
        return omega
    diag = np.diagonal(moments)
    if np.any(diag <= 0):
        v = int(np.flatnonzero(diag <= 0)[0])
        raise NotPositiveDefiniteError(v + 1, f"moment matrix (variance of vertex {v + 1})")
    return np.diag(1.0 / diag)


def newton_completion(
    moments,
    g: Graph,
    omega_start=None,
    tol: Optional[float] = None,
    max_steps: int = NEWTON_MAX_STEPS,
    certify: bool = False,
) -> Completion:
    """Damped Newton on -ln|Omega| + tr(Omega M) over concentrations supported on k.

    The Hessian in the free entries of Omega is the Isserlis block of the
    current Sigma, so each step costs one p x p factorization. Damped steps
    keep the iterate positive definite. A Newton decrement below one proves
    the completion exists: with certify=True the solver stops there and the
    matrices returned are a feasible point, not the completion. Running out
    of steps raises ConvergenceError. Since every iterate is positive
    definite and supported on k, tr(Omega M) <= 0 proves there is no
    completion and raises NoCompletionError.
    """
    m = as_symmetric(moments, "moment matrix")
    if m.shape[0] != g.q:
        raise ShapeError(f"moment matrix has order {m.shape[0]}, graph has q={g.q}")
    tol = config.ips_tol if tol is None else tol
    rows, cols = g.rows, g.cols
    target = m[rows, cols]
    scale = np.maximum(1.0, np.abs(target))
    step_weights = 2.0 / g.weights
    identity = np.eye(g.q)
    # index grids of the Isserlis block s_ir s_js + s_is s_jr over edge pairs
    rr, cc, rc, cr = np.ix_(rows, rows), np.ix_(cols, cols), np.ix_(rows, cols), np.ix_(cols, rows)
    omega = _newton_start(m, g, omega_start)

    for steps in range(max_steps + 1):
        trace = float(np.sum(omega * m))
        if trace <= 0.0:
            raise NoCompletionError(trace, "moment matrix")
        factor = cholesky_lower(omega, "completion iterate")
        sigma = symmetrize(cho_solve((factor, True), identity))
        gap = target - sigma[rows, cols]
        iss = sigma[rr] * sigma[cc] + sigma[rc] * sigma[cr]
        iss_factor = cholesky_lower(iss, "Isserlis block of the completion")
        solved = cho_solve((iss_factor, True), gap)
        decrement = math.sqrt(max(0.0, 2.0 * float(gap @ solved)))
        residual = float(np.max(np.abs(gap) / scale))
        if residual <= tol or (certify and decrement < 1.0):
            return Completion(
                sigma=sigma,
                omega=omega,
                logdet_sigma=float(-2.0 * np.sum(np.log(np.diagonal(factor)))),
                iss_logdet=float(2.0 * np.sum(np.log(np.diagonal(iss_factor)))),
                steps=steps,
                decrement=decrement,
            )
        if steps == max_steps:
            break
        damping = 1.0 if decrement < QUADRATIC_REGION else 1.0 / (1.0 + decrement)
        omega = omega.copy()
        omega[rows, cols] -= damping * step_weights * solved
        omega[cols, rows] = omega[rows, cols]
    raise ConvergenceError(max_steps, residual, "Newton completion")


def _complete(
    moments: np.ndarray,
    g: Graph,
    method: str,
    tol: float,
    max_sweeps: int,
) -> Tuple[np.ndarray, np.ndarray, int, float]:
    if g.is_saturated:
        omega = inv_pd(moments, "saturated moment matrix")
        return omega, moments.copy(), 0, 0.0

    diag = np.diagonal(moments).copy()
    if np.any(diag <= 0):
        v = int(np.flatnonzero(diag <= 0)[0])
        raise NotPositiveDefiniteError(v + 1, f"moment matrix (variance of vertex {v + 1})")
    if not g.off_diagonal:
        return np.diag(1.0 / diag), np.diag(diag), 0, 0.0

    if method == "auto":
        if not chordality(g).is_chordal:
            for clique in maximal_cliques(g):
                idx = np.asarray(clique)
                cholesky_lower(moments[np.ix_(idx, idx)], "clique submatrix")
            result = newton_completion(moments, g, tol=tol, max_steps=max_sweeps)
            return result.omega, result.sigma, result.steps, _relative_residual(result.sigma, moments, g)
        decomp = clique_decomposition(g)
        omega = decomposable_estimate(moments, decomp)
        omega[g.zero_mask()] = 0.0
        cliques = list(decomp.cliques)
    else:
        omega = np.diag(1.0 / diag)
        cliques = maximal_cliques(g)
    omega, sigma, sweeps, residual = _ips(moments, g, cliques, omega, tol, max_sweeps)
    return omega, sigma, sweeps, residual


def complete_covariance(
    moments,
    g: Graph,
    tol: Optional[float] = None,
    max_sweeps: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Covariance matching `moments` on k whose inverse vanishes on h.

    Returns (Sigma, Omega).
    """
    m = as_symmetric(moments, "moment matrix")
    if m.shape[0] != g.q:
        raise ShapeError(f"moment matrix has order {m.shape[0]}, graph has q={g.q}")
    omega, sigma, _, _ = _complete(
        m,
        g,
        "auto",
        config.ips_tol if tol is None else tol,
        config.ips_max_sweeps if max_sweeps is None else max_sweeps,
    )
    return sigma, omega


def fit_ggm(
    stats: SuffStats,
    g: Graph,
    method: str = "auto",
    tol: Optional[float] = None,
    max_sweeps: Optional[int] = None,
) -> GgmFit:
    """Constrained MLE of the concentration matrix under the zeros of g.

    method="auto" starts chordal graphs from the closed-form estimate, which
    IPS then only has to verify, and solves non-chordal graphs with
    newton_completion (iterations then counts Newton steps). method="ips"
    always iterates from the independence fit.
    """
    if method not in FIT_METHODS:
        raise ValueError(f"unknown fit method '{method}', expected one of {FIT_METHODS}")
    if stats.q != g.q:
        raise ShapeError(f"statistics have q={stats.q}, graph has q={g.q}")
    omega, sigma, sweeps, residual = _complete(
        stats.moments,
        g,
        method,
        config.ips_tol if tol is None else tol,
        config.ips_max_sweeps if max_sweeps is None else max_sweeps,
    )
    return GgmFit(
        graph=g,
        omega_hat=omega,
        sigma_hat=sigma,
        loglik=reml_loglik(omega, stats, g),
        iterations=sweeps,
        max_residual=residual,
        method=method,
    )


def reml_loglik(omega, stats: SuffStats, graph: Optional[Graph] = None) -> float:
    """((n-1)/2) (ln|Omega| - omega' J u), the sum running over k."""
    om = as_symmetric(omega, "concentration")
    if om.shape[0] != stats.q:
        raise ShapeError(f"concentration has order {om.shape[0]}, statistics have q={stats.q}")
    logdet = logdet_pd(om, "concentration")
    moments = stats.moments
    if graph is None:
        trace = float(np.sum(om * moments))
    else:
        if np.any(om[graph.zero_mask()] != 0.0):
            raise ShapeError("concentration is not zero off the graph")
        trace = float(np.sum(graph.weights * graph.restrict(om) * graph.restrict(moments)))
    return 0.5 * (stats.n - 1) * (logdet - trace)


def full_loglik(mu, omega, data) -> float:
    """Gaussian log-likelihood in (mu, Omega), dropping the 2*pi constant."""
    y = np.asarray(data, dtype=float)
    om = as_symmetric(omega, "concentration")
    if y.ndim != 2 or y.shape[1] != om.shape[0]:
        raise ShapeError(f"data shape {y.shape} does not match concentration order {om.shape[0]}")
    centred = y - np.asarray(mu, dtype=float)
    quad = float(np.einsum("ij,jk,ik->", centred, om, centred))
    return 0.5 * y.shape[0] * logdet_pd(om, "concentration") - 0.5 * quad
