"""
Test statistics for a nested pair of Gaussian graphical models.

Four answers to the same question, ordered by refinement: the likelihood
ratio w with its chi-square tail, Skovgaard's w* and w** built from the
adjustment gamma, and the directional p-value obtained by integrating the
exact density of the sufficient statistic along the line from the null
expectation through the observed value.

Points on that line are parameterized by t. The constrained maximizer at
t has covariance t*Sigma_k + (1-t)*Sigma_0 on the alternative edge set and
an inverse that vanishes off it; `DirectionalPath.sigma_at` gives the
linear combination and the density uses its completion. For chordal
alternatives only clique and separator blocks of the linear combination
are ever factorized.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve
from scipy.stats import chi2

from .errors import (
    ConvergenceError,
    DegenerateTestError,
    DomainError,
    NotNestedError,
    NotPositiveDefiniteError,
    TestStageError,
    UnboundedPathError,
)
from .graphs import ChordalDecomposition, Graph, NestedPair, decomposition_or_none, maximal_cliques
from .mle import (
    Completion,
    GgmFit,
    SuffStats,
    decomposable_estimate,
    existence_check,
    fit_ggm,
    newton_completion,
)
from .quadrature import QuadratureConfig, QuadratureDiagnostics, integrate_split
from .symmetric import LN2, cholesky_lower, inv_pd, isserlis_block, isserlis_logdet, logdet_pd

ENDPOINT_SHRINK = 1e-8
ENDPOINT_MASS_LIMIT = 1e-10
TMAX_CAP = 1e8
TMAX_REL_WIDTH = 1e-10

STAGES = ("existence", "fit_null", "fit_alt", "lrt", "skovgaard", "tmax", "directional")


# ---------------------------------------------------------------------------
# Likelihood ratio and Skovgaard
# ---------------------------------------------------------------------------


def _check_nested(fit_alt: GgmFit, fit_null: GgmFit) -> None:
    if not fit_alt.graph.contains(fit_null.graph):
        missing = sorted(fit_null.graph.edge_set - fit_alt.graph.edge_set)
        raise NotNestedError(missing)


def lrt_statistic(fit_alt: GgmFit, fit_null: GgmFit, n: int) -> float:
    """w = (n-1) (ln|Omega_k| - ln|Omega_0|)."""
    _check_nested(fit_alt, fit_null)
    ld_alt = fit_alt.logdet_omega
    ld_null = fit_null.logdet_omega
    w = (n - 1) * (ld_alt - ld_null)
    if abs(w) <= 1e-10 * (n - 1) * max(1.0, abs(ld_alt)):
        return 0.0
    return float(w)


def chisq_sf(x: float, d: int) -> float:
    if d < 1:
        raise ValueError(f"degrees of freedom must be at least 1, got {d}")
    if x < 0 or math.isnan(x):
        raise ValueError(f"chi-square argument must be non-negative, got {x}")
    if x == 0:
        return 1.0
    return float(chi2.sf(x, d))


@dataclass(frozen=True)
class SkovgaardTerms:
    """Signed pieces of ln gamma, kept for diagnostics and tests."""

    quadratic_form: float
    inner_product: float
    iss_logdet_null: float
    iss_logdet_alt: float


def skovgaard_terms(fit_alt: GgmFit, fit_null: GgmFit, decomp: Optional[ChordalDecomposition] = None) -> SkovgaardTerms:
    g = fit_alt.graph
    delta = g.restrict(fit_null.sigma_hat) - fit_alt.sigma_k
    iss_null = isserlis_block(fit_null.sigma_hat, g.edges).matrix
    factor = cholesky_lower(iss_null, "Isserlis block at the null fit")
    quadratic = float(delta @ cho_solve((factor, True), delta))
    inner = float(np.sum(g.weights * (fit_alt.omega_k - g.restrict(fit_null.omega_hat)) * delta))
    return SkovgaardTerms(
        quadratic_form=quadratic,
        inner_product=inner,
        iss_logdet_null=float(2.0 * np.sum(np.log(np.diagonal(factor)))),
        iss_logdet_alt=isserlis_logdet(fit_alt.sigma_hat, g, decomp),
    )


def skovgaard_log_gamma(
    fit_alt: GgmFit,
    fit_null: GgmFit,
    stats: SuffStats,
    d: int,
    decomp: Optional[ChordalDecomposition] = None,
) -> float:
    """ln gamma for the nested pair, assembled in log space.

    gamma = 2 Q^(d/2) / ((w/(n-1))^(d/2-1) I) * (|Iss_0| / |Iss_k|)^(1/2), with
    Q the Isserlis quadratic form of the covariance shift at the null fit and
    I the J-weighted inner product of the concentration and covariance shifts.
    """
    _check_nested(fit_alt, fit_null)
    if d < 1:
        raise DegenerateTestError(f"interest dimension must be at least 1, got {d}")
    n = stats.n
    w = lrt_statistic(fit_alt, fit_null, n)
    if w <= 0:
        raise DegenerateTestError(f"likelihood ratio statistic is {w}; gamma is undefined")
    terms = skovgaard_terms(fit_alt, fit_null, decomp)
    if terms.quadratic_form <= 0:
        raise DegenerateTestError(f"Isserlis quadratic form is not positive ({terms.quadratic_form:.3e})")
    if terms.inner_product <= 0:
        raise DegenerateTestError(f"concentration/covariance inner product is not positive ({terms.inner_product:.3e})")
    return float(
        LN2
        + 0.5 * d * math.log(terms.quadratic_form)
        - (0.5 * d - 1.0) * math.log(w / (n - 1))
        - math.log(terms.inner_product)
        + 0.5 * (terms.iss_logdet_null - terms.iss_logdet_alt)
    )


def skovgaard_statistics(w: float, log_gamma: float) -> Tuple[float, float]:
    """(w*, w**) = (w (1 - ln gamma / w)^2, w - 2 ln gamma)."""
    if w <= 0:
        raise DegenerateTestError(f"likelihood ratio statistic must be positive, got {w}")
    return w * (1.0 - log_gamma / w) ** 2, w - 2.0 * log_gamma


# ---------------------------------------------------------------------------
# The path and its density
# ---------------------------------------------------------------------------


def _clique_blocks_pd(a: np.ndarray, cliques: Sequence[Tuple[int, ...]]) -> bool:
    try:
        for clique in cliques:
            idx = np.asarray(clique)
            cholesky_lower(a[np.ix_(idx, idx)])
    except NotPositiveDefiniteError:
        return False
    return True


class _CompletionCheck:
    """Existence of the completion on a non-chordal graph, warm-started from the last success."""

    def __init__(self, graph: Graph, omega_start: Optional[np.ndarray]):
        self.graph = graph
        self.cliques = maximal_cliques(graph)
        self.omega = omega_start

    def __call__(self, a: np.ndarray) -> bool:
        if not _clique_blocks_pd(a, self.cliques):
            return False
        try:
            cholesky_lower(a)
            return True
        except NotPositiveDefiniteError:
            pass
        try:
            found = newton_completion(a, self.graph, self.omega, certify=True)
        except (NotPositiveDefiniteError, ConvergenceError):
            return False
        self.omega = found.omega
        return True


def _masked_inverse(sigma: np.ndarray, graph: Graph) -> Optional[np.ndarray]:
    try:
        omega = inv_pd(sigma, "alternative covariance")
        omega[graph.zero_mask()] = 0.0
        cholesky_lower(omega)
    except NotPositiveDefiniteError:
        return None
    return omega


def find_tmax(
    sigma_alt,
    sigma_null,
    graph: Optional[Graph] = None,
    decomp: Optional[ChordalDecomposition] = None,
    cap: float = TMAX_CAP,
    rel_width: float = TMAX_REL_WIDTH,
    omega_start=None,
) -> float:
    """First t >= 1 at which t*sigma_alt + (1-t)*sigma_null stops being usable.

    Without a graph "usable" means positive definite. With one it means the
    completion on the graph exists: every clique block is positive definite
    for chordal graphs. For other graphs the combination must pass the
    clique test and then either be positive definite itself or have a
    Newton decrement below one somewhere on the way to its completion;
    tr(Omega A) <= 0 at a Newton iterate, or running out of steps, counts
    as unusable.
    `omega_start` seeds that search; by default the inverse of sigma_alt
    restricted to the graph. Doubling from t=1 brackets the boundary,
    bisection narrows it to `rel_width`.
    """
    s_alt = np.asarray(sigma_alt, dtype=float)
    s_null = np.asarray(sigma_null, dtype=float)
    step = s_alt - s_null
    check = None
    if graph is not None and not graph.is_saturated:
        if decomp is None:
            decomp = decomposition_or_none(graph)
        if decomp is None:
            start = _masked_inverse(s_alt, graph) if omega_start is None else omega_start
            check = _CompletionCheck(graph, start)

    def usable(t: float) -> bool:
        a = s_null + t * step
        if check is not None:
            return check(a)
        if decomp is not None:
            return _clique_blocks_pd(a, decomp.cliques)
        try:
            cholesky_lower(a)
        except NotPositiveDefiniteError:
            return False
        return True

    lo, hi = 1.0, 2.0
    while usable(hi):
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            raise UnboundedPathError(f"positive definiteness is kept beyond t={cap:g}")
    while hi - lo > rel_width * hi:
        mid = 0.5 * (lo + hi)
        if usable(mid):
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class DirectionalPath:
    sigma_alt: np.ndarray
    sigma_null: np.ndarray
    t_max: float
    n: int
    graph_alt: Graph
    decomp: Optional[ChordalDecomposition] = None
    omega_alt: Optional[np.ndarray] = None
    omega_null: Optional[np.ndarray] = None
    _solved: Dict[float, Completion] = field(default_factory=dict, init=False, repr=False, compare=False)
    _solved_ts: List[float] = field(default_factory=list, init=False, repr=False, compare=False)

    @classmethod
    def from_fits(cls, fit_alt: GgmFit, fit_null: GgmFit, n: int, t_max: Optional[float] = None) -> "DirectionalPath":
        _check_nested(fit_alt, fit_null)
        graph = fit_alt.graph
        decomp = decomposition_or_none(graph)
        if t_max is None:
            t_max = find_tmax(fit_alt.sigma_hat, fit_null.sigma_hat, graph, decomp, omega_start=fit_alt.omega_hat)
        return cls(
            sigma_alt=fit_alt.sigma_hat,
            sigma_null=fit_null.sigma_hat,
            t_max=float(t_max),
            n=n,
            graph_alt=graph,
            decomp=decomp,
            omega_alt=fit_alt.omega_hat,
            omega_null=fit_null.omega_hat,
        )

    @property
    def t_end(self) -> float:
        return self.t_max * (1.0 - ENDPOINT_SHRINK)

    @property
    def is_degenerate(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.sigma_null))))
        return float(np.max(np.abs(self.sigma_alt - self.sigma_null))) <= 1e-12 * scale

    def sigma_at(self, t: float) -> np.ndarray:
        return t * self.sigma_alt + (1.0 - t) * self.sigma_null

    def check_domain(self, t) -> None:
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        bad = ts[~((ts >= 0.0) & (ts < self.t_max))]
        if bad.size:
            raise DomainError(f"t={bad[0]!r} lies outside [0, {self.t_max!r})")

    def _warm_start(self, t: float) -> Optional[np.ndarray]:
        best: Tuple[float, Optional[np.ndarray]] = (math.inf, None)
        for anchor, omega in ((0.0, self.omega_null), (1.0, self.omega_alt)):
            if omega is not None and abs(anchor - t) < best[0]:
                best = (abs(anchor - t), omega)
        pos = bisect.bisect_left(self._solved_ts, t)
        for i in (pos - 1, pos):
            if 0 <= i < len(self._solved_ts):
                s = self._solved_ts[i]
                if abs(s - t) < best[0]:
                    best = (abs(s - t), self._solved[s].omega)
        return best[1]

    def solve(self, t: float) -> Completion:
        """Completion at t on a non-chordal alternative, cached along the path."""
        t = float(t)
        cached = self._solved.get(t)
        if cached is not None:
            return cached
        result = newton_completion(self.sigma_at(t), self.graph_alt, self._warm_start(t))
        self._solved[t] = result
        bisect.insort(self._solved_ts, t)
        return result

    def completion(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """(Sigma, Omega) of the constrained maximizer at t."""
        self.check_domain(t)
        a = self.sigma_at(t)
        if self.graph_alt.is_saturated:
            return a, _inverse(a)
        if self.decomp is not None:
            omega = decomposable_estimate(a, self.decomp)
            omega[self.graph_alt.zero_mask()] = 0.0
            return _inverse(omega), omega
        solved = self.solve(t)
        return solved.sigma, solved.omega


def _inverse(a: np.ndarray) -> np.ndarray:
    return inv_pd(a, "path covariance")


def log_h(t: float, path: DirectionalPath) -> float:
    """((n-1)/2) ln|Sigma(t)| - (1/2) ln|Iss(Sigma(t))_kk|, up to a constant."""
    path.check_domain(t)
    g = path.graph_alt
    a = path.sigma_at(t)
    try:
        if g.is_saturated:
            logdet = logdet_pd(a, "path covariance")
            iss = isserlis_logdet(a, g, _single_clique(g.q))
        elif path.decomp is not None:
            logdet = _decomposable_logdet(a, path.decomp)
            iss = isserlis_logdet(a, g, path.decomp)
        else:
            solved = path.solve(t)
            logdet = solved.logdet_sigma
            iss = solved.iss_logdet
    except NotPositiveDefiniteError as exc:
        raise DomainError(f"path covariance is not positive definite at t={t!r}") from exc
    return 0.5 * (path.n - 1) * logdet - 0.5 * iss


def _single_clique(q: int) -> ChordalDecomposition:
    return ChordalDecomposition(cliques=(tuple(range(q)),), separators=())


def _decomposable_logdet(a: np.ndarray, decomp: ChordalDecomposition) -> float:
    total = 0.0
    for clique in decomp.cliques:
        idx = np.asarray(clique)
        total += logdet_pd(a[np.ix_(idx, idx)], "clique submatrix")
    for separator in decomp.separators:
        if separator:
            idx = np.asarray(separator)
            total -= logdet_pd(a[np.ix_(idx, idx)], "separator submatrix")
    return total


def _batched_logdet(s_alt: np.ndarray, s_null: np.ndarray, ts: np.ndarray) -> np.ndarray:
    stack = s_null[None, :, :] + ts[:, None, None] * (s_alt - s_null)[None, :, :]
    try:
        factors = np.linalg.cholesky(stack)
    except np.linalg.LinAlgError as exc:
        raise DomainError("path covariance is not positive definite at some node") from exc
    return 2.0 * np.sum(np.log(np.diagonal(factors, axis1=1, axis2=2)), axis=1)


def log_h_many(ts, path: DirectionalPath) -> np.ndarray:
    """log_h on an array of t values.

    For chordal and saturated alternatives this batches the clique and
    separator factorizations across all t; otherwise the completions are
    solved in increasing t so each one warm-starts from its neighbour.
    """
    ts = np.asarray(ts, dtype=float)
    path.check_domain(ts)
    g = path.graph_alt
    decomp = _single_clique(g.q) if g.is_saturated else path.decomp
    if decomp is None:
        flat = ts.ravel()
        out = np.empty(flat.shape)
        for i in np.argsort(flat, kind="stable"):
            out[i] = log_h(float(flat[i]), path)
        return out.reshape(ts.shape)

    flat = ts.ravel()
    n = path.n
    out = np.full(flat.shape, -0.5 * g.q * LN2)
    for clique in decomp.cliques:
        idx = np.asarray(clique)
        block = np.ix_(idx, idx)
        ld = _batched_logdet(path.sigma_alt[block], path.sigma_null[block], flat)
        out += 0.5 * (n - len(clique) - 2) * ld
    for separator in decomp.separators:
        if not separator:
            continue
        idx = np.asarray(separator)
        block = np.ix_(idx, idx)
        ld = _batched_logdet(path.sigma_alt[block], path.sigma_null[block], flat)
        out -= 0.5 * (n - len(separator) - 2) * ld
    return out.reshape(ts.shape)


def directional_pvalue(
    path: DirectionalPath,
    d: int,
    quad: Optional[QuadratureConfig] = None,
    log_offset: float = 0.0,
) -> Tuple[float, QuadratureDiagnostics]:
    """Share of the t^(d-1) h(t) mass beyond the observed point t=1.

    `log_offset` is added to the integrand and must not change the result.
    A degenerate path returns p=1 with empty diagnostics.
    """
    if d < 1:
        raise ValueError(f"interest dimension must be at least 1, got {d}")
    if path.is_degenerate:
        return 1.0, QuadratureDiagnostics(nodes=0, levels=0, panels=0, rel_error=0.0)
    quad = quad or QuadratureConfig()

    def log_integrand(t: np.ndarray) -> np.ndarray:
        radial = (d - 1) * np.log(t) if d > 1 else 0.0
        return radial + log_h_many(t, path) + log_offset

    result = integrate_split(log_integrand, 1.0, path.t_end, quad)
    tail = float(log_integrand(np.array([path.t_end]))[0]) + math.log(path.t_max - path.t_end)
    share = math.exp(min(0.0, tail - result.log_total))
    p = min(1.0, max(0.0, result.upper_fraction))
    return p, replace(result.diagnostics, endpoint_share=share)


def appendix_residual(path: DirectionalPath, fit_null: GgmFit, t: float) -> float:
    """sum_k J (omega(t) - omega_0) sigma(t), identically zero along the path."""
    g = path.graph_alt
    try:
        sigma, omega = path.completion(t)
    except NotPositiveDefiniteError as exc:
        raise DomainError(f"path covariance is not positive definite at t={t!r}") from exc
    return float(np.sum(g.weights * (g.restrict(omega) - g.restrict(fit_null.omega_hat)) * g.restrict(sigma)))


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest test class

    d: int
    n: int
    q: int
    w: float
    log_gamma: float
    w_star: float
    w_star2: float
    p_lr: float
    p_star: float
    p_star2: float
    p_dir: float
    t_max: Optional[float]
    quadrature: Optional[QuadratureDiagnostics]
    flags: Tuple[str, ...] = field(default_factory=tuple)

    FIELDS = ("d", "n", "q", "w", "log_gamma", "w_star", "w_star2", "p_lr", "p_star", "p_star2", "p_dir", "t_max")

    def to_dict(self) -> dict:
        payload = {name: getattr(self, name) for name in self.FIELDS}
        payload["quadrature"] = None if self.quadrature is None else self.quadrature.to_dict()
        payload["flags"] = list(self.flags)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "TestReport":
        quad = payload.get("quadrature")
        t_max = payload.get("t_max")
        return cls(
            d=int(payload["d"]),
            n=int(payload["n"]),
            q=int(payload["q"]),
            w=float(payload["w"]),
            log_gamma=float(payload["log_gamma"]),
            w_star=float(payload["w_star"]),
            w_star2=float(payload["w_star2"]),
            p_lr=float(payload["p_lr"]),
            p_star=float(payload["p_star"]),
            p_star2=float(payload["p_star2"]),
            p_dir=float(payload["p_dir"]),
            t_max=None if t_max is None else float(t_max),
            quadrature=None if quad is None else QuadratureDiagnostics.from_dict(quad),
            flags=tuple(payload.get("flags", ())),
        )


def _trivial_report(stats: SuffStats, d: int, w: float, flags: Tuple[str, ...]) -> TestReport:
    return TestReport(
        d=d,
        n=stats.n,
        q=stats.q,
        w=w,
        log_gamma=0.0,
        w_star=w,
        w_star2=w,
        p_lr=1.0,
        p_star=1.0,
        p_star2=1.0,
        p_dir=1.0,
        t_max=None,
        quadrature=None,
        flags=flags,
    )


class _Stage:
    """Context manager tagging failures with the stage they happened in."""

    def __init__(self, name: str):
        if name not in STAGES:
            raise ValueError(f"unknown stage '{name}', expected one of {STAGES}")
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, TestStageError) and isinstance(exc, Exception):
            raise TestStageError(self.name, exc) from exc
        return False


def test_nested(
    stats: SuffStats,
    pair: NestedPair,
    quad: Optional[QuadratureConfig] = None,
    fit_method: str = "auto",
) -> TestReport:
    """Fit both models and compute all four tests of the null against the alternative."""
    d = pair.d
    with _Stage("existence"):
        verdict = existence_check(pair.alt_graph, stats.n)
        if not verdict.ok:
            raise ValueError(f"maximum likelihood estimate may not exist: {verdict.reason}")
    with _Stage("fit_null"):
        fit_null = fit_ggm(stats, pair.null_graph, method=fit_method)
    if d == 0:
        return _trivial_report(stats, 0, 0.0, ("identical_graphs",))
    with _Stage("fit_alt"):
        fit_alt = fit_ggm(stats, pair.alt_graph, method=fit_method)
    with _Stage("lrt"):
        w = lrt_statistic(fit_alt, fit_null, stats.n)
        p_lr = chisq_sf(w, d)

    flags = []
    if d == 1:
        flags.append("d_equals_one")
    if w == 0.0:
        flags.append("degenerate_direction")
        return _trivial_report(stats, d, 0.0, tuple(flags))

    with _Stage("skovgaard"):
        decomp = decomposition_or_none(pair.alt_graph)
        log_gamma = skovgaard_log_gamma(fit_alt, fit_null, stats, d, decomp)
        w_star, w_star2 = skovgaard_statistics(w, log_gamma)
        p_star = chisq_sf(max(w_star, 0.0), d)
        p_star2 = chisq_sf(max(w_star2, 0.0), d)
    with _Stage("tmax"):
        path = DirectionalPath.from_fits(fit_alt, fit_null, stats.n)
    with _Stage("directional"):
        p_dir, diagnostics = directional_pvalue(path, d, quad)
    if path.is_degenerate:
        flags.append("degenerate_direction")
    if diagnostics.endpoint_share > ENDPOINT_MASS_LIMIT:
        flags.append("endpoint_mass")

    return TestReport(
        d=d,
        n=stats.n,
        q=stats.q,
        w=w,
        log_gamma=log_gamma,
        w_star=w_star,
        w_star2=w_star2,
        p_lr=p_lr,
        p_star=p_star,
        p_star2=p_star2,
        p_dir=p_dir,
        t_max=path.t_max,
        quadrature=diagnostics,
        flags=tuple(flags),
    )


test_nested.__test__ = False  # not a pytest test
