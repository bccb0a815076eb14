"""
Monte Carlo calibration of the four tests under the null model.

Each replication draws sufficient statistics from the null covariance,
runs `test_nested` and keeps the four p-values. Replication r always uses
the random stream seeded by (base_seed, r), so results do not depend on how
replications are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.stats import kstest

from .config import config
from .data_io import read_matrix
from .dirtest import test_nested
from .errors import GraphValidationError, ShapeError, TestStageError
from .graphs import Graph, NestedPair, block_graph, build_graph, markov_graph, nest, parse_graph_spec
from .mle import SuffStats, suff_stats, suff_stats_from_covariance
from .quadrature import QuadratureConfig
from .symmetric import as_symmetric, cholesky_lower, inv_pd, symmetrize

DEFAULT_LEVELS: Tuple[float, ...] = (0.01, 0.025, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.975, 0.99)
METHODS: Tuple[str, ...] = ("lr", "w_star", "w_star2", "directional")
METHOD_LABELS: Dict[str, str] = {
    "lr": "likelihood ratio w",
    "w_star": "Skovgaard w*",
    "w_star2": "Skovgaard w**",
    "directional": "directional",
}
SAMPLERS = ("bartlett", "rows")
NULL_FAMILIES = ("block", "md")
MD_OFF_BAND = -0.3
BLOCK_CORRELATION = 0.5
MARKOV_TOL = 1e-8


@dataclass(frozen=True)
class Scenario:
    n: int
    sigma0: np.ndarray
    null_graph: Graph
    alt_graph: Graph
    replications: int
    base_seed: int
    nominal_levels: Tuple[float, ...] = DEFAULT_LEVELS
    name: str = "scenario"
    sampler: str = "bartlett"
    keep_pvalues: bool = True

    def __post_init__(self):
        sigma = as_symmetric(self.sigma0, "null covariance")
        if sigma.shape[0] != self.null_graph.q:
            raise ShapeError(f"null covariance has order {sigma.shape[0]}, null graph has q={self.null_graph.q}")
        nest(self.null_graph, self.alt_graph)
        if self.n < 2:
            raise ValueError(f"sample size must be at least 2, got {self.n}")
        if self.replications < 0:
            raise ValueError(f"replications must not be negative, got {self.replications}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler '{self.sampler}', expected one of {SAMPLERS}")
        levels = np.asarray(self.nominal_levels, dtype=float)
        if levels.size == 0 or np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
            raise ValueError(f"nominal levels must be strictly increasing in (0, 1), got {list(self.nominal_levels)}")
        omega = inv_pd(sigma, "null covariance")
        off_graph = np.abs(omega[self.null_graph.zero_mask()])
        if off_graph.size and float(off_graph.max()) > MARKOV_TOL * float(np.abs(omega).max()):
            raise ValueError("null covariance is not Markov with respect to the null graph")

    @property
    def q(self) -> int:
        return self.null_graph.q

    @property
    def pair(self) -> NestedPair:
        return nest(self.null_graph, self.alt_graph)

    def rng(self, rep_index: int) -> np.random.Generator:
        return np.random.default_rng([self.base_seed, rep_index])


@dataclass(frozen=True)
class ReplicationOutcome:
    rep_index: int
    pvalues: Optional[Tuple[float, float, float, float]]
    error: Optional[str] = None


@dataclass(frozen=True)
class SimReport:
    scenario: str
    replications: int
    successes: int
    nominal_levels: Tuple[float, ...]
    empirical: Dict[str, Tuple[float, ...]]
    std_errors: Tuple[float, ...]
    pvalues: Optional[Dict[str, np.ndarray]] = None
    failure_stages: Dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> int:
        return self.replications - self.successes

    @property
    def failure_rate(self) -> float:
        return self.failures / self.replications if self.replications else 0.0

    def csv_rows(self) -> List[List[object]]:
        header = ["method"] + [_level_label(level) for level in self.nominal_levels]
        rows: List[List[object]] = [header]
        for method in METHODS:
            rows.append([method] + list(self.empirical[method]))
        rows.append(["mc_std_error"] + list(self.std_errors))
        return rows

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "replications": self.replications,
            "successes": self.successes,
            "failures": self.failures,
            "failure_rate": self.failure_rate,
            "failure_stages": dict(sorted(self.failure_stages.items())),
            "nominal_levels": list(self.nominal_levels),
            "empirical": {m: list(self.empirical[m]) for m in METHODS},
            "std_errors": list(self.std_errors),
            "uniformity": uniformity_check(self) if self.pvalues is not None and self.successes else None,
        }


def _level_label(level: float) -> str:
    return f"{100 * level:g}"


def sample_null_stats(scenario: Scenario, rep_index: int) -> SuffStats:
    """Bartlett-decomposition Wishart draw of the saturated covariance estimate.

    n * S_sat follows W_q(n-1, Sigma_0). Singular draws (n <= q) and
    scenarios asking for it go through explicit data rows instead.
    """
    if scenario.sampler == "rows" or scenario.n - 1 < scenario.q:
        return sample_null_data(scenario, rep_index)
    rng = scenario.rng(rep_index)
    q, n = scenario.q, scenario.n
    factor = cholesky_lower(np.asarray(scenario.sigma0, dtype=float) / n, "null covariance")
    bartlett = np.zeros((q, q))
    bartlett[np.diag_indices(q)] = np.sqrt(rng.chisquare(n - 1 - np.arange(q)))
    bartlett[np.tril_indices(q, k=-1)] = rng.standard_normal(q * (q - 1) // 2)
    root = factor @ bartlett
    return suff_stats_from_covariance(symmetrize(root @ root.T), n)


def sample_null_data(scenario: Scenario, rep_index: int) -> SuffStats:
    """n Gaussian rows from the null covariance, reduced by suff_stats."""
    rng = scenario.rng(rep_index)
    factor = cholesky_lower(np.asarray(scenario.sigma0, dtype=float), "null covariance")
    rows = rng.standard_normal((scenario.n, scenario.q)) @ factor.T
    return suff_stats(rows)


def _block_members(g: Graph) -> List[List[int]]:
    components = sorted(sorted(c) for c in nx.connected_components(g.to_networkx()))
    for members in components:
        size = len(members)
        edges_inside = g.to_networkx().subgraph(members).number_of_edges()
        if edges_inside != size * (size - 1) // 2:
            raise GraphValidationError(
                f"vertices {[v + 1 for v in members]} form a connected but incomplete component; "
                "the block family needs complete blocks"
            )
    return components


def default_null_sigma(null_graph: Graph, kind: str) -> np.ndarray:
    """Null covariance for the simulation families.

    block: unit variances, 0.5 correlation inside each complete component.
    md: inverse with unit diagonal and -0.3 between consecutive vertices
    that are adjacent in the null graph.
    """
    q = null_graph.q
    if kind == "block":
        sigma = np.eye(q)
        for members in _block_members(null_graph):
            idx = np.asarray(members)
            block = np.full((idx.size, idx.size), BLOCK_CORRELATION)
            np.fill_diagonal(block, 1.0)
            sigma[np.ix_(idx, idx)] = block
        return sigma
    if kind == "md":
        omega = np.eye(q)
        for v in range(q - 1):
            if (v + 1, v) in null_graph.edge_set:
                omega[v + 1, v] = omega[v, v + 1] = MD_OFF_BAND
        return inv_pd(omega, "Markov null concentration")
    raise ValueError(f"unknown null family '{kind}', expected one of {NULL_FAMILIES}")


def _replicate(scenario: Scenario, pair: NestedPair, rep_index: int, quad: Optional[QuadratureConfig]) -> ReplicationOutcome:
    try:
        stats = sample_null_stats(scenario, rep_index)
        report = test_nested(stats, pair, quad)
    except TestStageError as exc:
        return ReplicationOutcome(rep_index, None, exc.stage)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return ReplicationOutcome(rep_index, None, type(exc).__name__)
    return ReplicationOutcome(rep_index, (report.p_lr, report.p_star, report.p_star2, report.p_dir))


_WORKER_STATE: dict = {}


def _init_worker(scenario: Scenario, quad: Optional[QuadratureConfig]) -> None:
    _WORKER_STATE["scenario"] = scenario
    _WORKER_STATE["pair"] = scenario.pair
    _WORKER_STATE["quad"] = quad


def _replicate_in_worker(rep_index: int) -> ReplicationOutcome:
    return _replicate(_WORKER_STATE["scenario"], _WORKER_STATE["pair"], rep_index, _WORKER_STATE["quad"])


def run_scenario(
    scenario: Scenario,
    workers: Optional[int] = None,
    quad: Optional[QuadratureConfig] = None,
    on_progress: Optional[Callable[[int, int], None]] = None,
) -> SimReport:
    """Run every replication and tabulate the empirical p-value distributions."""
    workers = config.workers if workers is None else workers
    total = scenario.replications
    outcomes: List[ReplicationOutcome] = []

    if workers <= 1 or total <= 1:
        pair = scenario.pair
        for rep in range(total):
            outcomes.append(_replicate(scenario, pair, rep, quad))
            if on_progress:
                on_progress(rep + 1, total)
    else:
        chunksize = max(1, total // (8 * workers))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(scenario, quad)) as executor:
            for done, outcome in enumerate(executor.map(_replicate_in_worker, range(total), chunksize=chunksize), 1):
                outcomes.append(outcome)
                if on_progress:
                    on_progress(done, total)

    return summarize(scenario, outcomes)


def summarize(scenario: Scenario, outcomes: Sequence[ReplicationOutcome]) -> SimReport:
    ordered = sorted(outcomes, key=lambda o: o.rep_index)
    good = [o.pvalues for o in ordered if o.pvalues is not None]
    stages: Dict[str, int] = {}
    for outcome in ordered:
        if outcome.pvalues is None:
            stages[outcome.error or "unknown"] = stages.get(outcome.error or "unknown", 0) + 1

    levels = tuple(float(x) for x in scenario.nominal_levels)
    matrix = np.array(good, dtype=float).reshape(len(good), len(METHODS))
    pvalues = {m: matrix[:, i].copy() for i, m in enumerate(METHODS)}
    empirical = {m: empirical_cdf(pvalues[m], levels) for m in METHODS}
    return SimReport(
        scenario=scenario.name,
        replications=len(ordered),
        successes=len(good),
        nominal_levels=levels,
        empirical=empirical,
        std_errors=mc_std_errors(levels, len(good)),
        pvalues=pvalues if scenario.keep_pvalues else None,
        failure_stages=stages,
    )


def empirical_cdf(pvalues: np.ndarray, levels: Sequence[float]) -> Tuple[float, ...]:
    """Percentage of p-values at or below each level; zeros when empty."""
    values = np.sort(np.asarray(pvalues, dtype=float))
    if values.size == 0:
        return tuple(0.0 for _ in levels)
    counts = np.searchsorted(values, np.asarray(levels, dtype=float), side="right")
    return tuple(float(100.0 * c / values.size) for c in counts)


def mc_std_errors(levels: Sequence[float], replications: int) -> Tuple[float, ...]:
    """100 * sqrt(p (1 - p) / R) at each nominal level p."""
    if replications == 0:
        return tuple(0.0 for _ in levels)
    return tuple(100.0 * math.sqrt(p * (1.0 - p) / replications) for p in levels)


def relative_error_table(report: SimReport, grid: Optional[Sequence[float]] = None) -> List[Tuple[str, float, float, float]]:
    """(method, nominal, empirical, (empirical - nominal) / nominal) rows."""
    if report.pvalues is None:
        raise ValueError("report does not store per-replication p-values")
    levels = np.round(np.arange(1, 100) / 100.0, 2) if grid is None else np.asarray(grid, dtype=float)
    rows = []
    for method in METHODS:
        empirical = empirical_cdf(report.pvalues[method], levels)
        for nominal, emp in zip(levels, empirical):
            observed = emp / 100.0
            rows.append((method, float(nominal), observed, (observed - nominal) / nominal))
    return rows


def uniformity_check(report: SimReport) -> Dict[str, Dict[str, float]]:
    """Kolmogorov-Smirnov distance of each method's p-values from U(0, 1)."""
    if report.pvalues is None:
        raise ValueError("report does not store per-replication p-values")
    out = {}
    for method in METHODS:
        values = report.pvalues[method]
        if values.size == 0:
            raise ValueError("no successful replications to check")
        result = kstest(values, "uniform")
        out[method] = {"statistic": float(result.statistic), "pvalue": float(result.pvalue)}
    return out


def _block_alternative() -> Graph:
    extras = [(j, i) for i in range(16, 26) for j in range(26, 51)]
    return block_graph((25, 25), extras)


def benchmark_scenarios(replications: int = 10_000, base_seed: Optional[int] = None) -> Dict[str, Scenario]:
    """The small four-cycle design, the MD(1)-versus-MD(m) designs and the block-null designs."""
    seed = config.seed if base_seed is None else base_seed
    null_pairs = build_graph(4, [(2, 1), (4, 3)])
    scenarios: Dict[str, Scenario] = {
        "cycle-4-7": Scenario(
            n=7,
            sigma0=default_null_sigma(null_pairs, "md"),
            null_graph=null_pairs,
            alt_graph=build_graph(4, [(2, 1), (3, 2), (4, 3), (4, 1)]),
            replications=replications,
            base_seed=seed,
            name="cycle-4-7",
        )
    }
    for q, orders in ((11, (2, 3, 6, 9)), (30, (2, 9, 18, 28)), (50, (2, 16, 32, 48))):
        null_g = markov_graph(q, 1)
        sigma0 = default_null_sigma(null_g, "md")
        for m in orders:
            name = f"md-{q}-{m}"
            scenarios[name] = Scenario(
                n=60,
                sigma0=sigma0,
                null_graph=null_g,
                alt_graph=markov_graph(q, m),
                replications=replications,
                base_seed=seed,
                name=name,
            )
    null_block = block_graph((25, 25))
    alt_block = _block_alternative()
    sigma_block = default_null_sigma(null_block, "block")
    for n in (60, 90, 120):
        name = f"block-50-{n}"
        scenarios[name] = Scenario(
            n=n,
            sigma0=sigma_block,
            null_graph=null_block,
            alt_graph=alt_block,
            replications=replications,
            base_seed=seed,
            name=name,
        )
    return scenarios


def scenario_from_dict(payload: dict, base_dir=None) -> Scenario:
    """Scenario from its JSON description; levels are given in percent."""
    try:
        null_g = parse_graph_spec(str(payload["null"]))
        alt_g = parse_graph_spec(str(payload["alt"]), q=null_g.q)
        n = int(payload["n"])
    except KeyError as exc:
        raise ValueError(f"scenario is missing the '{exc.args[0]}' entry") from exc
    if "q" in payload and int(payload["q"]) != null_g.q:
        raise ValueError(f"scenario q={payload['q']} does not match the null graph (q={null_g.q})")

    sigma_spec = str(payload.get("sigma0", "md"))
    if sigma_spec in NULL_FAMILIES:
        sigma0 = default_null_sigma(null_g, sigma_spec)
    else:
        path = Path(sigma_spec)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        sigma0 = read_matrix(path)

    levels = payload.get("levels")
    nominal = DEFAULT_LEVELS if levels is None else tuple(float(x) / 100.0 for x in levels)
    return Scenario(
        n=n,
        sigma0=sigma0,
        null_graph=null_g,
        alt_graph=alt_g,
        replications=int(payload.get("reps", 10_000)),
        base_seed=int(payload.get("seed", config.seed)),
        nominal_levels=nominal,
        name=str(payload.get("name", "scenario")),
        sampler=str(payload.get("sampler", "bartlett")),
    )
