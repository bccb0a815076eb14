"""
Adaptive composite Gauss-Legendre quadrature in the log domain.

`integrate_split` integrates exp(log_f) over [lower, split] and
[split, upper] at once. Every panel is compared with its two halves; panels
whose disagreement is large relative to their side's total are bisected
until the ratio upper / (lower + upper) is stable to the requested relative
tolerance. Values are kept as logarithms throughout so integrands spanning
hundreds of orders of magnitude neither overflow nor underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .config import config
from .errors import QuadratureError

LogIntegrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = field(default_factory=lambda: config.quad_tol)
    order: int = 20
    initial_panels: int = 4
    max_panels: int = 4000

    def __post_init__(self):
        if not (0 < self.rel_tol < 1):
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.order < 2:
            raise ValueError(f"order must be at least 2, got {self.order}")
        if self.initial_panels < 1:
            raise ValueError(f"initial_panels must be positive, got {self.initial_panels}")
        if self.max_panels < 2 * self.initial_panels:
            raise ValueError("max_panels must allow the initial panels on both sides")


@dataclass(frozen=True)
class QuadratureDiagnostics:
    nodes: int
    levels: int
    panels: int
    rel_error: float
    endpoint_share: float = 0.0

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "levels": self.levels,
            "panels": self.panels,
            "rel_error": self.rel_error,
            "endpoint_share": self.endpoint_share,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "QuadratureDiagnostics":
        return cls(
            nodes=int(payload["nodes"]),
            levels=int(payload["levels"]),
            panels=int(payload["panels"]),
            rel_error=float(payload["rel_error"]),
            endpoint_share=float(payload.get("endpoint_share", 0.0)),
        )


@dataclass(frozen=True)
class SplitIntegral:
    log_lower: float
    log_upper: float
    diagnostics: QuadratureDiagnostics

    @property
    def log_total(self) -> float:
        return float(np.logaddexp(self.log_lower, self.log_upper))

    @property
    def upper_fraction(self) -> float:
        """upper / (lower + upper)."""
        return float(math.exp(self.log_upper - self.log_total))


@dataclass
class _Panel:
    a: float
    b: float
    log_left: float
    log_right: float
    log_value: float
    log_err: float


@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, np.log(weights)


def _safe_logsumexp(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return -math.inf
    return float(logsumexp(finite))


def _log_abs_diff(log_x: float, log_y: float) -> float:
    """log|exp(log_x) - exp(log_y)|."""
    hi, lo = max(log_x, log_y), min(log_x, log_y)
    if hi == -math.inf:
        return -math.inf
    if lo == -math.inf:
        return hi
    gap = lo - hi
    if gap == 0.0:
        return -math.inf
    return hi + math.log(-math.expm1(gap))


class _PanelRule:
    """Gauss-Legendre rule of a fixed order with an evaluation counter."""

    def __init__(self, log_f: LogIntegrand, order: int):
        self.log_f = log_f
        self.nodes, self.log_weights = _gauss_legendre(order)
        self.evaluations = 0

    def log_integral(self, a: float, b: float) -> float:
        half = 0.5 * (b - a)
        t = 0.5 * (a + b) + half * self.nodes
        values = np.asarray(self.log_f(t), dtype=float)
        if values.shape != t.shape:
            raise ValueError(f"log integrand returned shape {values.shape} for {t.shape} nodes")
        if np.any(np.isnan(values)):
            raise ValueError(f"log integrand is NaN on [{a}, {b}]")
        self.evaluations += t.size
        return _safe_logsumexp(values + self.log_weights) + math.log(half)

    def panel(self, a: float, b: float, log_coarse: Optional[float] = None) -> _Panel:
        if log_coarse is None:
            log_coarse = self.log_integral(a, b)
        mid = 0.5 * (a + b)
        log_left = self.log_integral(a, mid)
        log_right = self.log_integral(mid, b)
        log_value = float(np.logaddexp(log_left, log_right))
        return _Panel(a, b, log_left, log_right, log_value, _log_abs_diff(log_coarse, log_value))

    def split(self, panel: _Panel) -> Tuple[_Panel, _Panel]:
        mid = 0.5 * (panel.a + panel.b)
        return self.panel(panel.a, mid, panel.log_left), self.panel(mid, panel.b, panel.log_right)


def _side_totals(panels: List[_Panel]) -> Tuple[float, float]:
    values = np.array([p.log_value for p in panels])
    errors = np.array([p.log_err for p in panels])
    return _safe_logsumexp(values), _safe_logsumexp(errors)


def _ratio_error(log_a: float, err_a: float, log_b: float, err_b: float) -> float:
    """Bound on the relative error of b / (a + b) from the side errors."""
    log_total = float(np.logaddexp(log_a, log_b))
    if log_total == -math.inf:
        return math.inf
    rel = math.exp(float(np.logaddexp(err_a, err_b)) - log_total)
    if log_b > -math.inf:
        rel += math.exp(err_b - log_b)
    return rel


def integrate_split(
    log_f: LogIntegrand,
    split: float,
    upper: float,
    quad: Optional[QuadratureConfig] = None,
    lower: float = 0.0,
) -> SplitIntegral:
    """Log-integrals of exp(log_f) over [lower, split] and [split, upper]."""
    quad = quad or QuadratureConfig()
    if not (lower < split < upper):
        raise ValueError(f"need lower < split < upper, got {lower}, {split}, {upper}")

    rule = _PanelRule(log_f, quad.order)
    sides: List[List[_Panel]] = []
    for a, b in ((lower, split), (split, upper)):
        edges = np.linspace(a, b, quad.initial_panels + 1)
        sides.append([rule.panel(float(lo), float(hi)) for lo, hi in zip(edges[:-1], edges[1:])])

    levels = 0
    while True:
        (log_a, err_a), (log_b, err_b) = (_side_totals(s) for s in sides)
        rel = _ratio_error(log_a, err_a, log_b, err_b)
        panels = len(sides[0]) + len(sides[1])
        if rel <= quad.rel_tol:
            break
        if panels >= quad.max_panels:
            raise QuadratureError(rel, panels)

        refined = False
        for idx, side in enumerate(sides):
            log_side = log_a if idx == 0 else log_b
            if log_side == -math.inf:
                continue
            cutoff = math.log(quad.rel_tol / (4.0 * len(side))) + log_side
            next_side: List[_Panel] = []
            for panel in side:
                if panel.log_err > cutoff:
                    next_side.extend(rule.split(panel))
                    refined = True
                else:
                    next_side.append(panel)
            sides[idx] = next_side
        if not refined:
            # the cutoff missed everything; bisect the single worst panel
            idx, pos = max(
                ((i, j) for i in range(2) for j in range(len(sides[i]))),
                key=lambda ij: sides[ij[0]][ij[1]].log_err,
            )
            sides[idx][pos : pos + 1] = list(rule.split(sides[idx][pos]))
        levels += 1

    diagnostics = QuadratureDiagnostics(
        nodes=rule.evaluations,
        levels=levels,
        panels=len(sides[0]) + len(sides[1]),
        rel_error=rel,
    )
    return SplitIntegral(log_lower=log_a, log_upper=log_b, diagnostics=diagnostics)
