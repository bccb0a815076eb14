"""
Undirected graphs for Gaussian graphical models.

A Graph holds the edge set k of a concentration-matrix zero pattern: all
diagonal pairs plus the nonzero off-diagonal pairs, 0-based, with i >= j,
in half-vector order. External formats (JSON files, shorthand strings,
build_graph arguments) use 1-based vertex labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .errors import GraphValidationError, NotChordalError, NotNestedError

Edge = Tuple[int, int]


def _edge_key(edge: Edge) -> Tuple[int, int]:
    # half-vector order: by column, then by row
    return (edge[1], edge[0])


@dataclass(frozen=True)
class Graph:
    """Vertex count and edge set k (0-based, i >= j, half-vector order)."""

    q: int
    edges: Tuple[Edge, ...]

    def __post_init__(self):
        if self.q < 1:
            raise GraphValidationError(f"vertex count must be at least 1, got {self.q}")
        seen = set()
        for i, j in self.edges:
            if not (0 <= j <= i < self.q):
                raise GraphValidationError(f"edge ({i + 1},{j + 1}) out of range for q={self.q}")
            if (i, j) in seen:
                raise GraphValidationError(f"duplicate edge ({i + 1},{j + 1})")
            seen.add((i, j))
        missing = [v for v in range(self.q) if (v, v) not in seen]
        if missing:
            raise GraphValidationError(f"diagonal pairs missing for vertices {[v + 1 for v in missing]}")
        if list(self.edges) != sorted(self.edges, key=_edge_key):
            raise GraphValidationError("edges are not in canonical order")

    @property
    def p(self) -> int:
        return len(self.edges)

    @property
    def q_star(self) -> int:
        return self.q * (self.q + 1) // 2

    @property
    def w(self) -> int:
        return self.q_star - self.p

    @property
    def is_saturated(self) -> bool:
        return self.p == self.q_star

    @cached_property
    def off_diagonal(self) -> Tuple[Edge, ...]:
        return tuple((i, j) for i, j in self.edges if i != j)

    @cached_property
    def complement(self) -> Tuple[Edge, ...]:
        """The edge set h: off-diagonal pairs absent from k."""
        present = set(self.edges)
        return tuple(
            (i, j)
            for j in range(self.q)
            for i in range(j + 1, self.q)
            if (i, j) not in present
        )

    @cached_property
    def edge_set(self) -> frozenset:
        return frozenset(self.edges)

    @cached_property
    def rows(self) -> np.ndarray:
        arr = np.fromiter((e[0] for e in self.edges), dtype=np.intp, count=self.p)
        arr.setflags(write=False)
        return arr

    @cached_property
    def cols(self) -> np.ndarray:
        arr = np.fromiter((e[1] for e in self.edges), dtype=np.intp, count=self.p)
        arr.setflags(write=False)
        return arr

    @cached_property
    def weights(self) -> np.ndarray:
        """Diagonal of J_kk."""
        arr = np.where(self.rows == self.cols, 1.0, 2.0)
        arr.setflags(write=False)
        return arr

    @cached_property
    def neighbours(self) -> Tuple[frozenset, ...]:
        adj: List[set] = [set() for _ in range(self.q)]
        for i, j in self.off_diagonal:
            adj[i].add(j)
            adj[j].add(i)
        return tuple(frozenset(a) for a in adj)

    def restrict(self, a: np.ndarray) -> np.ndarray:
        """Entries of a symmetric matrix on k, in edge order."""
        return a[self.rows, self.cols]

    def zero_mask(self) -> np.ndarray:
        """Boolean q x q mask, True on the pairs of h (both triangles)."""
        mask = np.ones((self.q, self.q), dtype=bool)
        mask[self.rows, self.cols] = False
        mask[self.cols, self.rows] = False
        return mask

    def contains(self, other: "Graph") -> bool:
        return self.q == other.q and other.edge_set <= self.edge_set

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.q))
        g.add_edges_from(self.off_diagonal)
        return g

    def to_json_dict(self) -> dict:
        return {"q": self.q, "edges": [[i + 1, j + 1] for i, j in self.off_diagonal]}


@dataclass(frozen=True)
class ChordalDecomposition:
    """Cliques in running-intersection order and separators S_2..S_K."""

    cliques: Tuple[Tuple[int, ...], ...]
    separators: Tuple[Tuple[int, ...], ...]

    @property
    def clique_sizes(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.cliques)

    @property
    def separator_sizes(self) -> Tuple[int, ...]:
        return tuple(len(s) for s in self.separators)

    @property
    def max_clique_size(self) -> int:
        return max(self.clique_sizes)


@dataclass(frozen=True)
class ChordalityResult:
    is_chordal: bool
    order: Tuple[int, ...]
    certificate: Optional[int] = None

    @property
    def elimination_order(self) -> Tuple[int, ...]:
        """Perfect elimination ordering (reverse of the search order)."""
        return tuple(reversed(self.order))


@dataclass(frozen=True)
class NestedPair:
    null_graph: Graph
    alt_graph: Graph
    interest_edges: Tuple[Edge, ...]

    @property
    def d(self) -> int:
        return len(self.interest_edges)


def _from_zero_based(q: int, off_diagonal: Iterable[Edge]) -> Graph:
    edges = [(v, v) for v in range(q)] + list(off_diagonal)
    return Graph(q=q, edges=tuple(sorted(edges, key=_edge_key)))


def _normalize_pairs(q: int, pairs: Iterable[Sequence[int]]) -> List[Edge]:
    normalized: List[Edge] = []
    seen = set()
    for pair in pairs:
        if len(pair) != 2:
            raise GraphValidationError(f"edge {pair!r} must have two endpoints")
        a, b = int(pair[0]), int(pair[1])
        i, j = max(a, b), min(a, b)
        if i == j:
            raise GraphValidationError(f"edge ({a},{b}) is a diagonal pair")
        if j < 1 or i > q:
            raise GraphValidationError(f"edge ({a},{b}) out of range for q={q}")
        if (i, j) in seen:
            raise GraphValidationError(f"duplicate edge ({i},{j})")
        seen.add((i, j))
        normalized.append((i - 1, j - 1))
    return normalized


def build_graph(q: int, off_diagonal_edges: Iterable[Sequence[int]]) -> Graph:
    """Graph from 1-based off-diagonal pairs; diagonal pairs are added."""
    if q < 1:
        raise GraphValidationError(f"vertex count must be at least 1, got {q}")
    return _from_zero_based(q, _normalize_pairs(q, off_diagonal_edges))


def markov_graph(q: int, m: int) -> Graph:
    """MD(m): edge (i, j) present iff 0 < |i - j| <= m."""
    if q < 1:
        raise GraphValidationError(f"vertex count must be at least 1, got {q}")
    if not (0 <= m <= q - 1):
        raise GraphValidationError(f"Markov order must lie in [0, {q - 1}], got {m}")
    return _from_zero_based(q, [(j + t, j) for t in range(1, m + 1) for j in range(q - t)])


def block_graph(block_sizes: Sequence[int], extra_edges: Iterable[Sequence[int]] = ()) -> Graph:
    """Complete within each block, plus the listed 1-based extra edges."""
    sizes = [int(s) for s in block_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise GraphValidationError(f"block sizes must be positive, got {list(block_sizes)}")
    q = sum(sizes)
    within: List[Edge] = []
    start = 0
    for size in sizes:
        members = range(start, start + size)
        within.extend((i, j) for j, i in combinations(members, 2))
        start += size
    extras = _normalize_pairs(q, extra_edges)
    clash = set(within) & set(extras)
    if clash:
        i, j = sorted(clash)[0]
        raise GraphValidationError(f"extra edge ({i + 1},{j + 1}) already lies inside a block")
    return _from_zero_based(q, within + extras)


def saturated_graph(q: int) -> Graph:
    return markov_graph(q, q - 1)


def independence_graph(q: int) -> Graph:
    return markov_graph(q, 0)


def chordality(g: Graph) -> ChordalityResult:
    """Maximum cardinality search with the perfect-elimination check.

    Ties are broken by the lowest vertex index. The graph is chordal iff,
    for every vertex v, the earlier-visited neighbours of v other than the
    latest one, u, are all earlier-visited neighbours of u.
    """
    q = g.q
    weight = np.zeros(q, dtype=int)
    numbered = np.zeros(q, dtype=bool)
    position = np.full(q, -1, dtype=int)
    order: List[int] = []
    for step in range(q):
        candidates = np.where(numbered, -1, weight)
        v = int(np.argmax(candidates))
        numbered[v] = True
        position[v] = step
        order.append(v)
        for nb in g.neighbours[v]:
            if not numbered[nb]:
                weight[nb] += 1

    earlier = [frozenset(nb for nb in g.neighbours[v] if position[nb] < position[v]) for v in range(q)]
    for v in order:
        if not earlier[v]:
            continue
        u = max(earlier[v], key=lambda x: position[x])
        if not (earlier[v] - {u}) <= earlier[u]:
            return ChordalityResult(is_chordal=False, order=tuple(order), certificate=v)
    return ChordalityResult(is_chordal=True, order=tuple(order))


def clique_decomposition(g: Graph) -> ChordalDecomposition:
    result = chordality(g)
    if not result.is_chordal:
        raise NotChordalError(result.certificate)

    position = {v: idx for idx, v in enumerate(result.order)}
    candidates = []
    for v in result.order:
        members = {nb for nb in g.neighbours[v] if position[nb] < position[v]}
        members.add(v)
        candidates.append(frozenset(members))

    cliques: List[frozenset] = []
    for idx, cand in enumerate(candidates):
        if any(cand < later for later in candidates[idx + 1:]):
            continue
        if cand in cliques:
            continue
        cliques.append(cand)

    separators: List[Tuple[int, ...]] = []
    covered = set(cliques[0])
    for clique in cliques[1:]:
        separators.append(tuple(sorted(clique & covered)))
        covered |= clique
    return ChordalDecomposition(
        cliques=tuple(tuple(sorted(c)) for c in cliques),
        separators=tuple(separators),
    )


def maximal_cliques(g: Graph, decomp: Optional[ChordalDecomposition] = None) -> List[Tuple[int, ...]]:
    """Maximal cliques: from the decomposition when chordal, else enumerated."""
    if decomp is not None:
        return list(decomp.cliques)
    if chordality(g).is_chordal:
        return list(clique_decomposition(g).cliques)
    return sorted(tuple(sorted(c)) for c in nx.find_cliques(g.to_networkx()))


def decomposition_or_none(g: Graph) -> Optional[ChordalDecomposition]:
    return clique_decomposition(g) if chordality(g).is_chordal else None


def nest(null_g: Graph, alt_g: Graph) -> NestedPair:
    if null_g.q != alt_g.q:
        raise NotNestedError((), f"graphs have different vertex counts: {null_g.q} vs {alt_g.q}")
    missing = sorted(null_g.edge_set - alt_g.edge_set, key=_edge_key)
    if missing:
        raise NotNestedError(missing)
    interest = tuple(e for e in alt_g.edges if e not in null_g.edge_set)
    return NestedPair(null_graph=null_g, alt_graph=alt_g, interest_edges=interest)


def graph_from_json_dict(payload: dict) -> Graph:
    try:
        if "blocks" in payload:
            graph = block_graph(payload["blocks"], payload.get("edges", []))
            if "q" in payload and int(payload["q"]) != graph.q:
                raise GraphValidationError(f"blocks sum to {graph.q}, but q={payload['q']}")
            return graph
        return build_graph(int(payload["q"]), payload.get("edges", []))
    except (KeyError, TypeError) as exc:
        raise GraphValidationError(f"malformed graph description: {exc}") from exc


def read_graph_json(path) -> Graph:
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise GraphValidationError(f"{path}: invalid JSON ({exc})") from exc
    return graph_from_json_dict(payload)


def write_graph_json(g: Graph, path) -> Path:
    output_path = Path(path)
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(g.to_json_dict(), f, indent=2)
    return output_path


def _parse_int(token: str, spec: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise GraphValidationError(f"invalid graph shorthand '{spec}': '{token}' is not an integer")


def parse_graph_spec(spec: str, q: Optional[int] = None) -> Graph:
    """Graph from a shorthand string or a JSON file path.

    Shorthands: md:<q>:<m>, block:<s1,s2,...>, saturated:<q>, independence:<q>.
    """
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "md":
        parts = rest.split(":")
        if len(parts) != 2:
            raise GraphValidationError(f"invalid graph shorthand '{spec}': expected md:<q>:<m>")
        graph = markov_graph(_parse_int(parts[0], spec), _parse_int(parts[1], spec))
    elif kind == "block":
        sizes = [_parse_int(s, spec) for s in rest.split(",") if s.strip()]
        graph = block_graph(sizes)
    elif kind == "saturated":
        graph = saturated_graph(_parse_int(rest, spec))
    elif kind == "independence":
        graph = independence_graph(_parse_int(rest, spec))
    else:
        path = Path(spec)
        if not path.exists():
            raise GraphValidationError(f"'{spec}' is neither a graph shorthand nor an existing file")
        graph = read_graph_json(path)
    if q is not None and graph.q != q:
        raise GraphValidationError(f"graph '{spec}' has q={graph.q}, expected {q}")
    return graph
