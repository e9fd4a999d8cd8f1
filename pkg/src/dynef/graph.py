"""Causal (directed) and lateral (undirected) unit graphs.

Units are indexed densely from 0. Both graphs are immutable once built and
precompute the per-unit neighbour sets the model needs at every timestep.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np


def _check_unit(i: int, n_units: int) -> int:
    i = int(i)
    if not 0 <= i < n_units:
        raise IndexError(f"unit {i} out of range for {n_units} units")
    return i


class CausalGraph:
    """Directed graph over units; edge ``(j, i)`` means j's past drives i.

    Self-loops are allowed. Edges are stored sorted, and the position of an
    edge in :attr:`edges` is the index of its weights in the model params.
    """

    def __init__(self, n_units: int, edges: Iterable[tuple[int, int]] = ()):
        if n_units < 0:
            raise ValueError("n_units must be nonnegative")
        self.n_units = int(n_units)
        canon = set()
        for j, i in edges:
            canon.add((_check_unit(j, n_units), _check_unit(i, n_units)))
        self.edges: tuple[tuple[int, int], ...] = tuple(sorted(canon))
        self._parents = [set() for _ in range(self.n_units)]
        for j, i in self.edges:
            self._parents[i].add(j)
        self.src = np.array([e[0] for e in self.edges], dtype=np.intp)
        self.dst = np.array([e[1] for e in self.edges], dtype=np.intp)
        self._index = {e: k for k, e in enumerate(self.edges)}

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CausalGraph) and self.n_units == other.n_units
                and self.edges == other.edges)

    def __repr__(self) -> str:
        return f"CausalGraph(n_units={self.n_units}, edges={list(self.edges)})"

    def __hash__(self) -> int:
        return hash((self.n_units, self.edges))

    def parents(self, i: int) -> frozenset[int]:
        return frozenset(self._parents[_check_unit(i, self.n_units)])

    def edge_index(self, j: int, i: int) -> int:
        return self._index[(j, i)]

    @cached_property
    def incidence(self) -> np.ndarray:
        """(n_units, n_edges) 0/1 matrix mapping edges onto their target unit."""
        inc = np.zeros((self.n_units, len(self.edges)))
        inc[self.dst, np.arange(len(self.edges))] = 1.0
        return inc


class LateralGraph:
    """Undirected graph of instantaneous couplings between units.

    Edges are canonicalized to ``(min, max)``. Self-loops are rejected: a
    unit's own coupling would duplicate its natural parameter.
    """

    def __init__(self, n_units: int, edges: Iterable[tuple[int, int]] = ()):
        if n_units < 0:
            raise ValueError("n_units must be nonnegative")
        self.n_units = int(n_units)
        canon = set()
        for a, b in edges:
            a, b = _check_unit(a, n_units), _check_unit(b, n_units)
            if a == b:
                raise ValueError(f"lateral self-loop on unit {a} is not allowed")
            canon.add((min(a, b), max(a, b)))
        self.edges: tuple[tuple[int, int], ...] = tuple(sorted(canon))
        self._neighbors = [set() for _ in range(self.n_units)]
        for a, b in self.edges:
            self._neighbors[a].add(b)
            self._neighbors[b].add(a)
        self._index = {e: k for k, e in enumerate(self.edges)}
        self.reach = reachable_sets(self)

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        return (isinstance(other, LateralGraph) and self.n_units == other.n_units
                and self.edges == other.edges)

    def __repr__(self) -> str:
        return f"LateralGraph(n_units={self.n_units}, edges={list(self.edges)})"

    def __hash__(self) -> int:
        return hash((self.n_units, self.edges))

    def neighbors(self, i: int) -> frozenset[int]:
        return frozenset(self._neighbors[_check_unit(i, self.n_units)])

    def edge_index(self, a: int, b: int) -> int:
        """Index of the undirected edge {a, b}; raises KeyError if absent."""
        return self._index[(min(a, b), max(a, b))]

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._index


@dataclass(frozen=True)
class ReachableSets:
    """Lateral connected components and per-unit reachable sets."""

    reach: tuple[frozenset[int], ...]
    components: tuple[tuple[int, ...], ...]
    component_of: tuple[int, ...]
    # indices into LateralGraph.edges, grouped per component
    component_edges: tuple[tuple[int, ...], ...]

    def __getitem__(self, i: int) -> frozenset[int]:
        return self.reach[i]


def parents(g: CausalGraph, i: int) -> frozenset[int]:
    """Units with a causal edge into ``i`` (including ``i`` for a self-loop)."""
    return g.parents(i)


def reachable_sets(g: LateralGraph) -> ReachableSets:
    """Breadth-first search for lateral components.

    Components are listed in order of their smallest unit, with members
    sorted ascending, so the result does not depend on edge insertion order.
    """
    n = g.n_units
    comp_of = [-1] * n
    components = []
    for start in range(n):
        if comp_of[start] >= 0:
            continue
        cid = len(components)
        comp_of[start] = cid
        members = [start]
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in g._neighbors[u]:
                if comp_of[v] < 0:
                    comp_of[v] = cid
                    members.append(v)
                    queue.append(v)
        components.append(tuple(sorted(members)))

    reach = tuple(frozenset(components[comp_of[i]]) - {i} for i in range(n))
    comp_edges = [[] for _ in components]
    for k, (a, _) in enumerate(g.edges):
        comp_edges[comp_of[a]].append(k)
    return ReachableSets(
        reach=reach,
        components=tuple(components),
        component_of=tuple(comp_of),
        component_edges=tuple(tuple(e) for e in comp_edges),
    )


@dataclass(frozen=True, eq=False)
class GraphPair:
    """The causal and lateral graph of one model, over the same units."""

    causal: CausalGraph
    lateral: LateralGraph

    def __post_init__(self):
        if self.causal.n_units != self.lateral.n_units:
            raise ValueError("causal and lateral graphs disagree on n_units")

    @property
    def n_units(self) -> int:
        return self.causal.n_units

    @property
    def reach(self) -> ReachableSets:
        return self.lateral.reach

    def __eq__(self, other) -> bool:
        return (isinstance(other, GraphPair) and self.causal == other.causal
                and self.lateral == other.lateral)

    def __hash__(self) -> int:
        return hash((self.causal.n_units, self.causal.edges, self.lateral.edges))

    @classmethod
    def from_edges(cls, n_units: int, causal=(), lateral=()) -> "GraphPair":
        return cls(CausalGraph(n_units, causal), LateralGraph(n_units, lateral))

    def to_dict(self) -> dict:
        return {
            "n_units": self.n_units,
            "causal": [list(e) for e in self.causal.edges],
            "lateral": [list(e) for e in self.lateral.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphPair":
        return cls.from_edges(d["n_units"], map(tuple, d.get("causal", [])),
                              map(tuple, d.get("lateral", [])))
