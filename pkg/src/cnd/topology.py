"""Node placement and unit-disk connectivity.

The functions here are the ground truth the protocol is measured against:
who can physically hear whom, which of those links are still undiscovered,
and how many members of a segment neighbour a given node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid placement or graph parameters."""


class ConsistencyError(ValueError):
    """A claimed link or membership contradicts the physical graph."""


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance(self, other: "Position") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))


def canonical(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass
class RadioGraph:
    """Symmetric, irreflexive adjacency over node ids ``0..node_count-1``.

    ``ranges`` holds one transmission range per node. Two nodes are linked
    when their distance is within *both* ranges, so raising a single node's
    power never creates a one-way link.
    """

    positions: list[Position]
    ranges: list[float]
    adjacency: dict[int, set[int]] = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.positions)

    def neighbors(self, u: int) -> set[int]:
        try:
            return self.adjacency[u]
        except KeyError:
            raise KeyError(f"unknown node {u}") from None

    def adjacent(self, u: int, v: int) -> bool:
        return v in self.neighbors(u)

    def edges(self) -> set[tuple[int, int]]:
        return {(u, v) for u, nbrs in self.adjacency.items() for v in nbrs if u < v}

    def copy(self) -> "RadioGraph":
        return RadioGraph(
            positions=list(self.positions),
            ranges=list(self.ranges),
            adjacency={u: set(n) for u, n in self.adjacency.items()},
        )

    def _linked(self, u: int, v: int) -> bool:
        reach = min(self.ranges[u], self.ranges[v])
        return self.positions[u].distance(self.positions[v]) <= reach

    def add_node(self, position: Position, range_: float) -> int:
        """Append a node with the next free id and link it to everyone in reach."""
        u = len(self.positions)
        self.positions.append(position)
        self.ranges.append(float(range_))
        self.adjacency[u] = set()
        for v in range(u):
            if self._linked(u, v):
                self.adjacency[u].add(v)
                self.adjacency[v].add(u)
        return u

    def set_range(self, u: int, new_range: float) -> set[tuple[int, int]]:
        """Raise node ``u``'s range; returns the links this creates."""
        if new_range < self.ranges[u]:
            raise ConfigurationError("range decrease is not supported")
        self.ranges[u] = float(new_range)
        created = set()
        for v in range(self.node_count):
            if v != u and v not in self.adjacency[u] and self._linked(u, v):
                self.adjacency[u].add(v)
                self.adjacency[v].add(u)
                created.add(canonical(u, v))
        return created


def place_uniform(n: int, width: float, height: float, seed: int) -> list[Position]:
    """Drop ``n`` nodes uniformly at random in ``[0, width] x [0, height]``."""
    if n < 1:
        raise ConfigurationError(f"need at least one node, got n={n}")
    if not (width > 0 and height > 0):
        raise ConfigurationError(f"deployment area must be positive, got {width}x{height}")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0.0, 1.0, size=(n, 2)) * np.array([width, height])
    return [Position(float(x), float(y)) for x, y in xy]


def build_graph(positions: Sequence[Position], range_: float) -> RadioGraph:
    """Closed-disk unit disk graph: linked iff distance <= range."""
    if range_ <= 0:
        raise ConfigurationError(f"range must be positive, got {range_}")
    n = len(positions)
    adjacency: dict[int, set[int]] = {u: set() for u in range(n)}
    if n > 1:
        xy = np.array([(p.x, p.y) for p in positions], dtype=float)
        diff = xy[:, None, :] - xy[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        within = dist <= range_
        np.fill_diagonal(within, False)
        for u, v in zip(*np.nonzero(np.triu(within))):
            adjacency[int(u)].add(int(v))
            adjacency[int(v)].add(int(u))
    return RadioGraph(positions=list(positions), ranges=[float(range_)] * n, adjacency=adjacency)


def in_segment_degree(graph: RadioGraph, u: int, members: Iterable[int]) -> int:
    """Number of ``members`` physically adjacent to ``u`` (``u`` itself excluded)."""
    nbrs = graph.neighbors(u)
    return sum(1 for w in set(members) if w != u and w in nbrs)


def hidden_links(graph: RadioGraph, discovered: Iterable[tuple[int, int]]) -> set[tuple[int, int]]:
    """Physical links that are not yet in ``discovered``."""
    known = set()
    for u, v in discovered:
        pair = canonical(u, v)
        if u == v or u not in graph.adjacency or not graph.adjacent(u, v):
            raise ConsistencyError(f"discovered link {pair} is not a physical link")
        known.add(pair)
    return graph.edges() - known
