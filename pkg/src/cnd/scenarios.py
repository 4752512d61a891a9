"""Ready-made topologies and scenarios used by the demos and the test suite."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import networkx as nx

from .protocol import ProtocolParams
from .simulator import Desync, LinkDown, LinkUp, NodeJoin, PowerIncrease, SegmentSpec
from .topology import Position, RadioGraph, build_graph, canonical, place_uniform


@dataclass
class Fixture:
    graph: RadioGraph
    segments: list[SegmentSpec]
    events: list = field(default_factory=list)
    targets: list[int] | None = None
    region: tuple[float, float] = (100.0, 100.0)


def hidden_node_segment(radius: float = 7.0, range_: float = 10.0) -> Fixture:
    """Node 0 is hidden inside an 8-node segment; exactly four members hear it.

    Members sit on two concentric rings of four. The inner ring (radius 7) is
    within range of node 0 and of itself; each outer node (radius 14) only
    reaches the inner node on its spoke.
    """
    cx = cy = 30.0
    pts = [Position(cx, cy)]
    dirs = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    for r in (radius, 2 * radius):
        pts += [Position(cx + r * dx, cy + r * dy) for dx, dy in dirs]
    graph = build_graph(pts, range_)
    return Fixture(graph, [SegmentSpec(set(range(1, 9)))], targets=[0], region=(60.0, 60.0))


def reference_params(**kw) -> ProtocolParams:
    """Reference setting: P=0.9, T=100 s, Init duty cycle 0.1, Normal period 30 s."""
    base = dict(init_period=1.0, init_active=0.1, normal_period=30.0, normal_active=0.1,
                target_probability=0.9, target_horizon=100.0)
    base.update(kw)
    return ProtocolParams(**base)


_DYN_BASE = [Position(10, 10), Position(18, 10), Position(26, 10), Position(10, 18), Position(18, 18)]


def dynamic_fixture(kind: str) -> Fixture:
    """A five-node segment (a 4-cycle plus a pendant) hit by one kind of change at t=20 s.

    ``desync``: node 4 loses its clock. ``disruption``: the pendant's only link
    is blocked for 40 s. ``join``: a node appears with four in-segment
    neighbours. ``power``: an isolated node and the pendant both raise their
    range until they can hear each other.
    """
    pts = list(_DYN_BASE)
    if kind == "power":
        pts.append(Position(40, 10))
    graph = build_graph(pts, 10.0)
    seg = [SegmentSpec({0, 1, 2, 3, 4})]
    if kind == "desync":
        events = [Desync(20.0, 4)]
    elif kind == "disruption":
        events = [LinkDown(20.0, (1, 2), 60.0), LinkUp(60.0, (1, 2))]
    elif kind == "join":
        events = [NodeJoin(20.0, Position(14, 14))]
    elif kind == "power":
        events = [PowerIncrease(20.0, 5, 15.0), PowerIncrease(25.0, 2, 15.0)]
    else:
        raise ValueError(f"unknown scenario kind {kind!r}")
    return Fixture(graph, seg, events, region=(50.0, 50.0))


def connected_placement(n: int, seed: int, width: float = 50.0, range_: float = 20.0) -> RadioGraph:
    """Uniform placement redrawn until the unit disk graph is connected."""
    rng = random.Random(seed)
    while True:
        g = build_graph(place_uniform(n, width, width, rng.getrandbits(32)), range_)
        G = nx.Graph()
        G.add_nodes_from(range(n))
        G.add_edges_from(g.edges())
        if nx.is_connected(G):
            return g


def partially_known_segment(n: int, seed: int, known_fraction: float = 0.3) -> Fixture:
    """A connected segment whose known links are a BFS tree plus a share of the rest."""
    rng = random.Random(seed)
    g = connected_placement(n, seed)
    G = nx.Graph(list(g.edges()))
    G.add_nodes_from(range(n))
    tree = {canonical(*e) for e in nx.bfs_edges(G, rng.randrange(n))}
    extra = sorted(g.edges() - tree)
    known = tree | set(rng.sample(extra, int(len(extra) * known_fraction)))
    return Fixture(g, [SegmentSpec(set(range(n)), known)], region=(50.0, 50.0))
