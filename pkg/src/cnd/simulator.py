"""Deterministic discrete-event simulation of the discovery protocol.

Time is integer microseconds. Events dequeue in ``(time, seq)`` order where
``seq`` is the insertion counter, so equal-time events keep their insertion
order and a run is fully determined by its inputs and seed.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional, Sequence

from . import protocol as proto
from .metrics import Detection, LinkEpisode, TrialMetrics
from .protocol import (BurstDirective, Kind, Message, NodeRuntime, Phase, Policy, ProtocolParams,
                       Segment, ticks)
from .topology import Position, RadioGraph, canonical, in_segment_degree


class ScenarioError(ValueError):
    """The injected scenario cannot be applied to the topology."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# --- scenario events (times in seconds) ------------------------------------

@dataclass(frozen=True)
class LinkDown:
    at: float
    pair: tuple[int, int]
    until: float


@dataclass(frozen=True)
class LinkUp:
    at: float
    pair: tuple[int, int]


@dataclass(frozen=True)
class NodeJoin:
    at: float
    position: Position


@dataclass(frozen=True)
class PowerIncrease:
    at: float
    node: int
    new_range: float


@dataclass(frozen=True)
class Desync:
    at: float
    node: int


def inject_disruption(pair: tuple[int, int], start: float, until: float,
                      graph: Optional[RadioGraph] = None) -> list:
    """A temporary obstruction of one link; the link is NOT restored as known."""
    if until < start:
        raise ScenarioError([f"disruption of {pair} ends before it starts"])
    if graph is not None and not graph.adjacent(*pair):
        raise ScenarioError([f"disruption of non-adjacent pair {pair}"])
    if until == start:
        return []
    pair = canonical(*pair)
    return [LinkDown(start, pair, until), LinkUp(until, pair)]


def inject_node_join(position: Position, at: float,
                     region: Optional[tuple[float, float]] = None) -> NodeJoin:
    if region is not None:
        w, h = region
        if not (0 <= position.x <= w and 0 <= position.y <= h):
            raise ScenarioError([f"join position {position} outside the {w}x{h} region"])
    return NodeJoin(at, position)


def inject_power_increase(node: int, new_range: float, at: float,
                          current_range: Optional[float] = None) -> PowerIncrease:
    if current_range is not None and not new_range > current_range:
        raise ScenarioError([f"power change for node {node} is not an increase"])
    return PowerIncrease(at, node, new_range)


def inject_desync(node: int, at: float) -> Desync:
    return Desync(at, node)


def scenario_problems(graph: RadioGraph, scenario: Iterable, horizon: float,
                      region: Optional[tuple[float, float]] = None) -> list[tuple[int, str]]:
    """``(event index, problem)`` pairs, replaying structural changes in time order."""
    g = graph.copy()
    problems = []
    order = sorted(enumerate(scenario), key=lambda ie: (ie[1].at, ie[0]))
    for i, ev in order:
        def bad(msg):
            problems.append((i, msg))
        if not 0 <= ev.at <= horizon:
            bad(f"{type(ev).__name__} at {ev.at}s lies outside [0, {horizon}]")
        if isinstance(ev, (LinkDown, LinkUp)):
            a, b = ev.pair
            if not (0 <= a < g.node_count and 0 <= b < g.node_count) or not g.adjacent(a, b):
                bad(f"{type(ev).__name__} on nonexistent pair {tuple(ev.pair)}")
            if isinstance(ev, LinkDown) and ev.until < ev.at:
                bad(f"LinkDown on {tuple(ev.pair)} ends before it starts")
        elif isinstance(ev, NodeJoin):
            if region is not None:
                w, h = region
                if not (0 <= ev.position.x <= w and 0 <= ev.position.y <= h):
                    bad(f"NodeJoin position ({ev.position.x}, {ev.position.y}) outside region")
            g.add_node(ev.position, g.ranges[0] if g.ranges else 1.0)
        elif isinstance(ev, PowerIncrease):
            if not 0 <= ev.node < g.node_count:
                bad(f"PowerIncrease on unknown node {ev.node}")
            elif not ev.new_range > g.ranges[ev.node]:
                bad(f"PowerIncrease on node {ev.node} does not increase its range")
            else:
                g.set_range(ev.node, ev.new_range)
        elif isinstance(ev, Desync):
            if not 0 <= ev.node < g.node_count:
                bad(f"Desync on unknown node {ev.node}")
    return problems


def validate_scenario(graph: RadioGraph, scenario: Iterable, horizon: float,
                      region: Optional[tuple[float, float]] = None) -> list[str]:
    """Every problem with ``scenario`` as a message list (empty when valid)."""
    return [msg for _, msg in scenario_problems(graph, scenario, horizon, region)]


# --- event queue --------------------------------------------------------------

class EventQueue:
    """Min-heap keyed on ``(at, seq)``."""

    def __init__(self):
        self._heap: list[tuple] = []
        self._seq = itertools.count()

    def push(self, at: int, kind: str, node: Optional[int] = None, data: Any = None) -> int:
        seq = next(self._seq)
        heapq.heappush(self._heap, (at, seq, kind, node, data))
        return seq

    def pop(self) -> tuple:
        return heapq.heappop(self._heap)

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class SimSettings:
    airtime: float = 0.005
    # No collisions and no half-duplex loss.
    ideal_channel: bool = False
    sync_retries: int = 3
    sync_guard: float = 0.001
    stale_timeout: Optional[float] = None  # default 3 x Normal period


@dataclass(frozen=True)
class Transmission:
    start: int
    end: int
    sender: int
    message: Message
    attempt: int = 0


def deliver(tx: Transmission, neighbors: dict[int, set[int]], listening, recent: Iterable[Transmission],
            ideal: bool = False, known: Optional[set[tuple[int, int]]] = None) -> set[int]:
    """Nodes that receive ``tx``.

    A neighbour receives when it listened for the whole transmission and no
    other transmission it could hear (or its own) overlapped it. Unicast SYNC
    hops also need the pair to be a known link.
    """
    msg = tx.message
    cands = neighbors.get(tx.sender, ())
    if msg.dest is not None:
        if msg.dest not in cands:
            return set()
        if known is not None and canonical(tx.sender, msg.dest) not in known:
            return set()
        cands = (msg.dest,)
    out = set()
    overlapping = [] if ideal else [o for o in recent
                                    if o is not tx and o.start < tx.end and o.end > tx.start]
    for w in cands:
        if not listening(w, tx.start, tx.end):
            continue
        lost = False
        for o in overlapping:
            if o.sender == w or (o.sender != tx.sender and o.sender in neighbors.get(w, ())):
                lost = True
                break
        if not lost:
            out.add(w)
    return out


# --- simulation --------------------------------------------------------------

@dataclass
class SegmentSpec:
    members: set[int]
    links: Optional[set[tuple[int, int]]] = None   # None: every physical link among members


class Simulation:
    """One trial: nodes, segments, channel and the event loop."""

    def __init__(self, graph: RadioGraph, params: ProtocolParams, seed: int = 0,
                 segments: Sequence[SegmentSpec] = (), settings: SimSettings = SimSettings(),
                 targets: Optional[Iterable[int]] = None, trace: bool = False,
                 region: Optional[tuple[float, float]] = None):
        params.validate()
        self.graph = graph.copy()
        self.params = params
        self.settings = settings
        self.seed = seed
        self.region = region
        self.base_range = graph.ranges[0] if graph.ranges else 1.0
        self.queue = EventQueue()
        self.now = 0
        self.trace_on = trace
        self.trace: list[dict] = []
        self.air = ticks(settings.airtime)
        self.guard = ticks(settings.sync_guard)
        self.stale_timeout = ticks(settings.stale_timeout if settings.stale_timeout is not None
                                   else 3 * params.normal_period)
        self.world = random.Random(f"cnd:{seed}:world")
        self.targets = None if targets is None else set(targets)

        self.nodes: list[NodeRuntime] = []
        self.gen: list[int] = []
        self.awake_since: list[int] = []
        self.awake_until: list[int] = []
        self.awake_total: list[int] = []
        self.tx_busy: list[int] = []
        self.counts: list[dict[str, int]] = []

        self.segments: dict[int, Segment] = {}
        self._seg_ids = itertools.count()
        self.known: set[tuple[int, int]] = set()
        self.down: set[tuple[int, int]] = set()
        self._nbr_cache: Optional[dict[int, set[int]]] = None
        self.recent: list[Transmission] = []
        self.hidden_since: dict[tuple[int, int], int] = {}
        self.episodes: list[LinkEpisode] = []
        self.pending: dict[int, int] = {}
        self.detections: list[Detection] = []
        self.sync_seq: dict[int, itertools.count] = {}
        self.sync_log: dict[tuple[int, int], dict[int, int]] = {}
        self.sync_tx: dict[tuple[int, int], int] = {}

        for u in range(self.graph.node_count):
            self._add_runtime(u, 0)

        for spec in segments:
            self._install_segment(spec)
        for u in range(self.graph.node_count):
            if self.nodes[u].segment_id is None:
                self._mark_hidden(u, 0)
        for pair in self._physical_edges():
            if pair not in self.known:
                self.hidden_since[pair] = 0
        for u in range(self.graph.node_count):
            self._schedule_wake(u)

    # -- setup -----------------------------------------------------------

    def _jitter_seed(self, u: int, salt: str = "") -> int:
        return random.Random(f"cnd:{self.seed}:node:{u}:{salt}").getrandbits(63)

    def _add_runtime(self, u: int, now: int) -> None:
        node = proto.new_node(u, now, self.params, self._jitter_seed(u))
        self.nodes.append(node)
        self.gen.append(0)
        self.awake_since.append(now)
        self.awake_until.append(now)
        self.awake_total.append(0)
        self.tx_busy.append(now)
        self.counts.append({})

    def _install_segment(self, spec: SegmentSpec) -> None:
        members = set(spec.members)
        if spec.links is None:
            links = {p for p in self.graph.edges() if p[0] in members and p[1] in members}
        else:
            links = {canonical(*p) for p in spec.links}
        for a, b in links:
            if not self.graph.adjacent(a, b) or a not in members or b not in members:
                raise ScenarioError([f"segment link {(a, b)} is not a physical member link"])
        if len(members) < 2 or len(proto.split_components(members, links)) != 1:
            raise ScenarioError([f"segment {sorted(members)} is not connected by its links"])
        sid = next(self._seg_ids)
        seg = Segment(sid, min(members), members, links)
        seg.report_all()
        self.segments[sid] = seg
        self.known |= seg.known_links
        for m in members:
            node = self.nodes[m]
            proto.join_segment(node, sid, 0, self.params)
        for a, b in seg.known_links:
            proto.record_neighbor(self.nodes[a], b, self.nodes[b].schedule.summary())
            proto.record_neighbor(self.nodes[b], a, self.nodes[a].schedule.summary())
        for m in members:
            node = self.nodes[m]
            self._update_rate(m)
            period = ticks(proto.wake_period(node.phase, self.params, node.hello_rate))
            proto.restart_cycle(node, 0, period)

    # -- helpers ---------------------------------------------------------

    def _neighbors(self) -> dict[int, set[int]]:
        """Physical adjacency minus links that are currently obstructed."""
        if self._nbr_cache is None:
            adj = self.graph.adjacency
            if not self.down:
                self._nbr_cache = adj
            else:
                out = {u: set(n) for u, n in adj.items()}
                for a, b in self.down:
                    out[a].discard(b)
                    out[b].discard(a)
                self._nbr_cache = out
        return self._nbr_cache

    def _physical_edges(self) -> set[tuple[int, int]]:
        return self.graph.edges() - self.down

    def _log(self, kind: str, node: Optional[int] = None, **info) -> None:
        if self.trace_on:
            rec = {"t": self.now, "kind": kind, "node": node}
            rec.update(info)
            self.trace.append(rec)

    def _listening(self, w: int, start: int, end: int) -> bool:
        return self.awake_since[w] <= start and self.awake_until[w] >= end

    def _awake(self, u: int, start: int, until: int) -> None:
        if start > self.awake_until[u]:
            self.awake_total[u] += self.awake_until[u] - self.awake_since[u]
            self.awake_since[u] = start
            self.awake_until[u] = until
        elif until > self.awake_until[u]:
            self.awake_until[u] = until
        else:
            return
        self._log("awake", u, **{"from": start, "until": until})
        if self.trace_on:
            self.queue.push(self.awake_until[u], "sleep", u, self.awake_until[u])

    def _schedule_wake(self, u: int) -> None:
        self.queue.push(self.nodes[u].schedule.next_wake, "wake", u, self.gen[u])

    def _restart(self, u: int, now: int, period: int) -> None:
        self.gen[u] += 1
        proto.restart_cycle(self.nodes[u], now, period)
        self._schedule_wake(u)

    def _mark_hidden(self, u: int, now: int) -> None:
        if self.targets is None or u in self.targets:
            self.pending.setdefault(u, now)

    def _mark_detected(self, u: int, now: int) -> None:
        if u in self.pending:
            hidden_at = self.pending.pop(u)
            self.detections.append(Detection(u, proto.seconds(hidden_at), proto.seconds(now),
                                             self.params.target_horizon))

    def _send(self, u: int, msg: Message, at: int, attempt: int = 0) -> None:
        at = max(at, self.tx_busy[u])
        self.tx_busy[u] = at + self.air
        self.queue.push(at, "tx_start", u, (msg, attempt))

    def _transmit(self, u: int, msg: Message, attempt: int = 0) -> None:
        start = self.now
        tx = Transmission(start, start + self.air, u, msg, attempt)
        self.tx_busy[u] = max(self.tx_busy[u], tx.end)
        self.recent.append(tx)
        kind = msg.kind.value
        self.counts[u][kind] = self.counts[u].get(kind, 0) + 1
        self._log("tx", u, msg=kind, dest=msg.dest)
        self._awake(u, start, tx.end)
        self.queue.push(tx.end, "tx_end", u, tx)

    def _oracle_estimate(self, u: int, seg: Segment, nbrs: dict[int, set[int]]) -> Optional[int]:
        degs = []
        for x in nbrs[u]:
            if self.nodes[x].segment_id is None:
                degs.append(sum(1 for m in seg.members if m in nbrs[x]))
        return min(degs) if degs else None

    def _update_rate(self, u: int) -> None:
        node = self.nodes[u]
        if node.phase is not Phase.NORMAL:
            node.hello_rate = 0.0
            return
        p = self.params
        seg = self.segments[node.segment_id]
        if p.policy is Policy.ALL_INIT or not p.load_sharing:
            node.hello_rate = 0.0
        elif p.policy is Policy.ORACLE and p.fixed_estimate is None:
            est = self._oracle_estimate(u, seg, self._neighbors())
            node.hello_rate = 0.0 if est is None else proto.assign_hello_rate(est, p)
        else:
            node.hello_rate = proto.assign_hello_rate(proto.estimate(node, seg, p), p)

    # -- segments --------------------------------------------------------

    def _resegment(self, seg: Segment, now: int) -> None:
        """Split ``seg`` along its surviving known links; isolated members go back to Init."""
        del self.segments[seg.id]
        keep_id = True
        for comp in proto.split_components(seg.members, seg.known_links):
            if len(comp) == 1:
                (x,) = comp
                node = self.nodes[x]
                proto.leave_segment(node, now, self.params)
                node.hello_burst_until = None
                node.schedule.active_len = ticks(self.params.init_active)
                self._restart(x, now, ticks(self.params.init_period))
                self._mark_hidden(x, now)
                self._log("rehidden", x)
                continue
            sid = seg.id if keep_id else next(self._seg_ids)
            keep_id = False
            links = {p for p in seg.known_links if p[0] in comp}
            new = Segment(sid, min(comp), comp, links)
            new.degree_reports = {m: d for m, d in seg.degree_reports.items() if m in comp}
            self.segments[sid] = new
            for m in comp:
                self.nodes[m].segment_id = sid

    def _drop_known(self, pair: tuple[int, int], now: int) -> Optional[Segment]:
        a, b = pair
        self.known.discard(pair)
        proto.forget_neighbor(self.nodes[a], b, now)
        proto.forget_neighbor(self.nodes[b], a, now)
        sid = self.nodes[a].segment_id
        seg = self.segments.get(sid) if sid is not None else None
        if seg is not None:
            seg.known_links.discard(pair)
        return seg

    def _link_discovered(self, hearer: int, sender: int, now: int) -> None:
        pair = canonical(hearer, sender)
        h, s = self.nodes[hearer], self.nodes[sender]
        sh, ss = h.segment_id, s.segment_id
        origin = None
        newly = [x for x, sid in ((hearer, sh), (sender, ss)) if sid is None]
        if sh is None and ss is None:
            sid = next(self._seg_ids)
            seg = Segment(sid, min(pair), set(pair), {pair})
            self.segments[sid] = seg
            proto.join_segment(h, sid, now, self.params)
            proto.join_segment(s, sid, now, self.params)
            origin = hearer
        elif sh is None or ss is None:
            joiner, member = (hearer, sender) if sh is None else (sender, hearer)
            seg = self.segments[self.nodes[member].segment_id]
            seg.members.add(joiner)
            seg.known_links.add(pair)
            seg.leader = min(seg.members)
            proto.join_segment(self.nodes[joiner], seg.id, now, self.params)
            origin = member
        elif sh != ss:
            a, b = self.segments.pop(sh), self.segments.pop(ss)
            seg = proto.merge_segments(a, b, pair)
            self.segments[seg.id] = seg
            for m in seg.members:
                self.nodes[m].segment_id = seg.id
            origin = hearer
        else:
            seg = self.segments[sh]
            seg.known_links.add(pair)
        self.known.add(pair)
        for x in pair:
            seg.degree_reports[x] = seg.degree(x)
        seg.recompute_average()
        since = self.hidden_since.pop(pair, None)
        if since is not None:
            self.episodes.append(LinkEpisode(pair, proto.seconds(since), proto.seconds(now)))
        for x in newly:
            self._mark_detected(x, now)
        self._log("discovered", hearer, peer=sender, segment=seg.id)
        if origin is not None:
            self._issue_sync(origin, now + self.air)

    # -- SYNC -------------------------------------------------------------

    def start_flood(self, origin: int, at: float) -> None:
        """Have ``origin`` issue a SYNC at ``at`` seconds (as after a discovery)."""
        self.queue.push(ticks(at), "sync_issue", origin, None)

    def _issue_sync(self, origin: int, at: int) -> None:
        if at <= self.now:
            self._flood_from(origin)
        else:
            self.queue.push(at, "sync_issue", origin, None)

    def _flood_from(self, origin: int) -> None:
        node = self.nodes[origin]
        if node.segment_id is None:
            return
        seq = next(self.sync_seq.setdefault(origin, itertools.count()))
        p = self.params
        msg = Message(Kind.SYNC, origin, node.phase, node.segment_id, node.schedule.summary(),
                      origin=origin, seq=seq,
                      directive=BurstDirective(ticks(p.burst_window), ticks(p.burst_period)))
        self.sync_log[(origin, seq)] = {}
        self.sync_tx[(origin, seq)] = 0
        self._log("sync_issue", origin, seq=seq)
        self._process_sync(origin, msg, None)

    def _process_sync(self, u: int, msg: Message, came_from: Optional[int]) -> None:
        node = self.nodes[u]
        key = (msg.origin, msg.seq)
        if not proto.accept_sync(node, msg):
            self._log("sync_dup", u, origin=msg.origin, seq=msg.seq)
            return
        log = self.sync_log.setdefault(key, {})
        log[u] = log.get(u, 0) + 1
        now = self.now
        until = proto.start_burst(node, now, msg.directive)
        self._awake(u, now, until)
        self._restart(u, now, msg.directive.period)
        seg = self.segments[node.segment_id]
        seg.degree_reports[u] = seg.degree(u)
        self._log("sync_rx", u, origin=msg.origin, seq=msg.seq, hops=msg.hops)
        fwd = replace(msg, sender=u, hops=msg.hops + 1, segment_id=node.segment_id)
        for b in sorted(seg.neighbors(u)):
            if b != came_from:
                self._relay(u, b, fwd, now, 0)

    def _hop_time(self, a: int, b: int, now: int) -> int:
        """Earliest instant from ``now`` at which ``a`` expects ``b`` to be listening."""
        if self._listening(b, now, now + self.air):
            return now
        summary = self.nodes[a].known_schedules.get(b)
        peer = self.nodes[b].schedule
        if summary is not None and summary.epoch == peer.epoch:
            wake = peer.next_wake
        elif summary is not None:
            wake = summary.next_wake
        else:
            wake = now
        return max(now, wake + self.air + self.guard)

    def _relay(self, a: int, b: int, msg: Message, now: int, attempt: int) -> None:
        """Unicast a SYNC hop timed to the receiver's known wake schedule."""
        self._send(a, replace(msg, dest=b), self._hop_time(a, b, now), attempt)

    # -- event handlers ------------------------------------------------------

    def _on_wake(self, u: int, gen: int) -> None:
        if gen != self.gen[u]:
            return
        node = self.nodes[u]
        now = self.now
        proto.purge_stale(node, now, self.stale_timeout)
        if node.phase is Phase.INIT:
            proto.init_to_normal(node, now, self.params)
        else:
            self._update_rate(u)
        self._log("wake", u, phase=node.phase.value)
        for action in proto.on_wake(node, now, self.params):
            if isinstance(action, proto.SendHello):
                self._send(u, action.message, now)
            elif isinstance(action, proto.Listen):
                self._awake(u, now, action.until)
            else:
                self.queue.push(action.at, "wake", u, self.gen[u])

    def _on_tx_start(self, u: int, data) -> None:
        msg, attempt = data
        if msg.kind is Kind.SYNC:
            pair = canonical(u, msg.dest)
            if pair not in self.known:
                self._log("sync_abandoned", u, dest=msg.dest)
                return
            # queueing behind other sends may have pushed us past the receiver's window
            at = self._hop_time(u, msg.dest, self.now)
            if at > self.now:
                self._send(u, msg, at, attempt)
                return
            self.sync_tx[(msg.origin, msg.seq)] = self.sync_tx.get((msg.origin, msg.seq), 0) + 1
        elif msg.kind is Kind.HELLO:
            # refresh the payload: the sender's state may have changed since the wake
            msg = self.nodes[u].hello()
        self._transmit(u, msg, attempt)

    def _on_tx_end(self, u: int, tx: Transmission) -> None:
        now = self.now
        self.recent = [o for o in self.recent if o.end > now - self.air]
        nbrs = self._neighbors()
        rx = deliver(tx, nbrs, self._listening, self.recent, self.settings.ideal_channel,
                     self.known if tx.message.kind is Kind.SYNC else None)
        msg = tx.message
        if msg.kind is Kind.HELLO:
            for w in sorted(rx):
                self._heard_hello(w, u, msg)
        elif msg.kind is Kind.SYNC:
            b = msg.dest
            if b in rx:
                self._process_sync(b, msg, u)
            elif canonical(u, b) in self.known and tx.attempt < self.settings.sync_retries:
                self._relay(u, b, msg, now, tx.attempt + 1)
            else:
                self._log("sync_lost", b, origin=msg.origin, seq=msg.seq)

    def _heard_hello(self, w: int, s: int, msg: Message) -> None:
        if s not in self._neighbors()[w]:
            return
        node = self.nodes[w]
        pair = canonical(w, s)
        outcome = proto.on_hello(node, msg, self.now, pair in self.known)
        self._log("hello_rx", w, sender=s, outcome=outcome.value)
        if outcome is proto.Outcome.REFRESH:
            return
        # handshake: the reply lands inside the sender's active window
        proto.record_neighbor(self.nodes[s], w, node.schedule.summary())
        self._send(w, Message(Kind.ACK, w, node.phase, node.segment_id, node.schedule.summary(), dest=s),
                   self.now)
        self._link_discovered(w, s, self.now)

    def _on_link_down(self, pair: tuple[int, int], until: int) -> None:
        self._nbr_cache = None
        pair = canonical(*pair)
        self.down.add(pair)
        self.hidden_since.pop(pair, None)
        if pair in self.known:
            seg = self._drop_known(pair, self.now)
            if seg is not None:
                self._resegment(seg, self.now)
        self._log("link_down", None, pair=list(pair), until=until)

    def _on_link_up(self, pair: tuple[int, int]) -> None:
        self._nbr_cache = None
        pair = canonical(*pair)
        self.down.discard(pair)
        if self.graph.adjacent(*pair) and pair not in self.known:
            self.hidden_since.setdefault(pair, self.now)
        self._log("link_up", None, pair=list(pair))

    def _on_join(self, position: Position) -> None:
        self._nbr_cache = None
        u = self.graph.add_node(position, self.base_range)
        self._add_runtime(u, self.now)
        for v in self.graph.adjacency[u]:
            self.hidden_since[canonical(u, v)] = self.now
        self._mark_hidden(u, self.now)
        self._schedule_wake(u)
        self._log("join", u, x=position.x, y=position.y)

    def _on_power(self, u: int, new_range: float) -> None:
        self._nbr_cache = None
        for pair in sorted(self.graph.set_range(u, new_range)):
            if pair not in self.down:
                self.hidden_since.setdefault(pair, self.now)
        self._log("power", u, range=new_range)

    def _on_desync(self, u: int) -> None:
        now = self.now
        old = self.nodes[u]
        sid = old.segment_id
        if sid is not None:
            seg = self.segments[sid]
            for v in sorted(seg.neighbors(u)):
                pair = canonical(u, v)
                self._drop_known(pair, now)
                if pair not in self.down:
                    self.hidden_since[pair] = now
            seg.members.discard(u)
            seg.degree_reports.pop(u, None)
            if seg.members:
                seg.leader = min(seg.members)
                self._resegment(seg, now)
            else:
                del self.segments[sid]
        fresh = proto.new_node(u, now, self.params, self._jitter_seed(u, f"desync:{now}"))
        fresh.schedule.epoch = old.schedule.epoch + 1
        self.nodes[u] = fresh
        self.awake_until[u] = min(self.awake_until[u], now)
        self.gen[u] += 1
        self._schedule_wake(u)
        self._mark_hidden(u, now)
        self._log("desync", u)

    # -- driver -----------------------------------------------------------

    def schedule(self, scenario: Iterable) -> None:
        scenario = list(scenario)
        for ev in sorted(enumerate(scenario), key=lambda ie: (ie[1].at, ie[0])):
            ev = ev[1]
            at = ticks(ev.at)
            if isinstance(ev, LinkDown):
                self.queue.push(at, "link_down", None, (canonical(*ev.pair), ticks(ev.until)))
            elif isinstance(ev, LinkUp):
                self.queue.push(at, "link_up", None, canonical(*ev.pair))
            elif isinstance(ev, NodeJoin):
                self.queue.push(at, "join", None, ev.position)
            elif isinstance(ev, PowerIncrease):
                self.queue.push(at, "power", ev.node, ev.new_range)
            elif isinstance(ev, Desync):
                self.queue.push(at, "desync", ev.node, None)
            else:
                raise ScenarioError([f"unknown scenario event {ev!r}"])

    def step(self) -> tuple:
        at, seq, kind, node, data = self.queue.pop()
        self.now = at
        if kind == "wake":
            self._on_wake(node, data)
        elif kind == "tx_start":
            self._on_tx_start(node, data)
        elif kind == "tx_end":
            self._on_tx_end(node, data)
        elif kind == "sleep":
            if self.awake_until[node] == data:
                self._log("sleep", node)
        elif kind == "sync_issue":
            self._flood_from(node)
        elif kind == "link_down":
            self._on_link_down(*data)
        elif kind == "link_up":
            self._on_link_up(data)
        elif kind == "join":
            self._on_join(data)
        elif kind == "power":
            self._on_power(node, data)
        elif kind == "desync":
            self._on_desync(node)
        return at, seq, kind

    def run(self, until: float) -> TrialMetrics:
        """Process every event up to ``until`` seconds and return the metrics so far."""
        horizon = ticks(until)
        while self.queue and self.queue.peek_time() <= horizon:
            self.step()
        self.now = max(self.now, horizon)
        return self.metrics(horizon)

    def metrics(self, horizon: int) -> TrialMetrics:
        awake = []
        for u in range(len(self.nodes)):
            total = self.awake_total[u]
            if self.awake_since[u] < horizon:
                total += min(self.awake_until[u], horizon) - self.awake_since[u]
            awake.append(proto.seconds(total))
        detections = list(self.detections)
        for u, since in sorted(self.pending.items()):
            detections.append(Detection(u, proto.seconds(since), None, self.params.target_horizon))
        return TrialMetrics(
            total_time=proto.seconds(horizon),
            awake=awake,
            counts=[dict(sorted(c.items())) for c in self.counts],
            links=list(self.episodes),
            detections=detections,
            converged=self.converged(),
            seed=self.seed,
        )

    # -- inspection ---------------------------------------------------------

    def hidden_links(self) -> set[tuple[int, int]]:
        return self._physical_edges() - self.known

    def intra_segment_hidden(self) -> set[tuple[int, int]]:
        return {(a, b) for a, b in self.hidden_links()
                if self.nodes[a].segment_id is not None
                and self.nodes[a].segment_id == self.nodes[b].segment_id}

    def converged(self) -> bool:
        return self.known == self._physical_edges()

    def check_invariants(self) -> list[str]:
        """Violated protocol invariants at the current instant."""
        bad = []
        adj = self._neighbors()
        for node in self.nodes:
            if (node.phase is Phase.NORMAL) != (node.segment_id is not None):
                bad.append(f"node {node.id}: phase {node.phase.value} with segment {node.segment_id}")
            live = node.known_neighbors - node.stale.keys()
            for v in live:
                peer = self.nodes[v]
                if node.id not in peer.known_neighbors - peer.stale.keys():
                    bad.append(f"node {node.id} knows {v} but not vice versa")
        for seg in self.segments.values():
            if seg.leader != min(seg.members):
                bad.append(f"segment {seg.id}: leader {seg.leader} is not the minimum id")
            for a, b in seg.known_links:
                if b not in adj[a]:
                    bad.append(f"segment {seg.id}: link {(a, b)} is not physical")
                if a not in seg.members or b not in seg.members:
                    bad.append(f"segment {seg.id}: link {(a, b)} leaves the segment")
            if len(proto.split_components(seg.members, seg.known_links)) != 1:
                bad.append(f"segment {seg.id} is not connected")
            for m in seg.members:
                if self.nodes[m].segment_id != seg.id:
                    bad.append(f"node {m} listed in segment {seg.id} but claims {self.nodes[m].segment_id}")
        union = set().union(*(s.known_links for s in self.segments.values())) if self.segments else set()
        if union != self.known:
            bad.append("segment link sets disagree with the global known set")
        return bad


def run_trial(graph: RadioGraph, params: ProtocolParams, scenario: Sequence = (), horizon: float = 100.0,
              seed: int = 0, **kwargs) -> tuple[TrialMetrics, Simulation]:
    """Validate ``scenario``, simulate to ``horizon`` seconds, return metrics and final state."""
    if not horizon > 0:
        raise ScenarioError([f"horizon must be positive, got {horizon}"])
    problems = validate_scenario(graph, scenario, horizon, kwargs.get("region"))
    if problems:
        raise ScenarioError(problems)
    sim = Simulation(graph, params, seed=seed, **kwargs)
    sim.schedule(scenario)
    return sim.run(horizon), sim
