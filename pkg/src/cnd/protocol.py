"""Per-node continuous neighbour discovery logic.

Everything in this module is driven by the simulator's event loop. Times are
integer microsecond ticks; durations in :class:`ProtocolParams` are seconds
and converted with :func:`ticks`.
"""

from __future__ import annotations

import enum
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional

from .topology import canonical

TICKS_PER_SECOND = 1_000_000


def ticks(seconds: float) -> int:
    return int(round(seconds * TICKS_PER_SECOND))


def seconds(t: int) -> float:
    return t / TICKS_PER_SECOND


class ProtocolError(RuntimeError):
    pass


class ParameterError(ValueError):
    pass


class MembershipError(ValueError):
    pass


class EstimatorUnavailable(RuntimeError):
    pass


class Phase(enum.Enum):
    INIT = "init"
    NORMAL = "normal"


class Estimator(enum.Enum):
    LEADER_AVERAGE = "leader_average"
    SELF_DEGREE = "self_degree"
    COMBINED = "combined"


class Policy(enum.Enum):
    """How Normal nodes pace their HELLOs.

    ``LOAD_SHARED`` divides the detection load using the configured estimator,
    ``ORACLE`` divides it using true in-segment degrees, ``ALL_INIT`` keeps
    every node at Init cadence (the no-cooperation baseline).
    """

    LOAD_SHARED = "load_shared"
    ORACLE = "oracle"
    ALL_INIT = "all_init"


@dataclass(frozen=True)
class ProtocolParams:
    init_period: float = 1.0
    normal_period: float = 30.0
    init_active: float = 0.1
    normal_active: float = 0.1
    init_timeout: float = 60.0
    target_probability: float = 0.9
    target_horizon: float = 100.0
    burst_window: Optional[float] = None
    burst_period: Optional[float] = None
    estimator: Estimator = Estimator.LEADER_AVERAGE
    correlation_weight: float = 0.5
    load_sharing: bool = True
    policy: Policy = Policy.LOAD_SHARED
    # Overrides every node's estimate; used for perfect-knowledge experiments.
    fixed_estimate: Optional[float] = None

    def __post_init__(self):
        if self.burst_window is None:
            object.__setattr__(self, "burst_window", 2 * self.normal_period)
        if self.burst_period is None:
            object.__setattr__(self, "burst_period", self.init_period)

    def problems(self) -> list[tuple[str, str]]:
        """All violated constraints as ``(field, message)`` pairs."""
        out = []
        for name in ("init_period", "normal_period", "init_active", "normal_active",
                     "init_timeout", "target_horizon", "burst_window", "burst_period"):
            if not getattr(self, name) > 0:
                out.append((name, "must be positive"))
        if not 0 < self.target_probability < 1:
            out.append(("target_probability", "must lie strictly between 0 and 1"))
        if not self.init_period < self.normal_period:
            out.append(("normal_period", "must exceed init_period"))
        if not self.init_active < self.init_period:
            out.append(("init_active", "must be shorter than init_period"))
        if not self.normal_active < self.normal_period:
            out.append(("normal_active", "must be shorter than normal_period"))
        if not 0 <= self.correlation_weight <= 1:
            out.append(("correlation_weight", "must lie in [0, 1]"))
        if self.fixed_estimate is not None and not self.fixed_estimate > 0:
            out.append(("fixed_estimate", "must be positive"))
        return out

    def validate(self) -> "ProtocolParams":
        bad = self.problems()
        if bad:
            raise ParameterError("; ".join(f"{k}: {m}" for k, m in bad))
        return self

    def with_policy(self, policy: Policy) -> "ProtocolParams":
        return replace(self, policy=policy)


@dataclass
class WakeSchedule:
    period: int
    active_len: int
    next_wake: int
    jitter_seed: int
    cycle_start: int = 0
    # bumped whenever the node loses its clock; neighbours holding an older
    # epoch have a stale picture of this schedule
    epoch: int = 0

    def summary(self) -> "ScheduleSummary":
        return ScheduleSummary(self.period, self.active_len, self.next_wake, self.epoch)


@dataclass(frozen=True)
class ScheduleSummary:
    period: int
    active_len: int
    next_wake: int
    epoch: int


class Kind(enum.Enum):
    HELLO = "hello"
    ACK = "ack"
    SYNC = "sync"


@dataclass(frozen=True)
class BurstDirective:
    window: int
    period: int


@dataclass(frozen=True)
class Message:
    kind: Kind
    sender: int
    phase: Phase = Phase.INIT
    segment_id: Optional[int] = None
    schedule: Optional[ScheduleSummary] = None
    # SYNC only
    origin: Optional[int] = None
    seq: Optional[int] = None
    directive: Optional[BurstDirective] = None
    hops: int = 0
    dest: Optional[int] = None


@dataclass
class NodeRuntime:
    id: int
    phase: Phase
    schedule: WakeSchedule
    rng: random.Random
    known_neighbors: set[int] = field(default_factory=set)
    segment_id: Optional[int] = None
    known_schedules: dict[int, ScheduleSummary] = field(default_factory=dict)
    hello_burst_until: Optional[int] = None
    hello_rate: float = 0.0
    init_started: int = 0
    sync_seen: set[tuple[int, int]] = field(default_factory=set)
    # neighbour -> time its link was lost; purged after the stale timeout
    stale: dict[int, int] = field(default_factory=dict)

    def in_burst(self, now: int) -> bool:
        return self.hello_burst_until is not None and now < self.hello_burst_until

    def hello(self) -> Message:
        return Message(Kind.HELLO, self.id, self.phase, self.segment_id, self.schedule.summary())


def new_node(node_id: int, now: int, params: ProtocolParams, jitter_seed: int) -> NodeRuntime:
    """A freshly powered (or freshly desynchronised) node in Init."""
    rng = random.Random(jitter_seed)
    period = ticks(params.init_period)
    sched = WakeSchedule(period=period, active_len=ticks(params.init_active), next_wake=0,
                         jitter_seed=jitter_seed, cycle_start=now)
    sched.next_wake = next_wake(sched, now, rng)
    return NodeRuntime(id=node_id, phase=Phase.INIT, schedule=sched, rng=rng, init_started=now)


@dataclass
class Segment:
    id: int
    leader: int
    members: set[int]
    known_links: set[tuple[int, int]]
    avg_in_segment_degree: Fraction = Fraction(0)
    degree_reports: dict[int, int] = field(default_factory=dict)
    stale: bool = False

    def __post_init__(self):
        self.known_links = {canonical(*p) for p in self.known_links}
        self.recompute_average()

    def degree(self, u: int) -> int:
        return sum(1 for a, b in self.known_links if u in (a, b))

    def neighbors(self, u: int) -> set[int]:
        return {b if a == u else a for a, b in self.known_links if u in (a, b)}

    def recompute_average(self) -> Fraction:
        if self.members:
            self.avg_in_segment_degree = Fraction(2 * len(self.known_links), len(self.members))
        return self.avg_in_segment_degree

    def report_all(self) -> None:
        self.degree_reports = {m: self.degree(m) for m in self.members}


# --- scheduling -----------------------------------------------------------

def aggregate_rate(params: ProtocolParams) -> float:
    """Segment-wide HELLO rate needed for detection w.p. P within T.

    A hidden Init node listens a fraction ``d`` of the time; Poisson HELLO
    arrivals at rate ``L`` are heard within ``T`` with probability
    ``1 - exp(-L d T)``.
    """
    p = params.target_probability
    duty = params.init_active / params.init_period if params.init_period > 0 else 0.0
    if not 0 < p < 1:
        raise ParameterError(f"target probability {p} is not achievable")
    if duty <= 0 or params.target_horizon <= 0:
        raise ParameterError("Init duty cycle and target horizon must be positive")
    return math.log(1.0 / (1.0 - p)) / (duty * params.target_horizon)


def assign_hello_rate(estimate: float, params: ProtocolParams) -> float:
    """Per-node HELLO rate when ``estimate`` nodes share the detection load."""
    share = max(1, math.ceil(max(1.0, float(estimate))))
    return aggregate_rate(params) / share


def wake_period(phase: Phase, params: ProtocolParams, hello_rate: float = 0.0) -> float:
    """Cycle length in seconds for a node in ``phase``."""
    if phase is Phase.INIT or params.policy is Policy.ALL_INIT:
        return params.init_period
    if params.load_sharing and hello_rate > 0:
        return min(params.normal_period, 1.0 / hello_rate)
    return params.normal_period


def active_length(phase: Phase, params: ProtocolParams) -> float:
    if phase is Phase.INIT or params.policy is Policy.ALL_INIT:
        return params.init_active
    return params.normal_active


def next_wake(schedule: WakeSchedule, now: int, rng: random.Random) -> int:
    """Wake instant for the cycle starting at ``now``: uniform in ``(now, now + period]``."""
    return now + rng.randint(1, schedule.period)


@dataclass(frozen=True)
class SendHello:
    message: Message


@dataclass(frozen=True)
class Listen:
    until: int


@dataclass(frozen=True)
class ScheduleWake:
    at: int


def on_wake(node: NodeRuntime, now: int, params: ProtocolParams) -> list:
    """Broadcast a HELLO, listen, and plan the next cycle.

    Inside a burst window the next cycle uses the burst period; otherwise the
    period for the node's phase and assigned rate.
    """
    sched = node.schedule
    listen = ticks(active_length(node.phase, params))
    cycle_start = sched.cycle_start + sched.period
    if node.in_burst(cycle_start):
        period = ticks(params.burst_period)
    else:
        period = ticks(wake_period(node.phase, params, node.hello_rate))
    sched.period = period
    sched.active_len = listen
    sched.cycle_start = cycle_start
    sched.next_wake = next_wake(sched, cycle_start, node.rng)
    return [SendHello(node.hello()), Listen(now + listen), ScheduleWake(sched.next_wake)]


def restart_cycle(node: NodeRuntime, now: int, period: int) -> int:
    """Abandon the pending wake and start a fresh cycle at ``now``."""
    sched = node.schedule
    sched.period = period
    sched.cycle_start = now
    sched.next_wake = next_wake(sched, now, node.rng)
    return sched.next_wake


# --- discovery --------------------------------------------------------------

class Outcome(enum.Enum):
    NEW_NODE = "new_node"              # sender segmentless
    OTHER_SEGMENT = "other_segment"    # sender in a different segment (or hearer has none)
    INTRA_SEGMENT = "intra_segment"    # hidden link inside the hearer's segment
    REFRESH = "refresh"                # already known


def classify_hello(node: NodeRuntime, hello: Message, known_link: bool) -> Outcome:
    if hello.sender == node.id:
        raise ProtocolError(f"node {node.id} heard its own HELLO")
    if known_link and hello.sender in node.known_neighbors:
        return Outcome.REFRESH
    if hello.segment_id is None:
        return Outcome.NEW_NODE
    if node.segment_id is not None and hello.segment_id == node.segment_id:
        return Outcome.INTRA_SEGMENT
    return Outcome.OTHER_SEGMENT


def record_neighbor(node: NodeRuntime, other: int, summary: Optional[ScheduleSummary]) -> None:
    node.known_neighbors.add(other)
    node.stale.pop(other, None)
    if summary is not None:
        node.known_schedules[other] = summary


def on_hello(node: NodeRuntime, hello: Message, now: int, known_link: bool = False) -> Outcome:
    """Classify a heard HELLO and record the sender as a neighbour."""
    outcome = classify_hello(node, hello, known_link)
    record_neighbor(node, hello.sender, hello.schedule)
    return outcome


def forget_neighbor(node: NodeRuntime, other: int, now: int) -> None:
    """Mark a neighbour stale; the entry is purged after the stale timeout."""
    if other in node.known_neighbors:
        node.stale[other] = now


def purge_stale(node: NodeRuntime, now: int, timeout: int) -> list[int]:
    gone = [w for w, since in node.stale.items() if now - since >= timeout]
    for w in gone:
        del node.stale[w]
        node.known_neighbors.discard(w)
        node.known_schedules.pop(w, None)
    return gone


def join_segment(node: NodeRuntime, segment_id: int, now: int, params: ProtocolParams) -> NodeRuntime:
    node.segment_id = segment_id
    return init_to_normal(node, now, params)


def leave_segment(node: NodeRuntime, now: int, params: ProtocolParams) -> None:
    """Back to Init: the node is hidden again and must be rediscovered."""
    node.segment_id = None
    node.phase = Phase.INIT
    node.hello_rate = 0.0
    node.init_started = now


def init_to_normal(node: NodeRuntime, now: int, params: ProtocolParams) -> NodeRuntime:
    """Leave Init once the node belongs to a segment.

    A node that hits the Init timeout without any neighbour restarts its Init
    period; continuous discovery needs a segment to cooperate with.
    """
    if node.phase is Phase.NORMAL:
        return node
    if node.segment_id is None:
        if now - node.init_started >= ticks(params.init_timeout):
            node.init_started = now
        return node
    node.phase = Phase.NORMAL
    node.schedule.active_len = ticks(active_length(Phase.NORMAL, params))
    return node


# --- SYNC flooding ----------------------------------------------------------

@dataclass
class FloodPlan:
    origin: int
    seq: int
    hops: dict[int, int]
    parent: dict[int, Optional[int]]
    transmissions: int
    duplicates: int
    processed: dict[int, int]


def issue_sync(discoverer: int, segment: Segment, directive: BurstDirective, seq: int = 0) -> FloodPlan:
    """Flood a SYNC over the segment's known links in synchronous rounds.

    Every receiver forwards once to all its known neighbours except the one
    it heard the SYNC from; repeated ``(origin, seq)`` copies are dropped.
    """
    if discoverer not in segment.members:
        raise MembershipError(f"node {discoverer} is not in segment {segment.id}")
    adj: dict[int, list[int]] = {m: [] for m in segment.members}
    for a, b in segment.known_links:
        adj[a].append(b)
        adj[b].append(a)
    seen = {discoverer}
    processed = {discoverer: 1}
    hops = {discoverer: 0}
    parent: dict[int, Optional[int]] = {discoverer: None}
    transmissions = duplicates = 0
    frontier = deque([discoverer])
    while frontier:
        u = frontier.popleft()
        for w in sorted(adj[u]):
            if w == parent[u]:
                continue
            transmissions += 1
            if w in seen:
                duplicates += 1
                continue
            seen.add(w)
            processed[w] = 1
            hops[w] = hops[u] + 1
            parent[w] = u
            frontier.append(w)
    return FloodPlan(discoverer, seq, hops, parent, transmissions, duplicates, processed)


def accept_sync(node: NodeRuntime, msg: Message) -> bool:
    """Duplicate suppression by ``(origin, seq)``."""
    key = (msg.origin, msg.seq)
    if key in node.sync_seen:
        return False
    node.sync_seen.add(key)
    return True


def start_burst(node: NodeRuntime, now: int, directive: BurstDirective) -> int:
    until = now + directive.window
    if node.hello_burst_until is None or until > node.hello_burst_until:
        node.hello_burst_until = until
    return node.hello_burst_until


def merge_segments(a: Segment, b: Segment, bridge: tuple[int, int], new_id: Optional[int] = None) -> Segment:
    """Join two segments across a newly discovered link."""
    if a.id == b.id:
        raise MembershipError("cannot merge a segment with itself")
    if a.members & b.members:
        raise MembershipError("segments share members")
    x, y = bridge
    if not ((x in a.members and y in b.members) or (x in b.members and y in a.members)):
        raise MembershipError(f"bridge {bridge} does not connect the two segments")
    members = a.members | b.members
    leader = min(members)
    if new_id is None:
        new_id = a.id if leader in a.members else b.id
    merged = Segment(new_id, leader, members, a.known_links | b.known_links | {canonical(x, y)})
    merged.degree_reports = {**a.degree_reports, **b.degree_reports}
    return merged


def split_components(members: Iterable[int], links: Iterable[tuple[int, int]]) -> list[set[int]]:
    """Connected components of ``members`` under ``links``, smallest id first."""
    members = set(members)
    adj: dict[int, set[int]] = {m: set() for m in members}
    for a, b in links:
        if a in adj and b in adj:
            adj[a].add(b)
            adj[b].add(a)
    out, seen = [], set()
    for m in sorted(members):
        if m in seen:
            continue
        comp, stack = set(), [m]
        while stack:
            u = stack.pop()
            if u in comp:
                continue
            comp.add(u)
            stack.extend(adj[u] - comp)
        seen |= comp
        out.append(comp)
    return out


# --- degree estimation ------------------------------------------------------

def estimate_degree_leader_avg(segment: Segment) -> Fraction:
    """Mean of the in-segment degrees reported to the leader.

    With a report missing, the last complete average is returned and the
    segment is flagged stale.
    """
    if not segment.members:
        raise EstimatorUnavailable("empty segment")
    if segment.members <= segment.degree_reports.keys():
        total = sum(segment.degree_reports[m] for m in segment.members)
        segment.avg_in_segment_degree = Fraction(total, len(segment.members))
        segment.stale = False
    else:
        segment.stale = True
    return segment.avg_in_segment_degree


def estimate_degree_self(v: NodeRuntime, segment: Optional[Segment] = None) -> int:
    """Node ``v``'s own count of known in-segment neighbours."""
    if v.phase is not Phase.NORMAL or v.segment_id is None:
        raise EstimatorUnavailable(f"node {v.id} is not in a segment")
    if segment is not None:
        return len(segment.neighbors(v.id))
    return len(v.known_neighbors - v.stale.keys())


def estimate_degree_combined(v: NodeRuntime, segment: Segment, w: float) -> Fraction:
    if not 0 <= w <= 1:
        raise ParameterError(f"weight {w} outside [0, 1]")
    own = estimate_degree_self(v, segment)
    avg = estimate_degree_leader_avg(segment)
    wf = Fraction(w)
    return wf * own + (1 - wf) * avg


def estimate(v: NodeRuntime, segment: Segment, params: ProtocolParams) -> float:
    if params.fixed_estimate is not None:
        return params.fixed_estimate
    if params.estimator is Estimator.SELF_DEGREE:
        return float(estimate_degree_self(v, segment))
    if params.estimator is Estimator.COMBINED:
        return float(estimate_degree_combined(v, segment, params.correlation_weight))
    return float(estimate_degree_leader_avg(segment))
