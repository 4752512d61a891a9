"""YAML scenario files: parsing, validation with line numbers, and trial construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .metrics import EnergyModel
from .protocol import Estimator, Policy, ProtocolParams, split_components
from .simulator import (Desync, LinkDown, LinkUp, NodeJoin, PowerIncrease, SegmentSpec, SimSettings,
                        scenario_problems)
from .topology import ConfigurationError, Position, RadioGraph, build_graph, place_uniform


@dataclass(frozen=True)
class Diagnostic:
    line: Optional[int]
    path: str
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "file"
        return f"{where}: {self.path}: {self.message}" if self.path else f"{where}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


PROTOCOL_KEYS = {f.name for f in fields(ProtocolParams)} - {"policy"}


@dataclass
class ScenarioConfig:
    positions: Optional[list[Position]]
    nodes: Optional[int]
    region: tuple[float, float]
    range: float
    topology_seed: Optional[int]
    segments: list[SegmentSpec]
    targets: Optional[list[int]]
    params: ProtocolParams
    settings: SimSettings
    events: list
    horizon: float
    trials: int
    base_seed: int
    policies: list[Policy]
    energy: EnergyModel = field(default_factory=EnergyModel)

    def graph(self, trial_seed: int) -> RadioGraph:
        if self.positions is not None:
            pts = self.positions
        else:
            seed = self.topology_seed if self.topology_seed is not None else trial_seed
            pts = place_uniform(self.nodes, self.region[0], self.region[1], seed)
        return build_graph(pts, self.range)


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    """Map every key path in a composed YAML tree to its 1-based line."""
    if out is None:
        out = {}
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
            out[key] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


class _Checker:
    def __init__(self, lines: dict[tuple, int]):
        self.lines = lines
        self.diags: list[Diagnostic] = []

    def line(self, path: tuple) -> Optional[int]:
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def err(self, path: tuple, msg: str) -> None:
        dotted = ".".join(str(p) if not isinstance(p, int) else f"[{p}]" for p in path).replace(".[", "[")
        self.diags.append(Diagnostic(self.line(path), dotted, msg))

    def number(self, d: dict, key: str, path: tuple, default=None, positive=False, required=False):
        if key not in d:
            if required:
                self.err(path, f"missing required field '{key}'")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.err(path + (key,), f"expected a finite number, got {v!r}")
            return default
        if positive and not v > 0:
            self.err(path + (key,), f"must be positive, got {v}")
            return default
        return v

    def integer(self, d: dict, key: str, path: tuple, default=None, minimum=None):
        if key not in d:
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.err(path + (key,), f"expected an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.err(path + (key,), f"must be at least {minimum}, got {v}")
            return default
        return v

    def block(self, data: dict, key: str, required=True) -> dict:
        v = data.get(key)
        if v is None:
            if required:
                self.err((key,), f"missing required block '{key}'")
            return {}
        if not isinstance(v, dict):
            self.err((key,), "expected a mapping")
            return {}
        return v

    def point(self, v, path: tuple) -> Optional[Position]:
        if (isinstance(v, (list, tuple)) and len(v) == 2
                and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)):
            return Position(float(v[0]), float(v[1]))
        self.err(path, f"expected [x, y], got {v!r}")
        return None

    def pair(self, v, path: tuple) -> Optional[tuple[int, int]]:
        if (isinstance(v, (list, tuple)) and len(v) == 2
                and all(isinstance(c, int) and not isinstance(c, bool) for c in v) and v[0] != v[1]):
            return (int(v[0]), int(v[1]))
        self.err(path, f"expected a pair of distinct node ids, got {v!r}")
        return None


def _parse(text: str) -> tuple[Any, dict[tuple, int]]:
    node = yaml.compose(text, Loader=yaml.SafeLoader)
    data = yaml.safe_load(text)
    return data, (_line_map(node) if node is not None else {})


def check(data: Any, lines: dict[tuple, int]) -> tuple[Optional[ScenarioConfig], list[Diagnostic]]:
    c = _Checker(lines)
    if not isinstance(data, dict):
        c.err((), "top level must be a mapping")
        return None, c.diags
    for key in data:
        if key not in ("topology", "protocol", "channel", "events", "run", "energy"):
            c.err((key,), "unknown block")

    topo = c.block(data, "topology")
    tp = ("topology",)
    positions = None
    if "positions" in topo:
        raw = topo["positions"]
        if not isinstance(raw, list) or not raw:
            c.err(tp + ("positions",), "expected a non-empty list of [x, y]")
        else:
            pts = [c.point(v, tp + ("positions", i)) for i, v in enumerate(raw)]
            positions = pts if all(p is not None for p in pts) else None
    nodes = c.integer(topo, "nodes", tp, minimum=1)
    if positions is None and nodes is None and "positions" not in topo:
        c.err(tp, "needs 'nodes' or 'positions'")
    region = (100.0, 100.0)
    if "region" in topo:
        r = topo["region"]
        if (isinstance(r, list) and len(r) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                                           and x > 0 for x in r)):
            region = (float(r[0]), float(r[1]))
        else:
            c.err(tp + ("region",), f"expected [width, height] with positive sides, got {r!r}")
    rng = c.number(topo, "range", tp, positive=True, required=True)
    topo_seed = c.integer(topo, "seed", tp)
    n_nodes = len(positions) if positions is not None else (nodes or 0)
    if positions is not None:
        for i, p in enumerate(positions):
            if not (0 <= p.x <= region[0] and 0 <= p.y <= region[1]):
                c.err(tp + ("positions", i), f"position ({p.x}, {p.y}) lies outside the region")

    def node_ok(u, path) -> bool:
        if isinstance(u, bool) or not isinstance(u, int) or not 0 <= u < n_nodes:
            c.err(path, f"node {u!r} does not exist")
            return False
        return True

    segments = []
    for i, s in enumerate(topo.get("segments") or []):
        sp = tp + ("segments", i)
        if not isinstance(s, dict) or "members" not in s:
            c.err(sp, "expected a mapping with 'members'")
            continue
        mem = s["members"]
        if not isinstance(mem, list) or len(mem) < 2:
            c.err(sp + ("members",), "a segment needs at least two members")
            continue
        if not all(node_ok(u, sp + ("members", j)) for j, u in enumerate(mem)):
            continue
        links = None
        if "links" in s:
            links = set()
            for j, pr in enumerate(s["links"] or []):
                p = c.pair(pr, sp + ("links", j))
                if p is not None:
                    links.add(p)
        segments.append(SegmentSpec(set(mem), links))
    targets = None
    if "targets" in topo:
        t = topo["targets"]
        if not isinstance(t, list):
            c.err(tp + ("targets",), "expected a list of node ids")
        else:
            targets = [u for j, u in enumerate(t) if node_ok(u, tp + ("targets", j))]

    prot = c.block(data, "protocol", required=False)
    pp = ("protocol",)
    kw = {}
    for key, v in prot.items():
        if key not in PROTOCOL_KEYS:
            c.err(pp + (key,), "unknown protocol field")
        elif key == "estimator":
            try:
                kw[key] = Estimator(v)
            except ValueError:
                c.err(pp + (key,), f"unknown estimator {v!r}; choose from "
                      + ", ".join(e.value for e in Estimator))
        elif key == "load_sharing":
            if not isinstance(v, bool):
                c.err(pp + (key,), "expected true or false")
            else:
                kw[key] = v
        elif v is None and key in ("fixed_estimate", "burst_window", "burst_period"):
            kw[key] = None
        else:
            num = c.number(prot, key, pp)
            if num is not None:
                kw[key] = float(num)
    params = None
    try:
        params = ProtocolParams(**kw)
        for key, msg in params.problems():
            c.err(pp + (key,), msg)
    except TypeError as e:  # pragma: no cover - keys are filtered above
        c.err(pp, str(e))

    chan = c.block(data, "channel", required=False)
    settings = SimSettings(
        airtime=c.number(chan, "airtime", ("channel",), 0.005, positive=True),
        ideal_channel=bool(chan.get("ideal", False)),
    )

    run = c.block(data, "run")
    rp = ("run",)
    horizon = c.number(run, "horizon", rp, positive=True, required=True)
    trials = c.integer(run, "trials", rp, 1, minimum=1)
    base_seed = c.integer(run, "base_seed", rp, 0)
    policies = []
    for j, p in enumerate(run.get("policies") or ["load_shared"]):
        try:
            policies.append(Policy(p))
        except ValueError:
            c.err(rp + ("policies", j), f"unknown policy {p!r}; choose from "
                  + ", ".join(x.value for x in Policy))

    en = c.block(data, "energy", required=False)
    model = EnergyModel()
    lw = c.number(en, "listen", ("energy",), 1.0)
    tw = c.number(en, "tx", ("energy",), 0.5)
    if lw is not None and lw < 0:
        c.err(("energy", "listen"), "weight must be non-negative")
    elif tw is not None and tw < 0:
        c.err(("energy", "tx"), "weight must be non-negative")
    else:
        model = EnergyModel(lw, tw)

    events = []
    raw_events = data.get("events") or []
    if not isinstance(raw_events, list):
        c.err(("events",), "expected a list")
        raw_events = []
    for i, ev in enumerate(raw_events):
        ep = ("events", i)
        if not isinstance(ev, dict) or "type" not in ev:
            c.err(ep, "expected a mapping with 'type'")
            continue
        at = c.number(ev, "at", ep, required=True)
        if at is None:
            continue
        if horizon is not None and not 0 <= at <= horizon:
            c.err(ep + ("at",), f"event time {at} lies outside [0, {horizon}]")
        kind = ev["type"]
        if kind == "link_down":
            pr = c.pair(ev.get("pair"), ep + ("pair",))
            until = c.number(ev, "until", ep, required=True)
            if pr is None or until is None:
                continue
            if until < at:
                c.err(ep + ("until",), "disruption ends before it starts")
                continue
            if horizon is not None and until > horizon:
                c.err(ep + ("until",), f"restore time {until} lies beyond the horizon")
                continue
            if until > at:
                events.append((ep, LinkDown(at, pr, until)))
                events.append((ep, LinkUp(until, pr)))
        elif kind == "node_join":
            pt = c.point(ev.get("position"), ep + ("position",))
            if pt is not None:
                if not (0 <= pt.x <= region[0] and 0 <= pt.y <= region[1]):
                    c.err(ep + ("position",), f"join position ({pt.x}, {pt.y}) lies outside the region")
                else:
                    events.append((ep, NodeJoin(at, pt)))
        elif kind == "power_increase":
            new_range = c.number(ev, "range", ep, positive=True, required=True)
            u = ev.get("node")
            if new_range is not None and isinstance(u, int) and not isinstance(u, bool):
                events.append((ep, PowerIncrease(at, u, new_range)))
            elif not isinstance(u, int):
                c.err(ep + ("node",), f"expected a node id, got {u!r}")
        elif kind == "desync":
            u = ev.get("node")
            if isinstance(u, int) and not isinstance(u, bool):
                events.append((ep, Desync(at, u)))
            else:
                c.err(ep + ("node",), f"expected a node id, got {u!r}")
        else:
            c.err(ep + ("type",), f"unknown event type {kind!r}")

    # structural checks need a concrete topology
    if not c.diags and rng is not None:
        if positions is not None or topo_seed is not None:
            pts = positions or place_uniform(nodes, region[0], region[1], topo_seed)
            g = build_graph(pts, rng)
            for i, seg in enumerate(segments):
                links = seg.links if seg.links is not None else {
                    p for p in g.edges() if p[0] in seg.members and p[1] in seg.members}
                for p in sorted(links):
                    if not g.adjacent(*p) or p[0] not in seg.members or p[1] not in seg.members:
                        c.err(tp + ("segments", i, "links"), f"link {p} is not a physical link between members")
                if links and len(split_components(seg.members, links)) != 1:
                    c.err(tp + ("segments", i), "members are not connected by the segment's links")
            # a link_down entry expands to two events; report each entry once
            reported = set()
            for i, msg in scenario_problems(g, [e for _, e in events], horizon, region):
                if isinstance(events[i][1], LinkUp) and events[i][0] in reported:
                    continue
                reported.add(events[i][0])
                c.err(events[i][0], msg)
        else:
            for ep, ev in events:
                if isinstance(ev, (LinkDown, LinkUp)):
                    c.err(ep, "link events need a fixed topology (positions or topology.seed)")

    if c.diags:
        return None, c.diags
    return ScenarioConfig(
        positions=positions, nodes=nodes, region=region, range=float(rng), topology_seed=topo_seed,
        segments=segments, targets=targets, params=params, settings=settings,
        events=[e for _, e in events], horizon=float(horizon), trials=trials, base_seed=base_seed,
        policies=policies, energy=model,
    ), []


def validate(path) -> list[Diagnostic]:
    """Every problem with the config at ``path``; empty means it can run."""
    return load(path, raise_on_error=False)[1]


def load(path, raise_on_error: bool = True) -> tuple[Optional[ScenarioConfig], list[Diagnostic]]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        diags = [Diagnostic(None, "", f"cannot read {path}: {e.strerror or e}")]
    else:
        try:
            data, lines = _parse(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            diags = [Diagnostic(line, "", f"cannot parse YAML: {getattr(e, 'problem', None) or e}")]
        else:
            cfg, diags = check(data, lines)
            if not diags:
                return cfg, []
    if raise_on_error:
        raise ConfigError(diags)
    return None, diags
