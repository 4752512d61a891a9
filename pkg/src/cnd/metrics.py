"""Energy, message and latency accounting for simulated trials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class LinkEpisode:
    pair: tuple[int, int]
    hidden_at: float
    discovered_at: float

    @property
    def latency(self) -> float:
        return self.discovered_at - self.hidden_at


@dataclass(frozen=True)
class Detection:
    target: int
    hidden_at: float
    detected_at: Optional[float]
    horizon: float

    @property
    def latency(self) -> Optional[float]:
        return None if self.detected_at is None else self.detected_at - self.hidden_at

    @property
    def within(self) -> bool:
        lat = self.latency
        return lat is not None and lat <= self.horizon


@dataclass
class TrialMetrics:
    """Per-trial accounting; times in seconds."""

    total_time: float
    awake: list[float]
    counts: list[dict[str, int]]
    links: list[LinkEpisode] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)
    converged: bool = False
    seed: int = 0

    @property
    def discovered_links(self) -> int:
        return len(self.links)

    def count(self, kind: str) -> int:
        return sum(c.get(kind, 0) for c in self.counts)

    @property
    def transmissions(self) -> list[int]:
        return [sum(c.values()) for c in self.counts]

    @property
    def detected_within(self) -> Optional[bool]:
        """All targets detected within the guarantee horizon; None without targets."""
        if not self.detections:
            return None
        return all(d.within for d in self.detections)

    @property
    def latency(self) -> Optional[float]:
        lats = [d.latency for d in self.detections]
        if not lats or any(x is None for x in lats):
            return None
        return max(lats)


@dataclass(frozen=True)
class EnergyModel:
    listen: float = 1.0   # per awake second
    tx: float = 0.5       # per transmitted message

    def __post_init__(self):
        if self.listen < 0 or self.tx < 0:
            raise ValueError("energy weights must be non-negative")


def energy(trial: TrialMetrics, model: EnergyModel = EnergyModel()) -> list[float]:
    """Per-node energy: awake seconds and transmissions, weighted."""
    return [a * model.listen + sum(c.values()) * model.tx
            for a, c in zip(trial.awake, trial.counts)]


def total_energy(trial: TrialMetrics, model: EnergyModel = EnergyModel()) -> float:
    return math.fsum(energy(trial, model))


def energy_per_link(trial: TrialMetrics, model: EnergyModel = EnergyModel()) -> float:
    n = trial.discovered_links
    return total_energy(trial, model) / n if n else math.inf


def empirical_detection(trials: Sequence[TrialMetrics], horizon: Optional[float] = None) -> tuple[float, float]:
    """Fraction of trials detecting every target within ``horizon``, and a 3-sigma half-width."""
    if not trials:
        raise AnalysisError("no trials")
    hits = 0
    for t in trials:
        if not t.detections:
            raise AnalysisError("trial has no targeted detection outcome")
        if horizon is None:
            hits += bool(t.detected_within)
        else:
            hits += all(d.latency is not None and d.latency <= horizon for d in t.detections)
    n = len(trials)
    p = hits / n
    return p, 3.0 * math.sqrt(p * (1 - p) / n)


@dataclass
class PolicyRow:
    policy: str
    trials: int
    mean_energy_per_link: float
    empirical_detection_fraction: float
    ci_halfwidth: float
    mean_latency_s: float


@dataclass
class Comparison:
    rows: list[PolicyRow]
    results: dict[str, list[TrialMetrics]]

    def row(self, policy: str) -> PolicyRow:
        return next(r for r in self.rows if r.policy == policy)

    def paired(self, a: str, b: str, model: EnergyModel = EnergyModel()) -> list[tuple[float, float]]:
        """Seed-matched energy-per-link pairs."""
        return [(energy_per_link(x, model), energy_per_link(y, model))
                for x, y in zip(self.results[a], self.results[b])]


def summarize(policy: str, trials: Sequence[TrialMetrics], model: EnergyModel = EnergyModel()) -> PolicyRow:
    per_link = [energy_per_link(t, model) for t in trials]
    finite = [e for e in per_link if math.isfinite(e)]
    frac, half = empirical_detection(trials) if trials and all(t.detections for t in trials) else (math.nan, math.nan)
    lats = [t.latency for t in trials if t.latency is not None]
    return PolicyRow(
        policy=policy,
        trials=len(trials),
        mean_energy_per_link=math.fsum(finite) / len(finite) if finite else math.inf,
        empirical_detection_fraction=frac,
        ci_halfwidth=half,
        mean_latency_s=math.fsum(lats) / len(lats) if lats else math.nan,
    )


def compare_policies(run: Callable[[str, int], TrialMetrics], policies: Iterable[str],
                     n_trials: int, seeds: Optional[Sequence[int]] = None,
                     model: EnergyModel = EnergyModel()) -> Comparison:
    """Run every policy on the same seed sequence.

    ``run(policy, seed)`` must build the same topology and scenario for a
    given seed regardless of policy, so trial ``i`` is paired across rows.
    """
    policies = list(policies)
    if seeds is None:
        seeds = list(range(n_trials))
    if len(seeds) != n_trials:
        raise AnalysisError(f"{len(seeds)} seeds for {n_trials} trials")
    results = {p: [run(p, s) for s in seeds] for p in policies}
    if len({len(v) for v in results.values()}) > 1:
        raise AnalysisError("policies ran different numbers of trials")
    return Comparison([summarize(p, results[p], model) for p in policies], results)


def batch_totals(trials: Sequence[TrialMetrics], model: EnergyModel = EnergyModel()) -> dict[str, float]:
    return {
        "energy": math.fsum(total_energy(t, model) for t in trials),
        "hello": sum(t.count("hello") for t in trials),
        "sync": sum(t.count("sync") for t in trials),
        "links": sum(t.discovered_links for t in trials),
    }


def replay_energy(trace: Iterable[dict], n_nodes: int, horizon: int,
                  model: EnergyModel = EnergyModel(), ticks_per_second: int = 1_000_000) -> list[float]:
    """Recompute per-node energy from a trial's event trace.

    Awake time is the measure of the union of all ``awake`` intervals the
    trace reports (integer ticks), clipped to the horizon; every ``tx``
    record costs one transmission.
    """
    intervals: dict[int, list[tuple[float, float]]] = {}
    tx = [0] * n_nodes
    for rec in trace:
        kind = rec["kind"]
        if kind == "awake":
            intervals.setdefault(rec["node"], []).append((rec["from"], rec["until"]))
        elif kind == "tx":
            node = rec["node"]
            if node >= len(tx):
                tx.extend([0] * (node + 1 - len(tx)))
            tx[node] += 1
    n = max(n_nodes, len(tx), max(intervals, default=-1) + 1)
    tx.extend([0] * (n - len(tx)))
    out = []
    for u in range(n):
        spans = sorted((min(a, horizon), min(b, horizon)) for a, b in intervals.get(u, []))
        covered = 0
        cur_a = cur_b = None
        for a, b in spans:
            if cur_b is None or a > cur_b:
                if cur_b is not None:
                    covered += cur_b - cur_a
                cur_a, cur_b = a, b
            else:
                cur_b = max(cur_b, b)
        if cur_b is not None:
            covered += cur_b - cur_a
        out.append(covered / ticks_per_second * model.listen + tx[u] * model.tx)
    return out
