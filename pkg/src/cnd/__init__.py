"""Continuous neighbour discovery for duty-cycled static sensor networks."""

from .metrics import (Detection, EnergyModel, LinkEpisode, TrialMetrics, compare_policies,
                      empirical_detection, energy, energy_per_link, total_energy)
from .protocol import (Estimator, Phase, Policy, ProtocolParams, Segment, aggregate_rate,
                       assign_hello_rate, issue_sync, merge_segments, wake_period)
from .simulator import (Desync, LinkDown, LinkUp, NodeJoin, PowerIncrease, ScenarioError,
                        SegmentSpec, SimSettings, Simulation, run_trial)
from .topology import Position, RadioGraph, build_graph, hidden_links, in_segment_degree, place_uniform

__version__ = "0.1.0"
