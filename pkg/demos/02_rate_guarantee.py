"""Sharing the HELLO load inside a segment while keeping the (P, T) promise.

A hidden node sits next to four members of an eight-node segment. Each of
those four sends HELLOs at a quarter of the aggregate rate; together they
should still reach the newcomer within T with probability at least P.
"""

from cnd import protocol as proto
from cnd.metrics import empirical_detection
from cnd.scenarios import hidden_node_segment, reference_params
from cnd.simulator import run_trial

params = reference_params(fixed_estimate=4)
lam = proto.aggregate_rate(params)
r = proto.assign_hello_rate(4, params)
print(f"aggregate rate {lam:.4f}/s, per node {r:.4f}/s (one HELLO every {1 / r:.1f} s)")

fx = hidden_node_segment()
trials = []
for seed in range(200):
    m, _ = run_trial(fx.graph, params, horizon=params.target_horizon, seed=seed,
                     segments=fx.segments, targets=fx.targets)
    trials.append(m)
p, half = empirical_detection(trials)
print(f"detected within {params.target_horizon:.0f} s in {p:.3f} of trials (+/- {half:.3f}), target {params.target_probability}")
