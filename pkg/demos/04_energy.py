"""Continuous discovery against running everyone at the Init cadence.

Same topology, same seeds: the only thing that changes is the policy. The
load-shared nodes use the leader's average degree (2 here) while the
oracle knows four members hear the newcomer.
"""

from cnd.metrics import compare_policies
from cnd.protocol import Policy
from cnd.scenarios import hidden_node_segment, reference_params
from cnd.simulator import run_trial

fx = hidden_node_segment()


def run(policy, seed):
    params = reference_params(policy=Policy(policy))
    m, _ = run_trial(fx.graph, params, horizon=300, seed=seed, segments=fx.segments, targets=fx.targets)
    return m


cmp = compare_policies(run, ["load_shared", "oracle", "all_init"], n_trials=30)
print(f"{'policy':12} {'energy/link':>12} {'detected':>9} {'latency':>8}")
for row in cmp.rows:
    print(f"{row.policy:12} {row.mean_energy_per_link:12.1f} {row.empirical_detection_fraction:9.3f} "
          f"{row.mean_latency_s:8.1f}")
cheaper = sum(a < b for a, b in cmp.paired("load_shared", "all_init"))
print(f"load-shared cheaper in {cheaper}/30 paired trials")
