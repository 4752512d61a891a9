"""Networks change after deployment. Four kinds of change, one small segment.

For each kind we inject the change at t=20 s and check whether the nodes'
view matches the radio graph again by the end of the run.
"""

from cnd.scenarios import dynamic_fixture, reference_params
from cnd.simulator import run_trial

for kind in ("desync", "disruption", "join", "power"):
    fx = dynamic_fixture(kind)
    ok = 0
    for seed in range(50):
        m, sim = run_trial(fx.graph, reference_params(), fx.events, horizon=400, seed=seed,
                           segments=fx.segments, region=fx.region)
        ok += sim.converged()
    print(f"{kind:11} recovered in {ok}/50 runs")
