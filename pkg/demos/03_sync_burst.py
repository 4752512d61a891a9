"""A SYNC flood followed by a listening burst uncovers every link inside a segment.

The segment below knows only a spanning tree plus some extras. One member
floods a SYNC; everyone listens through the burst and the leftover links
turn up.
"""

from cnd.protocol import ProtocolParams
from cnd.scenarios import partially_known_segment
from cnd.simulator import SimSettings, Simulation

fx = partially_known_segment(15, seed=2)
params = ProtocolParams(normal_period=10.0)
sim = Simulation(fx.graph, params, seed=2, segments=fx.segments,
                 settings=SimSettings(ideal_channel=True))
print("hidden inside the segment before:", len(sim.intra_segment_hidden()))

sim.start_flood(0, 0.0)
# the flood crawls about one wake period per hop, so far members burst later
while len(sim.sync_log.get((0, 0), ())) < 15 or max(n.hello_burst_until or 0 for n in sim.nodes) > sim.now:
    sim.step()
print(f"last burst ended at {sim.now / 1e6:.1f} s")
print("every member got the SYNC once:", set(sim.sync_log[(0, 0)].values()) == {1})
# links found mid-flood are forwarded over too, so compare with the final count
print("SYNC transmissions:", sim.sync_tx[(0, 0)], "over", len(sim.known), "known links at the end")
print("hidden inside the segment after:", len(sim.intra_segment_hidden()))
print("invariant violations:", sim.check_invariants())
