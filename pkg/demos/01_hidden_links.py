"""Who can hear whom, and which of those links nobody knows about yet.

Scatter 30 nodes, build the unit disk graph, pretend a random half of the
links were already discovered and list what is left.
"""

import random

from cnd.topology import build_graph, hidden_links, place_uniform

pts = place_uniform(30, 100, 100, seed=3)
g = build_graph(pts, 25)
edges = sorted(g.edges())
print(f"{len(pts)} nodes, {len(edges)} links at range 25")

rng = random.Random(3)
known = {e for e in edges if rng.random() < 0.5}
hidden = hidden_links(g, known)
print(f"{len(known)} discovered, {len(hidden)} still hidden")
print("first few hidden:", sorted(hidden)[:5])

# a link needs both ends to reach each other, so one louder node gains nothing
print("node 0 alone at range 40 gains", len(g.set_range(0, 40)), "links")
new = set()
for u in range(1, 30):
    new |= g.set_range(u, 40)
print(f"everyone at range 40: {len(new)} more links")
