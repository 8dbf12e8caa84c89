"""
Transmission cost of compressed reading
=======================================

Compare the per-round packet count on random trees with the scheme where
every link carries M packets and with plain relaying of all readings.
"""

from __future__ import annotations

import numpy as np

from secread import baseline_cost, cost_bounds, gen_random_tree, nonaggregation_cost, run_plain_round
from secread.protocol import pary_cost, pary_n

N, M = 128, 38
lo, hi = cost_bounds(N, M)
print(f"any tree: {lo} <= cost <= {hi}; every-link-M scheme: {baseline_cost(N, M)}")

costs, relay = [], []
for seed in range(20):
    topo = gen_random_tree(N, seed)
    costs.append(run_plain_round(topo, np.ones(N), M).cost)
    relay.append(nonaggregation_cost(topo))
ratio = np.array(costs) / np.array(relay)
print(f"random trees: mean cost {np.mean(costs):.1f}, cost / plain relaying {ratio.min():.2f}..{ratio.max():.2f}")

# complete p-ary trees grow like N log_p M
for p, L in [(2, 5), (2, 7), (3, 4), (3, 5)]:
    n = pary_n(p, L)
    print(f"p={p} L={L} N={n:4d}  cost/N = {pary_cost(p, L, 15) / n:.2f}")
