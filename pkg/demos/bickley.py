"""Bickley jet: vortex cores from the adaptive transfer-operator method.

Run from the repository root::

    python3 demos/bickley.py
"""
import numpy as np

from coherentfem import (assemble_to_adaptive, builtin_field, eigengap, generate_trajectories,
                         kmeans_partition, regular_grid, solve_assembly)

flow = builtin_field("bickley")
shape = (100, 30)
nodes = regular_grid(shape, flow.bounds, periods=flow.periods)
data = generate_trajectories(flow, nodes, [0.0, 40.0])
result = assemble_to_adaptive(data)
spec = solve_assembly(result, k=12)

lam = spec.eigenvalues
print("eigenvalues:", np.round(lam, 3))
print("gaps:       ", np.round(lam[:-1] - lam[1:], 3))
print("largest gap after lambda%d" % eigengap(lam)[1])

part = kmeans_partition(spec, 8, 8, rng_seed=0)
y = nodes[:, 1]
print("\ncluster  nodes  y-range")
for c in range(part.k):
    yc = y[part.labels == c]
    side = "north" if yc.min() > 0 else "south" if yc.max() < 0 else "both"
    print(f"{c:7d}  {yc.size:5d}  [{yc.min():5.2f}, {yc.max():5.2f}]  {side}")

print("\n8-partition, x to the right, y upward (every other row):")
grid = part.labels.reshape(shape)
for row in grid.T[::-1][::2]:
    print("   " + "".join("0123456789"[c] for c in row))
