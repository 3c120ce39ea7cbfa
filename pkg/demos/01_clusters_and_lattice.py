"""Boolean model, its percolating cluster and the delta-lattice built on top.

Samples a Poisson configuration on a torus, finds the crossing component,
puts the enlarged cluster on a lattice and runs the geometry scans.
"""
import numpy as np

from percqip import lattice
from percqip.cluster import RadiusPair, build_clusters, contains
from percqip.config import Box, RngStream, sample_poisson

box = Box.cube(2, 40.0, periodic=True)
cfg = sample_poisson(0.5, box, RngStream(7))  # lambda rho^2 = 0.5, above the critical 0.36
dec = build_clusters(cfg, RadiusPair(1.0, 1.25))
sizes = np.bincount(dec.component_label)
print(f"{len(cfg)} points, {dec.n_components} components, largest has {sizes.max()} balls")
print(f"crossing component selected: {dec.crossing} ({len(dec.index_set)} balls)")

# membership of the enlarged cluster at random probes
probes = np.random.default_rng(0).uniform(0, 40, size=(20000, 2))
print(f"area fraction of the enlarged cluster ~ {contains(dec, probes).mean():.3f}")

# delta-lattice: a site is open when its cube sits inside one ball
delta = 0.3125
g = lattice.build_delta_graph(dec, delta)
print(f"lattice {g.shape}, {g.n_open} open sites, largest component {g.sizes.max()}")

# volume regularity around a few cluster points
centers = dec.cluster_points[:4]
scan = lattice.volume_regularity_scan(dec, g, centers, [2.0, 4.0, 8.0])
print("volume scan: min |W cap B(x,R)| / R^d =", np.round(scan.min_ratio, 3), " C_V_hat =", round(scan.c_v_hat, 3))

# crossing events on cubes of growing size around the middle.  At this
# density the smallest sub-cubes (k/8 sites) are no larger than the vacant
# patches, so big cubes usually fail; denser models recover (see
# benchmarks.crossing_failure_frequency)
mid = tuple(s // 2 for s in g.shape)
for k in (8, 16, 32, 64):
    Q = lattice.CubeSpec(mid, k)
    print(f"cube of {k} sites: R0(Q) = {lattice.event_R0(g, Q)}, R(Q) = {lattice.event_R(g, Q)}")

# isoperimetric ratio of a disc of lattice sites
C = g.coords()
disc = np.linalg.norm(C - C[mid], axis=-1) < 4.0
print(f"isoperimetric ratio of a radius-4 disc: {lattice.isoperimetric_ratio(g, disc):.3f}")
