"""Reflecting diffusion on the enlarged cluster and its martingale part.

Runs reflected Euler paths on the one-hole torus, checks that y(X) is a
martingale with the predicted bracket, and compares with the lattice walk.
"""
import numpy as np

from percqip import benchmarks as B
from percqip import diffusion as D
from percqip.cluster import contains
from percqip.config import RngStream

bench = B.one_hole(delta=0.0625)
em, sols, form = B.torus_effective_matrix(bench)
start = np.array([5.0, 1.0])

path = D.simulate_reflected_euler(bench.decomp, D.SimParams(0.01, 5.0, "reflected_euler", RngStream(1), start))
print(f"one path: {len(path.times)} records, {len(path.reflection_log)} reflections, "
      f"all inside: {bool(np.all(contains(bench.decomp, path.positions)))}")
if path.reflection_log:
    t, x, ball = path.reflection_log[0]
    print(f"first reflection at t={t:.3f} on ball {ball} at {np.round(x, 4)}")

batch = D.simulate_euler_batch(bench.decomp, D.SimParams(0.005, 20.0, "reflected_euler", RngStream(4), start), 40)
rep = D.qv_check(batch, sols)
print("realised bracket of y(X):", np.round(rep.realized, 2).tolist())
print("predicted  int f(X_s) ds:", np.round(rep.predicted, 2).tolist())
print(f"relative discrepancy {rep.discrepancy:.4f}, mean-increment z-scores {np.round(rep.z_scores, 2)}")
print(f"raw coordinates instead of y: discrepancy {D.qv_check(batch).discrepancy:.4f}")

walk = D.simulate_walk_batch(form, D.SimParams(0.05, 20.0, "lattice_walk", RngStream(4), start), 40)
wrep = D.qv_check(walk, sols)
print(f"lattice walk: discrepancy {wrep.discrepancy:.4f}, {walk.diagnostics['jumps']} jumps")

# environment seen from the particle
w = D.environment_window(bench.config, path, 2.5, 1.5)
print(f"{len(w)} ball centres within 1.5 of X_2.5")
