"""Diffusive rescaling on a supercritical Poisson torus.

Simulates paths once up to the longest horizon and reads off eps X_{t/eps^2}
for a short eps ladder: covariance against the corrector matrix, Gaussianity
and the corrector exceedance.  The full-size version is acceptance
criterion 4/6 in tests/test_acceptance.py.
"""
import numpy as np

from percqip import benchmarks as B
from percqip import corrector as C
from percqip.config import RngStream
from percqip.qip import ScalingExperiment

bench = B.poisson(L=40.0, delta=0.3125, seed=5)
em, sols, form = B.torus_effective_matrix(bench)
print("corrector matrix D =", np.round(em.D, 4).tolist())

exp = ScalingExperiment([1 / 4, 1 / 8], T=1.0, n_paths=200, environment=(bench.decomp, bench.field),
                        start=bench.start(), dt=0.02, record_dt=0.5, rng=RngStream(9), D_ref=em.D,
                        chi_field=C.CorrectorField(sols).chi)
for r in exp.run():
    print(f"eps={r['epsilon']:<6} cov={np.round(r['cov'], 3).tolist()} +- {np.round(r['cov_ci'], 3).tolist()}")
    print(f"           KS={np.round(r['ks'], 3).tolist()} (95% quantile {r['ks_quantile']:.3f}) "
          f"exceedance={r['exceedance']}")
