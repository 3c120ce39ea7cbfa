"""Diffusive scaling experiments for a fixed environment (quenched protocol).

Paths are simulated once up to the horizon ``T / eps_min^2`` and read off at
every ladder value; randomness comes from the paths only.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from . import diffusion as dif
from .diffusion import DiffusionPath, PathBatch
from .errors import InvalidParameterError

MIN_PATHS = 100
DEFAULT_DELTAS = (0.05, 0.1, 0.2)


def scale_path(path, epsilon, T=None):
    """``t -> eps X_{t / eps^2}``: positions times ``eps``, times times ``eps^2``."""
    if not 0 < epsilon <= 1:
        raise InvalidParameterError("epsilon must lie in (0, 1]")
    if T is not None and path.times[-1] < T / epsilon**2 * (1 - 1e-12):
        raise InvalidParameterError("path horizon is shorter than T / eps^2")
    e2 = epsilon * epsilon
    if isinstance(path, PathBatch):
        return PathBatch(path.times * e2, path.positions * epsilon, path.scheme, path.nodes, path.form,
                         dict(path.diagnostics, epsilon=epsilon))
    log = [(t * e2, e * epsilon, b) for t, e, b in path.reflection_log]
    return DiffusionPath(path.times * e2, path.positions * epsilon, log, path.scheme, path.nodes, path.form,
                         dict(path.diagnostics, epsilon=epsilon))


def time_index(times, t):
    """Index of the recorded time equal to ``t`` (relative tolerance 1e-9)."""
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        if t > times[-1]:
            raise InvalidParameterError("path horizon is shorter than the requested time")
        raise InvalidParameterError(f"time {t} is not on the recording grid")
    return i


def scaled_displacements(batch, epsilon, t=1.0):
    """``eps (X_{t / eps^2} - X_0)`` for every path in the batch."""
    i = time_index(batch.times, t / epsilon**2)
    return epsilon * (batch.positions[:, i] - batch.positions[:, 0])


# --------------------------------------------------------------------------
# covariance and Gaussianity


@dataclass
class CovarianceEstimate:
    cov: np.ndarray
    radius: np.ndarray
    n: int
    t: float

    def within(self, target, n_radii=3.0, rel=0.0):
        """Entrywise ``|cov - target| <= max(rel |target|, n_radii * radius)``."""
        tol = np.maximum(rel * np.abs(target), n_radii * self.radius)
        return bool(np.all(np.abs(self.cov - target) <= tol))


def estimate_covariance(samples, t=1.0):
    """Sample covariance across paths with jackknife confidence radii."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < MIN_PATHS:
        raise InvalidParameterError(f"need at least {MIN_PATHS} paths, got {n}")
    cov = np.cov(x.T, ddof=1).reshape(x.shape[1], x.shape[1])
    S = x.T @ x
    m = x.mean(axis=0)
    mi = (n * m - x) / (n - 1)
    outer = x[:, :, None] * x[:, None, :]
    loo = (S[None] - outer - (n - 1) * mi[:, :, None] * mi[:, None, :]) / (n - 2)
    jbar = loo.mean(axis=0)
    var = (n - 1) / n * np.sum((loo - jbar) ** 2, axis=0)
    return CovarianceEstimate(cov, np.sqrt(var), n, float(t))


@dataclass
class GaussianityReport:
    ks: np.ndarray
    ks_quantile: float
    excess_kurtosis: np.ndarray
    kurtosis_tol: float
    max_abs_correlation: float
    correlation_tol: float
    n: int

    @property
    def ks_pass(self):
        return bool(np.all(self.ks < self.ks_quantile))

    @property
    def kurtosis_pass(self):
        return bool(np.all(np.abs(self.excess_kurtosis) < self.kurtosis_tol))

    @property
    def correlation_pass(self):
        return bool(self.max_abs_correlation < self.correlation_tol)

    @property
    def passed(self):
        return self.ks_pass and self.kurtosis_pass and self.correlation_pass


def _inv_sqrt(D):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or not np.allclose(D, D.T, rtol=1e-10, atol=1e-14):
        raise InvalidParameterError("reference covariance must be a symmetric matrix")
    w, V = np.linalg.eigh(D)
    if w[0] <= 1e-14 * max(1.0, abs(w[-1])):
        raise InvalidParameterError("reference covariance is singular")
    return V @ np.diag(w**-0.5) @ V.T


def gaussianity_test(samples, D_ref, t=1.0, level=0.95, kurtosis_sigmas=4.0, corr_sigmas=4.0):
    """Whiten by ``(D_ref t)^(-1/2)`` and compare each coordinate with N(0, 1).

    Thresholds: KS distance below the ``level`` quantile of the exact null
    law, ``|excess kurtosis| < kurtosis_sigmas * sqrt(24 / n)`` and
    ``|correlation| < corr_sigmas / sqrt(n)``.
    """
    x = np.asarray(samples, dtype=float)
    n, d = x.shape
    W = x @ _inv_sqrt(np.asarray(D_ref, dtype=float) * t)
    ks = np.array([stats.kstest(W[:, j], "norm").statistic for j in range(d)])
    kurt = np.array([stats.kurtosis(W[:, j], fisher=True) if np.ptp(W[:, j]) > 0 else -3.0
                     for j in range(d)])
    if d > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            C = np.corrcoef(W.T)
        off = C[~np.eye(d, dtype=bool)]
        rho = float(np.max(np.abs(np.nan_to_num(off, nan=1.0))))
    else:
        rho = 0.0
    return GaussianityReport(ks, float(stats.kstwo.ppf(level, n)), kurt,
                             kurtosis_sigmas * math.sqrt(24.0 / n), rho, corr_sigmas / math.sqrt(n), n)


# --------------------------------------------------------------------------
# corrector vanishing


def wilson(k, n, level=0.95):
    lo, hi = proportion_confint(k, n, alpha=1 - level, method="wilson")
    # the closed form is exact at the ends; pin away the rounding
    lo = 0.0 if k == 0 else min(float(lo), k / n)
    hi = 1.0 if k == n else max(float(hi), k / n)
    return lo, hi


@dataclass
class VanishingReport:
    epsilon: np.ndarray
    deltas: np.ndarray
    prob: np.ndarray  # [eps, delta]
    ci: np.ndarray  # [eps, delta, 2]
    sup_values: np.ndarray  # [eps, path]
    n_paths: int
    exit_split: list = field(default_factory=list)

    def strictly_decreasing(self, delta):
        j = int(np.argmin(np.abs(self.deltas - delta)))
        p = self.prob[np.argsort(-self.epsilon), j]
        return bool(np.all(np.diff(p) < 0))

    def trend_slope(self, delta):
        """Slope of ``log p`` against ``log eps`` (nan when some estimate is 0)."""
        j = int(np.argmin(np.abs(self.deltas - delta)))
        p = self.prob[:, j]
        if np.any(p <= 0) or len(p) < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.epsilon), np.log(p), 1)[0])

    def rows(self):
        out = []
        for i, e in enumerate(self.epsilon):
            for j, dl in enumerate(self.deltas):
                out.append((float(e), float(dl), float(self.prob[i, j]), *map(float, self.ci[i, j])))
        return out


def corrector_vanishing(batch, chi_field, epsilon_ladder, deltas=DEFAULT_DELTAS, T=1.0, R=None, anchor=True):
    """Exceedance ``P[sup_{t <= T} |eps chi(X_{t / eps^2})| > delta]`` per ``eps``.

    ``chi_field`` maps positions ``(n, d)`` to corrector vectors ``(n, d)``;
    ``None`` means free space.  With ``anchor`` the corrector is shifted per
    path so that it vanishes at the starting point.  With ``R`` the exit-time split is reported
    per ``eps``: the pathwise bound
    ``P(sup |eps X| >= R) <= P(sup |eps y| > R - 1) + P(sup |eps (chi - chi_0)| >= 1)``
    for displacements from the start.
    """
    eps = np.asarray(epsilon_ladder, dtype=float)
    if np.any(np.diff(eps) >= 0) or np.any(eps <= 0) or np.any(eps > 1):
        raise InvalidParameterError("epsilon ladder must be strictly decreasing in (0, 1]")
    deltas = np.asarray(deltas, dtype=float)
    P, n, d = batch.positions.shape
    i_max = time_index(batch.times, T / eps[-1] ** 2)
    X = batch.positions[:, : i_max + 1]
    if chi_field is None:
        chi = np.zeros_like(X)
    else:
        chi = np.asarray(chi_field(X.reshape(-1, d)), dtype=float).reshape(X.shape)
        if anchor:
            chi = chi - chi[:, :1]
    chi_norm = np.linalg.norm(chi, axis=2)
    sups = np.empty((len(eps), P))
    prob = np.empty((len(eps), len(deltas)))
    ci = np.empty((len(eps), len(deltas), 2))
    split = []
    for a, e in enumerate(eps):
        m = time_index(batch.times, T / e**2)
        sups[a] = e * chi_norm[:, : m + 1].max(axis=1)
        for b, dl in enumerate(deltas):
            k = int(np.sum(sups[a] > dl))
            prob[a, b] = k / P
            ci[a, b] = wilson(k, P)
        if R is not None:
            disp = e * (X[:, : m + 1] - X[:, :1])
            dchi = e * (chi[:, : m + 1] - chi[:, :1])
            ydisp = disp - dchi
            ex = np.linalg.norm(disp, axis=2).max(axis=1) >= R
            ey = np.linalg.norm(ydisp, axis=2).max(axis=1) > R - 1
            ec = np.linalg.norm(dchi, axis=2).max(axis=1) >= 1
            split.append(dict(epsilon=float(e), R=float(R), p_exit=float(ex.mean()),
                              p_y=float(ey.mean()), p_chi=float(ec.mean()),
                              bound_holds=bool(ex.mean() <= ey.mean() + ec.mean())))
    return VanishingReport(eps, deltas, prob, ci, sups, P, split)


# --------------------------------------------------------------------------
# positive definiteness


@dataclass
class PDAudit:
    eigenvalues: np.ndarray
    min_eigenvalue: float
    condition_number: float
    cond_bound: float
    flags: list

    @property
    def passed(self):
        return not self.flags

    def to_dict(self):
        return dict(eigenvalues=self.eigenvalues.tolist(), min_eigenvalue=self.min_eigenvalue,
                    condition_number=self.condition_number, cond_bound=self.cond_bound,
                    flags=list(self.flags), passed=self.passed)


def positive_definiteness_audit(D, cond_bound=1e6, rel_zero=1e-10):
    """Eigen-decomposition of ``D`` with flags for a non-positive minimum or bad conditioning.

    Eigenvalues below ``rel_zero * max|eig|`` count as zero.
    """
    D = np.asarray(getattr(D, "D", D), dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (D + D.T))
    scale = max(float(np.max(np.abs(ev))), np.finfo(float).tiny)
    flags = []
    lo = float(ev[0])
    if lo <= rel_zero * scale:
        flags.append("min_eigenvalue_nonpositive")
        cond = float("inf")
    else:
        cond = float(ev[-1] / lo)
        if cond > cond_bound:
            flags.append("condition_number_exceeds_bound")
    return PDAudit(ev, lo, cond, float(cond_bound), flags)


# --------------------------------------------------------------------------
# experiment


@dataclass
class ScalingExperiment:
    """Quenched scaling experiment on one environment.

    ``environment`` is ``(decomp, field_spec)``.  Constant scalar fields use
    the reflected Euler scheme in the continuum; other fields need ``form``
    and use the lattice walk.  ``record_dt`` must divide ``T / eps^2`` for
    every ladder value.
    """

    epsilon_ladder: list
    T: float
    n_paths: int
    environment: tuple
    start: np.ndarray
    dt: float = 0.01
    record_dt: float = 0.25
    rng: object = None
    form: object = None
    D_ref: np.ndarray = None
    chi_field: object = None
    deltas: tuple = DEFAULT_DELTAS
    results: list = field(default_factory=list)
    batch: PathBatch = None

    def __post_init__(self):
        eps = np.asarray(self.epsilon_ladder, dtype=float)
        if len(eps) == 0 or np.any(np.diff(eps) >= 0) or np.any(eps <= 0) or np.any(eps > 1):
            raise InvalidParameterError("epsilon ladder must be strictly decreasing in (0, 1]")
        if self.n_paths < MIN_PATHS:
            raise InvalidParameterError(f"n_paths must be at least {MIN_PATHS}")

    def horizon(self):
        return self.T / min(self.epsilon_ladder) ** 2

    def simulate(self):
        from .config import RngStream

        decomp, field_spec = self.environment
        rng = self.rng or RngStream(0)
        H = self.horizon()
        if field_spec.scalar_constant is not None and self.form is None:
            stride = max(1, int(round(self.record_dt / self.dt)))
            p = dif.SimParams(self.dt, H, "reflected_euler", rng, np.asarray(self.start, float), stride)
            self.batch = dif.simulate_euler_batch(decomp, p, self.n_paths, field_spec=field_spec)
        else:
            if self.form is None:
                raise InvalidParameterError("non-scalar fields need an assembled form for the lattice walk")
            p = dif.SimParams(self.record_dt, H, "lattice_walk", rng, np.asarray(self.start, float))
            self.batch = dif.simulate_walk_batch(self.form, p, self.n_paths)
        return self.batch

    def run(self):
        if self.batch is None:
            self.simulate()
        d = self.batch.positions.shape[2]
        D_ref = np.eye(d) if self.D_ref is None else np.asarray(self.D_ref, dtype=float)
        van = corrector_vanishing(self.batch, self.chi_field, self.epsilon_ladder, self.deltas, self.T)
        self.results = []
        for a, e in enumerate(self.epsilon_ladder):
            x = scaled_displacements(self.batch, e, self.T)
            ce = estimate_covariance(x, self.T)
            g = gaussianity_test(x, D_ref, self.T)
            self.results.append(dict(
                epsilon=float(e), n_paths=int(self.n_paths), cov=ce.cov.tolist(), cov_ci=ce.radius.tolist(),
                ks=g.ks.tolist(), ks_quantile=g.ks_quantile, kurtosis=g.excess_kurtosis.tolist(),
                max_abs_correlation=g.max_abs_correlation, gaussian_pass=g.passed,
                exceedance={f"{dl:g}": float(van.prob[a, b]) for b, dl in enumerate(van.deltas)},
                exceedance_ci={f"{dl:g}": list(van.ci[a, b]) for b, dl in enumerate(van.deltas)},
            ))
        self.vanishing = van
        return self.results

    def to_json(self, **extra):
        out = dict(results=self.results, T=self.T, epsilon_ladder=list(map(float, self.epsilon_ladder)),
                   D_ref=None if self.D_ref is None else np.asarray(self.D_ref).tolist(),
                   protocol="quenched", thresholds_note="ladder thresholds are engineering choices")
        out.update(extra)
        return json.dumps(out, indent=2, sort_keys=True)
