"""Reflecting diffusion on the enlarged cluster and its lattice analogue.

Two schemes are provided.  ``reflected_euler`` moves a Brownian proposal
through the union of balls with specular reflection; it is only used for
constant scalar fields ``a = c I``.  ``lattice_walk`` is the continuous-time
conductance walk generated by the discrete form and handles any field.

Per-path randomness is a SplitMix64 stream seeded from ``RngStream.path_seeds``
so batches give identical paths for any thread count.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from . import _geom
from . import field as fieldmod
from .config import RngStream
from .corrector import CorrectorField
from .errors import (DomainError, InvalidParameterError, SimulationFailureError)

SCHEMES = ("reflected_euler", "lattice_walk")
MAX_LEVEL = 10


@dataclass
class SimParams:
    """Time stepping and seeding for one path (or a batch of paths).

    ``dt`` is the Euler step for ``reflected_euler`` and the recording grid
    for ``lattice_walk``.  ``record_stride`` keeps every n-th Euler step.
    """

    dt: float
    T: float
    scheme: str = "reflected_euler"
    rng: RngStream = field(default_factory=lambda: RngStream(0))
    start: np.ndarray = None
    record_stride: int = 1
    max_level: int = MAX_LEVEL

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidParameterError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.T >= 0):
            raise InvalidParameterError("need dt > 0 and T >= 0")
        if self.T > 0 and self.dt > self.T * (1 + 1e-12):
            raise InvalidParameterError("dt must not exceed T")
        if int(self.record_stride) < 1:
            raise InvalidParameterError("record_stride must be at least 1")
        if not 0 <= int(self.max_level) <= 30:
            raise InvalidParameterError("max_level must lie in [0, 30]")

    @property
    def n_steps(self):
        if self.T == 0:
            return 0
        return max(1, int(math.ceil(self.T / self.dt - 1e-9)))


@dataclass(eq=False)
class DiffusionPath:
    times: np.ndarray
    positions: np.ndarray
    reflection_log: list = field(default_factory=list)
    scheme: str = "reflected_euler"
    nodes: np.ndarray = None
    form: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.positions.shape[1]

    def position_at(self, t):
        """Last recorded position at a time ``<= t``."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0 or t > self.times[-1] + 1e-12:
            raise InvalidParameterError("time outside the recorded horizon")
        return self.positions[i]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(self.dim)])
        for t, x in zip(self.times, self.positions):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
        return buf.getvalue()

    def reflections_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"exit_{j + 1}" for j in range(self.dim)] + ["ball_index"])
        for t, e, b in self.reflection_log:
            w.writerow([repr(float(t))] + [repr(float(v)) for v in e] + [int(b)])
        return buf.getvalue()


@dataclass(eq=False)
class PathBatch:
    """Recorded positions of many independent paths on a common time grid."""

    times: np.ndarray
    positions: np.ndarray  # (n_paths, n_times, d)
    scheme: str
    nodes: np.ndarray = None
    form: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.positions.shape[0]

    def path(self, i):
        return DiffusionPath(self.times, self.positions[i], [], self.scheme,
                             None if self.nodes is None else self.nodes[i], self.form)


# --------------------------------------------------------------------------
# random numbers


@njit(cache=True)
def _splitmix(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _uniform(state):
    """Uniform on the open interval (0, 1)."""
    return (float(_splitmix(state) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _normals(state, out):
    d = out.shape[0]
    j = 0
    while j < d:
        r = math.sqrt(-2.0 * math.log(_uniform(state)))
        th = 2.0 * math.pi * _uniform(state)
        out[j] = r * math.cos(th)
        if j + 1 < d:
            out[j + 1] = r * math.sin(th)
        j += 2


# --------------------------------------------------------------------------
# reflected Euler


@njit(cache=True)
def _euler_path(start, n_steps, dt, T, c, seed, stride, want_log, max_level, free,
                centers, cell_start, glo, side, ncell, periodic, L, radius, tol, max_refl):
    d = start.shape[0]
    n_rec = n_steps // stride + 1
    if n_steps % stride != 0:
        n_rec += 1
    pos = np.empty((n_rec, d))
    times = np.empty(n_rec)
    state = np.empty(1, np.uint64)
    state[0] = seed
    p = start.copy()
    pos[0] = p
    times[0] = 0.0
    r = 1
    cap = 16
    lt = np.empty(cap)
    lp = np.empty((cap, d))
    li = np.empty(cap, np.int64)
    nl = 0
    ev_pts = np.empty((max_refl + 1, d))
    ev_idx = np.empty(max_refl + 1, np.int64)
    xi = np.empty(d)
    q = np.empty(d)
    diag = np.zeros(4, np.int64)  # substeps, reflections, deepest level, rejected proposals
    status = 0
    full = np.int64(1) << max_level
    for step in range(n_steps):
        h_step = dt if step < n_steps - 1 else T - (n_steps - 1) * dt
        t0 = step * dt
        rem = full
        while rem > 0:
            level = 0
            if not free:
                m, _k = _geom.max_margin(p, centers, cell_start, glo, side, ncell, periodic, L, radius)
                while level < max_level and m < 3.0 * math.sqrt(2.0 * c * h_step / (1 << level)):
                    level += 1
            while True:
                ticks = min(full >> level, rem)
                h = h_step * ticks / full
                _normals(state, xi)
                s = math.sqrt(2.0 * c * h)
                for j in range(d):
                    q[j] = p[j] + s * xi[j]
                if free:
                    st = _geom.STATUS_OK
                    end = q.copy()
                    nev = 0
                else:
                    st, end, nev = _geom.reflect_segment(p, q, centers, cell_start, glo, side, ncell,
                                                         periodic, L, radius, tol, max_refl, ev_pts, ev_idx)
                if st == _geom.STATUS_OK:
                    break
                if st == _geom.STATUS_OUTSIDE:
                    status = 2
                    break
                diag[3] += 1
                if level < max_level:
                    level += 1
                    continue
                status = 1
                break
            if status != 0:
                break
            if level > diag[2]:
                diag[2] = level
            diag[0] += 1
            diag[1] += nev
            if want_log and nev > 0:
                te = t0 + h_step * (full - rem + ticks) / full
                for e in range(nev):
                    if nl == cap:
                        cap *= 2
                        nlt = np.empty(cap)
                        nlp = np.empty((cap, d))
                        nli = np.empty(cap, np.int64)
                        nlt[:nl] = lt[:nl]
                        nlp[:nl] = lp[:nl]
                        nli[:nl] = li[:nl]
                        lt, lp, li = nlt, nlp, nli
                    lt[nl] = te
                    lp[nl] = ev_pts[e]
                    li[nl] = ev_idx[e]
                    nl += 1
            p = end
            rem -= ticks
        if status != 0:
            break
        if (step + 1) % stride == 0 or step == n_steps - 1:
            pos[r] = p
            times[r] = T if step == n_steps - 1 else (step + 1) * dt
            r += 1
    return pos[:r], times[:r], lt[:nl], lp[:nl], li[:nl], status, diag


@njit(cache=True, parallel=True)
def _euler_batch(starts, n_steps, dt, T, c, seeds, stride, max_level, free,
                 centers, cell_start, glo, side, ncell, periodic, L, radius, tol, max_refl, out, status, diag):
    for i in prange(starts.shape[0]):
        pos, _t, _a, _b, _c, st, dg = _euler_path(starts[i], n_steps, dt, T, c, seeds[i], stride, False,
                                                  max_level, free, centers, cell_start, glo, side, ncell,
                                                  periodic, L, radius, tol, max_refl)
        status[i] = st
        diag[i] = dg
        out[i, :pos.shape[0]] = pos


def _record_times(params):
    n, s = params.n_steps, int(params.record_stride)
    k = np.arange(0, n + 1, s, dtype=float) * params.dt
    if n == 0:
        return k
    if n % s:
        return np.r_[k, params.T]
    k[-1] = params.T
    return k


def _free_args(d):
    z = np.zeros(d)
    return (np.zeros((0, d)), np.zeros(2, np.int64), z, np.ones(d), np.ones(d, np.int64), False, np.ones(d))


def _euler_setup(decomp, field_spec, start):
    c = (field_spec or fieldmod.half_identity()).scalar_constant
    if c is None:
        raise InvalidParameterError("reflected Euler needs a constant scalar field c I; use lattice_walk")
    if decomp is None:
        start = np.asarray(start, dtype=float)
        return c, True, _free_args(start.shape[-1]), 1.0, 0.0, 1
    from .cluster import contains
    if not np.all(contains(decomp, np.atleast_2d(start))):
        raise DomainError("start must lie in the enlarged cluster")
    return c, False, decomp.wgrid.args, decomp.radii.rho_prime, decomp.tol_geom, decomp.max_reflections


def _failure(status, diag, where):
    kind = "step rejected after the maximal number of halvings" if status == 1 else "left the domain"
    info = dict(status=int(status), substeps=int(diag[0]), reflections=int(diag[1]),
                deepest_level=int(diag[2]), rejected=int(diag[3]), where=where)
    return SimulationFailureError(f"reflected Euler failed: {kind}", info)


def simulate_reflected_euler(decomp, params, field_spec=None):
    """One reflected Euler path with its complete reflection log.

    ``decomp=None`` simulates free space (no boundary).
    """
    if params.scheme != "reflected_euler":
        raise InvalidParameterError("params.scheme must be reflected_euler")
    start = np.asarray(params.start, dtype=float)
    c, free, args, radius, tol, max_refl = _euler_setup(decomp, field_spec, start)
    seed = params.rng.path_seeds(1)[0]
    pos, times, lt, lp, li, status, diag = _euler_path(
        start, params.n_steps, float(params.dt), float(params.T), float(c), seed, int(params.record_stride),
        True, int(params.max_level), free, *args, radius, tol, max_refl)
    if status != 0:
        raise _failure(status, diag, pos[-1].tolist())
    if free or len(li) == 0:
        log = []
    else:
        ids = decomp.index_set[decomp.wgrid.order[li]]
        log = [(float(t), e.copy(), int(b)) for t, e, b in zip(lt, lp, ids)]
    dg = dict(substeps=int(diag[0]), reflections=int(diag[1]), deepest_level=int(diag[2]), rejected=int(diag[3]))
    return DiffusionPath(times, pos, log, "reflected_euler", diagnostics=dg)


def simulate_euler_batch(decomp, params, n_paths, starts=None, field_spec=None, path_offset=0):
    """Independent reflected Euler paths (parallel over paths, no reflection logs)."""
    if params.scheme != "reflected_euler":
        raise InvalidParameterError("params.scheme must be reflected_euler")
    if starts is None:
        starts = np.broadcast_to(np.asarray(params.start, dtype=float), (n_paths, len(params.start)))
    starts = np.ascontiguousarray(starts, dtype=float)
    c, free, args, radius, tol, max_refl = _euler_setup(decomp, field_spec, starts)
    seeds = params.rng.path_seeds(n_paths, offset=path_offset)
    times = _record_times(params)
    out = np.empty((n_paths, len(times), starts.shape[1]))
    status = np.zeros(n_paths, np.int64)
    diag = np.zeros((n_paths, 4), np.int64)
    _euler_batch(starts, params.n_steps, float(params.dt), float(params.T), float(c), seeds,
                 int(params.record_stride), int(params.max_level), free, *args, radius, tol, max_refl,
                 out, status, diag)
    bad = np.flatnonzero(status)
    if len(bad):
        i = int(bad[0])
        raise _failure(status[i], diag[i], f"path {i}")
    dg = dict(substeps=int(diag[:, 0].sum()), reflections=int(diag[:, 1].sum()),
              deepest_level=int(diag[:, 2].max(initial=0)), rejected=int(diag[:, 3].sum()))
    return PathBatch(times, out, "reflected_euler", diagnostics=dg)


# --------------------------------------------------------------------------
# lattice conductance walk


def _adjacency(form):
    if "adj" in form._cache:
        return form._cache["adj"]
    n, d = form.n_nodes, form.dim
    a, b, ax = form.edge_a, form.edge_b, form.edge_axis
    rate = form.conductance / form.delta**d
    src = np.r_[a, b]
    dst = np.r_[b, a]
    disp = np.zeros((2 * len(a), d))
    disp[np.arange(len(a)), ax] = form.delta
    disp[len(a) + np.arange(len(a)), ax] = -form.delta
    order = np.argsort(src, kind="stable")
    indptr = np.r_[0, np.cumsum(np.bincount(src, minlength=n))].astype(np.int64)
    adj = (indptr, dst[order].astype(np.int64), np.r_[rate, rate][order], np.ascontiguousarray(disp[order]))
    form._cache["adj"] = adj
    return adj


@njit(cache=True)
def _walk(start, x0, T, rec_times, seed, indptr, nbr, rate, disp, pos, nodes):
    state = np.empty(1, np.uint64)
    state[0] = seed
    node = start
    x = x0.copy()
    t = 0.0
    k = 0
    n_rec = rec_times.shape[0]
    jumps = 0
    while k < n_rec:
        Q = 0.0
        for e in range(indptr[node], indptr[node + 1]):
            Q += rate[e]
        t_next = np.inf if Q == 0.0 else t - math.log(_uniform(state)) / Q
        while k < n_rec and rec_times[k] < t_next:
            pos[k] = x
            nodes[k] = node
            k += 1
        if k == n_rec:
            break
        u = _uniform(state) * Q
        acc = 0.0
        pick = indptr[node + 1] - 1
        for e in range(indptr[node], indptr[node + 1]):
            acc += rate[e]
            if u < acc:
                pick = e
                break
        for j in range(x.shape[0]):
            x[j] += disp[pick, j]
        node = nbr[pick]
        t = t_next
        jumps += 1
    return jumps


@njit(cache=True, parallel=True)
def _walk_batch(starts, x0s, T, rec_times, seeds, indptr, nbr, rate, disp, pos, nodes, jumps):
    for i in prange(starts.shape[0]):
        jumps[i] = _walk(starts[i], x0s[i], T, rec_times, seeds[i], indptr, nbr, rate, disp, pos[i], nodes[i])


def snap_to_node(form, x):
    """Node of the lattice site nearest to ``x`` (domain error on a closed site)."""
    x = np.asarray(x, dtype=float)
    idx = np.rint(x / form.delta).astype(np.int64) - form.grid_origin
    shape = np.array(form.grid_shape)
    if form.grid_periodic:
        idx = np.mod(idx, shape)
    elif np.any(idx < 0) or np.any(idx >= shape):
        raise DomainError("start lies outside the lattice region")
    node = int(form.grid_index[tuple(idx)])
    if node < 0:
        raise DomainError("start lies on a closed site")
    return node


def _walk_setup(form, params):
    if params.scheme != "lattice_walk":
        raise InvalidParameterError("params.scheme must be lattice_walk")
    if form.killed.any():
        raise InvalidParameterError("lattice walk needs a form without killed boundary")
    times = np.arange(0, params.n_steps + 1, dtype=float) * params.dt
    if params.n_steps:
        times[-1] = params.T
    return times, _adjacency(form)


def simulate_lattice_walk(form, params):
    """Continuous-time walk with rate ``c_e / delta^d`` across each incident edge.

    Missing edges are reflecting.  Positions are recorded on the grid
    ``0, dt, 2 dt, ..., T``; periodic forms give unwrapped positions.
    """
    times, (indptr, nbr, rate, disp) = _walk_setup(form, params)
    x = np.asarray(params.start, dtype=float)
    node = snap_to_node(form, x)
    x0 = form.coords[node].copy()
    if form.grid_periodic:
        x0 = x0 + np.round((x - x0) / (np.array(form.grid_shape) * form.delta)) * np.array(form.grid_shape) * form.delta
    pos = np.empty((len(times), form.dim))
    nodes = np.empty(len(times), np.int64)
    seed = params.rng.path_seeds(1)[0]
    jumps = _walk(node, x0, float(params.T), times, seed, indptr, nbr, rate, disp, pos, nodes)
    return DiffusionPath(times, pos, [], "lattice_walk", nodes, form, dict(jumps=int(jumps)))


def simulate_walk_batch(form, params, n_paths, path_offset=0):
    times, (indptr, nbr, rate, disp) = _walk_setup(form, params)
    node = snap_to_node(form, params.start)
    starts = np.full(n_paths, node, np.int64)
    x0s = np.repeat(form.coords[node][None], n_paths, axis=0)
    pos = np.empty((n_paths, len(times), form.dim))
    nodes = np.empty((n_paths, len(times)), np.int64)
    jumps = np.zeros(n_paths, np.int64)
    seeds = params.rng.path_seeds(n_paths, offset=path_offset)
    _walk_batch(starts, x0s, float(params.T), times, seeds, indptr, nbr, rate, disp, pos, nodes, jumps)
    return PathBatch(times, pos, "lattice_walk", nodes, form, dict(jumps=int(jumps.sum())))


def simulate(decomp, params, form=None, field_spec=None):
    """Dispatch on ``params.scheme``."""
    if params.scheme == "reflected_euler":
        return simulate_reflected_euler(decomp, params, field_spec)
    if form is None:
        raise InvalidParameterError("lattice_walk needs an assembled form")
    return simulate_lattice_walk(form, params)


# --------------------------------------------------------------------------
# environment process


def environment_window(config, path, t, window_radius):
    """Points within ``window_radius`` of ``X_t``, re-centred at ``X_t``.

    Coordinates are formed in the base frame, so they coincide bit for bit
    with ``shift(config, X_t).points`` (minimum image on a torus).
    """
    if not window_radius > 0:
        raise InvalidParameterError("window_radius must be positive")
    x = np.asarray(path.position_at(t), dtype=float)
    rel = config.base_points - (config.offset + x)
    box = config.base_box
    if box.periodic:
        rel = rel - box.lengths * np.round(rel / box.lengths)
    keep = np.linalg.norm(rel, axis=1) < window_radius
    w = rel[keep]
    return w[np.lexsort(w.T[::-1])] if len(w) else w


def window_statistic_average(config, path, window_radius, stat=len, stride=1):
    """Running time average of ``stat(environment_window)`` along the recorded path."""
    vals = np.array([stat(environment_window(config, path, t, window_radius))
                     for t in path.times[::stride]], dtype=float)
    return np.cumsum(vals) / np.arange(1, len(vals) + 1)


# --------------------------------------------------------------------------
# martingale diagnostics


@dataclass
class QVReport:
    realized: np.ndarray
    predicted: np.ndarray
    realized_se: np.ndarray
    discrepancy: float
    diag_discrepancy: np.ndarray
    mean_increment: np.ndarray
    increment_se: np.ndarray
    z_scores: np.ndarray
    n_paths: int
    n_increments: int

    @property
    def martingale_ok(self):
        return bool(np.all(np.abs(self.z_scores) < 4.0))


def _as_batch(path):
    if isinstance(path, PathBatch):
        return path
    if isinstance(path, DiffusionPath):
        nodes = None if path.nodes is None else path.nodes[None]
        return PathBatch(path.times, path.positions[None], path.scheme, nodes, path.form)
    raise InvalidParameterError("expected a DiffusionPath or PathBatch")


def qv_check(path, solutions=None, field_spec=None, config=None):
    """Realised quadratic covariation of ``M = y(X) - y(X_0)`` against ``int f(X_s) ds``.

    ``f = 2 (grad y)^T a (grad y)`` for continuum paths (multilinear
    interpolation of node data) and the edge sum
    ``sum_e (c_e / delta^d) dy^k dy^l`` for lattice walks on the solved form.
    ``solutions=None`` takes ``y = x`` (free space).
    """
    b = _as_batch(path)
    P, n, d = b.positions.shape
    if n < 2:
        raise InvalidParameterError("need at least two recorded times")
    field_spec = field_spec or fieldmod.half_identity()
    X = b.positions.reshape(-1, d)
    lattice = b.nodes is not None and solutions is not None
    if solutions is None:
        Y = X
        A = fieldmod.evaluate(field_spec, config, X)
        f = 2.0 * A
    else:
        sol = sorted(solutions, key=lambda s: s.k)
        form = sol[0].form
        if form.dim != d or len(sol) != d:
            raise InvalidParameterError("solutions do not match the path dimension")
        if lattice:
            if b.form is not form:
                raise InvalidParameterError("lattice path was generated on a different form")
            nodes = b.nodes.reshape(-1)
            chi = np.stack([s.chi_values for s in sol], axis=1)
            Y = X - chi[nodes]
            dy = np.stack([s.edge_gradient_y() * form.delta for s in sol], axis=1)
            w = form.conductance / form.delta**d
            per_edge = w[:, None, None] * dy[:, :, None] * dy[:, None, :]
            fn = np.zeros((form.n_nodes, d, d))
            np.add.at(fn, form.edge_a, per_edge)
            np.add.at(fn, form.edge_b, per_edge)
            f = fn[nodes]
        else:
            cf = CorrectorField(sol)
            Y = cf.y(X)
            G = cf.grad_y(X)  # [n, k, j]
            A = fieldmod.evaluate(field_spec, config, X)
            f = 2.0 * np.einsum("nki,nij,nlj->nkl", G, A, G)
    Y = Y.reshape(P, n, d)
    f = f.reshape(P, n, d, d)
    dM = np.diff(Y, axis=1)
    dt = np.diff(b.times)
    prod = dM[:, :, :, None] * dM[:, :, None, :]
    realized = prod.sum(axis=(0, 1))
    realized_se = np.sqrt((prod**2).sum(axis=(0, 1)))
    predicted = np.einsum("pnkl,n->kl", f[:, :-1], dt)
    disc = float(np.linalg.norm(realized - predicted) / np.linalg.norm(predicted))
    ddisc = np.abs(np.diag(realized) - np.diag(predicted)) / np.abs(np.diag(predicted))
    if P >= 2:
        ends = Y[:, -1] - Y[:, 0]
        mean = ends.mean(axis=0)
        se = ends.std(axis=0, ddof=1) / math.sqrt(P)
    else:
        inc = dM[0]
        mean = inc.mean(axis=0)
        se = inc.std(axis=0, ddof=1) / math.sqrt(len(inc))
    z = np.divide(mean, se, out=np.zeros_like(mean), where=se > 0)
    return QVReport(realized, predicted, realized_se, disc, ddisc, mean, se, z, P, P * (n - 1))
