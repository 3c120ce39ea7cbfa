"""Discrete corrector problem on the lattice trace of the enlarged cluster.

The Dirichlet form ``E(u, v) = int <a grad u, grad v>`` is discretised on the
open-site graph with edge conductances ``c_e = <A(mid) e, e> delta^(d-2)``:

    E(u, u) = sum over edges c_e (u_z - u_z')^2

Harmonic coordinates ``y^k = z_k - chi^k`` minimise ``E`` with ``chi^k = 0``
on the killed boundary (Dirichlet), or are taken periodic on a torus.  The
solve is done for ``chi`` directly: ``L chi = b`` with ``b`` collecting the
edge displacements, which keeps periodic problems free of coordinate jumps.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats
from scipy.spatial import cKDTree

from . import field as fieldmod
from .errors import DomainError, InvalidParameterError, NonConvergenceError
from .lattice import local_trace, sobolev_exponents

BOUNDARIES = ("dirichlet", "periodic", "neumann")


@dataclass(eq=False)
class DiscreteForm:
    """Weighted graph on the lattice trace with boundary bookkeeping.

    ``coords`` are physical node positions (continuous across a periodic
    seam only in window mode).  Edge ``e`` joins ``edge_a[e]`` to
    ``edge_b[e]`` with ``edge_b = edge_a + delta e_axis``.
    """

    delta: float
    dim: int
    boundary: str
    coords: np.ndarray
    grid_index: np.ndarray
    grid_shape: tuple
    grid_origin: np.ndarray
    grid_periodic: bool
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_axis: np.ndarray
    conductance: np.ndarray
    killed: np.ndarray
    center: np.ndarray = None
    R: float = None
    graph_sites: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self):
        return len(self.coords)

    @property
    def volume(self):
        return self.n_nodes * self.delta**self.dim

    def edge_displacement(self, k):
        return np.where(self.edge_axis == k, self.delta, 0.0)

    def laplacian(self):
        if "L" not in self._cache:
            n = self.n_nodes
            a, b, c = self.edge_a, self.edge_b, self.conductance
            off = sparse.coo_matrix((np.r_[-c, -c], (np.r_[a, b], np.r_[b, a])), shape=(n, n))
            diag = np.bincount(a, weights=c, minlength=n) + np.bincount(b, weights=c, minlength=n)
            self._cache["L"] = (off + sparse.diags(diag)).tocsr()
        return self._cache["L"]

    def degree(self):
        return np.bincount(self.edge_a, minlength=self.n_nodes) + np.bincount(self.edge_b, minlength=self.n_nodes)

    def energy(self, u):
        """``sum_e c_e (u_a - u_b)^2`` for a node function ``u``."""
        u = np.asarray(u, dtype=float)
        du = u[self.edge_a] - u[self.edge_b]
        return float(np.sum(self.conductance * du * du))

    def coordinate_energy(self, k):
        """Energy of the coordinate function ``z_k`` (edge displacements, seam-safe)."""
        dz = self.edge_displacement(k)
        return float(np.sum(self.conductance * dz * dz))

    def rhs(self, k):
        dz = self.conductance * self.edge_displacement(k)
        n = self.n_nodes
        return np.bincount(self.edge_b, weights=dz, minlength=n) - np.bincount(self.edge_a, weights=dz, minlength=n)


def _edges_from_mask(M, periodic):
    """Nearest-neighbour edges between True sites of ``M`` as flat index pairs."""
    ids = -np.ones(M.shape, dtype=np.int64)
    ids[M] = np.arange(int(M.sum()))
    ea, eb, ax = [], [], []
    for j in range(M.ndim):
        if periodic:
            nb = np.roll(ids, -1, axis=j)
            src = ids
        else:
            sl_a = [slice(None)] * M.ndim
            sl_b = [slice(None)] * M.ndim
            sl_a[j] = slice(0, -1)
            sl_b[j] = slice(1, None)
            src = ids[tuple(sl_a)]
            nb = ids[tuple(sl_b)]
        ok = (src >= 0) & (nb >= 0)
        ea.append(src[ok])
        eb.append(nb[ok])
        ax.append(np.full(int(ok.sum()), j, dtype=np.int64))
    return ids, np.concatenate(ea), np.concatenate(eb), np.concatenate(ax)


def assemble(decomp, graph, field_spec, R=None, center=None, boundary="dirichlet", config=None):
    """Assemble the discrete form on the lattice trace.

    Parameters
    ----------
    decomp : ClusterDecomposition or None
        Supplies the configuration for non-constant fields.
    graph : LatticeGraph
    field_spec : FieldSpec
    R, center : float, array
        Radius and centre of the trace (``dirichlet``/``neumann``).  Defaults
        to the box centre.
    boundary : {"dirichlet", "periodic", "neumann"}
        ``dirichlet`` pins ``chi = 0`` on trace nodes with an open neighbour
        outside ``B(center, R)``; ``periodic`` uses the largest component of a
        periodic graph; ``neumann`` has no pinned nodes.
    """
    if boundary not in BOUNDARIES:
        raise InvalidParameterError(f"unknown boundary {boundary!r}")
    config = decomp.config if (config is None and decomp is not None) else config
    d = graph.dim
    delta = graph.delta
    if boundary == "periodic":
        if not graph.periodic:
            raise InvalidParameterError("periodic boundary needs a periodic lattice graph")
        if graph.largest_component == 0:
            raise DomainError("lattice graph has no open sites")
        M = graph.largest_mask()
        coords_full = graph.coords()
        ids, ea, eb, ax = _edges_from_mask(M, True)
        coords = coords_full[M]
        killed = np.zeros(len(coords), dtype=bool)
        grid_index = ids
        origin = graph.m0.copy()
        gshape = graph.shape
        sites = np.flatnonzero(M.ravel())
        center_v, R_v = None, None
    else:
        center_v = graph.box.center if center is None else np.asarray(center, dtype=float)
        if R is None or not R > 0:
            raise InvalidParameterError("R must be positive")
        if not graph.periodic:
            inr = float(np.min(np.minimum(center_v - graph.box.lo, graph.box.hi - center_v)))
            if R > inr + 1e-12:
                raise DomainError("trace ball exceeds the box")
        win, comp, wcoords = local_trace(graph, center_v, R)
        if not comp.any():
            raise DomainError("empty trace around the centre")
        ids, ea, eb, ax = _edges_from_mask(comp, False)
        coords = wcoords[comp]
        if boundary == "dirichlet":
            open_w = graph.open_mask[win]
            inball = np.linalg.norm(wcoords - center_v, axis=-1) < R
            outside_open = open_w & ~inball
            touch = np.zeros(comp.shape, dtype=bool)
            for j in range(d):
                for s in (1, -1):
                    touch |= np.roll(np.pad(outside_open, 1), s, axis=j)[(slice(1, -1),) * d]
            killed = touch[comp]
            if not killed.any():
                raise DomainError("trace does not reach the ball boundary; use neumann")
        else:
            killed = np.zeros(len(coords), dtype=bool)
        grid_index = ids
        origin = np.rint(wcoords[(0,) * d] / delta).astype(np.int64)
        gshape = comp.shape
        full = np.ravel_multi_index(tuple(np.stack(np.meshgrid(*[w.ravel() for w in win], indexing="ij"), 0)), graph.shape)
        sites = full[comp]
        R_v = float(R)
    mid = coords[ea] + 0.5 * delta * np.eye(d)[ax]
    cond = np.empty(len(ea))
    for j in range(d):
        sel = ax == j
        if sel.any():
            cond[sel] = fieldmod.directional(field_spec, config, mid[sel], j)
    cond *= delta ** (d - 2)
    return DiscreteForm(
        delta=delta, dim=d, boundary=boundary, coords=coords, grid_index=grid_index,
        grid_shape=tuple(gshape), grid_origin=origin, grid_periodic=(boundary == "periodic"),
        edge_a=ea, edge_b=eb, edge_axis=ax, conductance=cond, killed=killed,
        center=center_v, R=R_v, graph_sites=sites,
    )


# --------------------------------------------------------------------------
# solver


def pcg(A, b, tol=1e-8, max_iter=None, M=None):
    """Preconditioned conjugate gradients.

    Stops when ``sqrt(r' M^-1 r) <= tol * sqrt(b' M^-1 b)``.  ``M`` maps a
    residual to the preconditioned residual (identity when None).

    Returns
    -------
    x, iterations, residual_history
    """
    n = len(b)
    max_iter = int(20 * math.sqrt(max(n, 1))) if max_iter is None else int(max_iter)
    apply_M = (lambda r: r) if M is None else M
    x = np.zeros(n)
    r = b.copy()
    z = apply_M(r)
    rz = float(r @ z)
    bnorm = math.sqrt(max(rz, 0.0))
    hist = [1.0 if bnorm > 0 else 0.0]
    if bnorm == 0.0:
        return x, 0, hist
    p = z.copy()
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise NonConvergenceError("matrix is not positive definite on the search space", hist)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = apply_M(r)
        rz_new = float(r @ z)
        res = math.sqrt(max(rz_new, 0.0)) / bnorm
        hist.append(res)
        if res <= tol:
            return x, it, hist
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergenceError(f"PCG did not reach tol={tol} in {max_iter} iterations", hist)


def _preconditioner(A, kind):
    if kind == "jacobi":
        inv = 1.0 / A.diagonal()
        return lambda r: inv * r
    if kind == "amg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(A.tocsr(), symmetry="symmetric")
        return ml.aspreconditioner(cycle="V")
    if kind == "none":
        return None
    raise InvalidParameterError(f"unknown preconditioner {kind!r}")


@dataclass(eq=False)
class CorrectorSolution:
    k: int
    y_values: np.ndarray
    chi_values: np.ndarray
    residual_norm: float
    iterations: int
    residual_history: list
    form: DiscreteForm
    tol: float = 1e-8

    def edge_gradient_y(self):
        """``(y_b - y_a) / delta`` per edge, seam-safe on a torus."""
        f = self.form
        dchi = self.chi_values[f.edge_b] - self.chi_values[f.edge_a]
        return (f.edge_displacement(self.k) - dchi) / f.delta

    def edge_gradient_chi(self):
        f = self.form
        return (self.chi_values[f.edge_b] - self.chi_values[f.edge_a]) / f.delta

    def harmonicity_residual(self):
        """``sum_e c_e (y(z) - y(z'))`` at every node (zero at free nodes for an exact solve)."""
        f = self.form
        flux = f.conductance * self.edge_gradient_y() * f.delta
        n = f.n_nodes
        return np.bincount(f.edge_a, weights=flux, minlength=n) - np.bincount(f.edge_b, weights=flux, minlength=n)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.form.dim
        w.writerow([f"z_{j + 1}" for j in range(d)] + ["y", "chi"])
        for z, y, c in zip(self.form.coords, self.y_values, self.chi_values):
            w.writerow([repr(float(v)) for v in z] + [repr(float(y)), repr(float(c))])
        return buf.getvalue()


def solve_harmonic_coordinate(form, k, tol=1e-8, max_iter=None, preconditioner="jacobi"):
    """Solve for the harmonic coordinate ``y^k`` and corrector ``chi^k = z_k - y^k``.

    Raises
    ------
    NonConvergenceError
        When PCG hits ``max_iter`` (default ``20 sqrt(#nodes)``).
    """
    if not 0 <= k < form.dim:
        raise InvalidParameterError("direction index out of range")
    L = form.laplacian()
    b = form.rhs(k)
    free = ~form.killed
    if not form.killed.any():
        free = free.copy()
        free[0] = False  # fix the additive constant
    idx = np.flatnonzero(free)
    key = ("Lff", preconditioner)
    if key not in form._cache:
        Lff = L[idx][:, idx].tocsr()
        form._cache[key] = (Lff, _preconditioner(Lff, preconditioner))
    Lff, M = form._cache[key]
    if max_iter is None:
        max_iter = int(20 * math.sqrt(max(len(idx), 1)))
    xf, it, hist = pcg(Lff, b[idx], tol=tol, max_iter=max_iter, M=M)
    chi = np.zeros(form.n_nodes)
    chi[idx] = xf
    if not form.killed.any():
        chi -= chi.mean()
    y = form.coords[:, k] - chi
    return CorrectorSolution(k, y, chi, hist[-1], it, hist, form, tol)


def solve_all(form, tol=1e-8, max_iter=None, preconditioner="jacobi"):
    return [solve_harmonic_coordinate(form, k, tol, max_iter, preconditioner) for k in range(form.dim)]


# --------------------------------------------------------------------------
# effective matrix


@dataclass
class EffectiveMatrix:
    D: np.ndarray
    eigenvalues: np.ndarray
    positive_definite: bool
    normalization: str
    R_used: float | None
    delta_used: float
    n_nodes: int

    def to_dict(self):
        return dict(
            D=self.D.tolist(), eigenvalues=self.eigenvalues.tolist(),
            positive_definite=bool(self.positive_definite), normalization=self.normalization,
            R_used=self.R_used, delta_used=self.delta_used, n_nodes=self.n_nodes,
            energy_factor=2,
        )

    def to_json(self, **extra):
        out = self.to_dict()
        out.update(extra)
        return json.dumps(out, indent=2, sort_keys=True)


def effective_matrix(solutions, form=None, normalization="per_cluster_volume"):
    """Effective covariance ``D_kl = 2 / (delta^d N) sum_e c_e dy^k dy^l``.

    ``per_cluster_volume`` divides by the trace volume ``delta^d N``.
    ``per_edge_direction`` divides the contribution of direction-``j`` edges
    by ``delta^d`` times the number of such edges; it removes the boundary
    edge deficit of finite Dirichlet traces.
    """
    form = solutions[0].form if form is None else form
    d = form.dim
    if len(solutions) != d or any(s.form is not form for s in solutions):
        raise InvalidParameterError("need one solution per direction on the same form")
    if sorted(s.k for s in solutions) != list(range(d)):
        raise InvalidParameterError("solutions must cover every direction once")
    sol = sorted(solutions, key=lambda s: s.k)
    dy = np.stack([s.edge_gradient_y() * form.delta for s in sol], axis=1)
    c = form.conductance
    if normalization == "per_cluster_volume":
        D = 2.0 * np.einsum("e,ek,el->kl", c, dy, dy) / (form.delta**d * form.n_nodes)
    elif normalization == "per_edge_direction":
        D = np.zeros((d, d))
        for j in range(d):
            sel = form.edge_axis == j
            if sel.any():
                D += 2.0 * np.einsum("e,ek,el->kl", c[sel], dy[sel], dy[sel]) / (form.delta**d * sel.sum())
    else:
        raise InvalidParameterError(f"unknown normalization {normalization!r}")
    D = 0.5 * (D + D.T)
    ev = np.linalg.eigvalsh(D)
    return EffectiveMatrix(D, ev, bool(ev[0] > 0), normalization, form.R, form.delta, form.n_nodes)


# --------------------------------------------------------------------------
# interpolation on lattice nodes


class NodeInterpolant:
    """Multilinear interpolation of node values; missing corners are dropped.

    Points whose surrounding cell has no node fall back to the nearest node.
    """

    def __init__(self, form, values):
        self.form = form
        values = np.asarray(values, dtype=float)
        self.grid = np.full(form.grid_shape + values.shape[1:], np.nan)
        self.grid[form.grid_index >= 0] = values[form.grid_index[form.grid_index >= 0]]
        self.has = form.grid_index >= 0
        self.values = values
        if form.grid_periodic:
            L = np.array(form.grid_shape) * form.delta
            lo = form.grid_origin * form.delta
            self._tree = cKDTree(np.mod(form.coords - lo, L), boxsize=L)
            self._lo, self._L = lo, L
        else:
            self._tree = cKDTree(form.coords)

    def __call__(self, x):
        f = self.form
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = f.dim
        u = x / f.delta - f.grid_origin
        base = np.floor(u).astype(np.int64)
        frac = u - base
        acc = np.zeros((len(x),) + self.values.shape[1:])
        wsum = np.zeros(len(x))
        shape = np.array(f.grid_shape)
        for corner in range(2**d):
            bits = np.array([(corner >> j) & 1 for j in range(d)])
            idx = base + bits
            w = np.prod(np.where(bits, frac, 1 - frac), axis=1)
            if f.grid_periodic:
                idx = np.mod(idx, shape)
                ok = np.ones(len(x), dtype=bool)
            else:
                ok = np.all((idx >= 0) & (idx < shape), axis=1)
            idc = np.where(ok[:, None], idx, 0)
            present = ok & self.has[tuple(idc.T)]
            w = np.where(present, w, 0.0)
            vals = self.grid[tuple(idc.T)]
            vals = np.where(present.reshape((-1,) + (1,) * (vals.ndim - 1)), vals, 0.0)
            acc += w.reshape((-1,) + (1,) * (acc.ndim - 1)) * vals
            wsum += w
        good = wsum > 1e-12
        out = np.empty_like(acc)
        out[good] = acc[good] / wsum[good].reshape((-1,) + (1,) * (acc.ndim - 1))
        if (~good).any():
            q = x[~good]
            if f.grid_periodic:
                q = np.mod(q - self._lo, self._L)
            _, nn = self._tree.query(q)
            out[~good] = self.values[nn]
        return out


def node_gradients(form, chi):
    """Per-node gradient of a node function: mean of available one-sided differences."""
    n, d = form.n_nodes, form.dim
    g = np.zeros((n, d))
    cnt = np.zeros((n, d))
    diff = (chi[form.edge_b] - chi[form.edge_a]) / form.delta
    for j in range(d):
        sel = form.edge_axis == j
        np.add.at(g[:, j], form.edge_a[sel], diff[sel])
        np.add.at(g[:, j], form.edge_b[sel], diff[sel])
        np.add.at(cnt[:, j], form.edge_a[sel], 1)
        np.add.at(cnt[:, j], form.edge_b[sel], 1)
    return np.where(cnt > 0, g / np.maximum(cnt, 1), 0.0)


class CorrectorField:
    """Continuous-argument access to ``chi``, ``y`` and their gradients for all directions."""

    def __init__(self, solutions):
        sol = sorted(solutions, key=lambda s: s.k)
        self.form = sol[0].form
        chi = np.stack([s.chi_values for s in sol], axis=1)
        self._chi = NodeInterpolant(self.form, chi)
        grads = np.stack([node_gradients(self.form, s.chi_values) for s in sol], axis=1)
        self._grad = NodeInterpolant(self.form, grads.reshape(len(chi), -1))
        self.dim = self.form.dim

    def chi(self, x):
        return self._chi(x)

    def y(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x - self._chi(x)

    def grad_chi(self, x):
        """``[n, k, j] = d chi^k / d x_j``."""
        g = self._grad(x)
        return g.reshape(len(g), self.dim, self.dim)

    def grad_y(self, x):
        return np.eye(self.dim)[None] - self.grad_chi(x)


# --------------------------------------------------------------------------
# diagnostics


@dataclass
class SublinearityProfile:
    R: np.ndarray
    sup_chi: np.ndarray
    exponent: float
    exponent_upper95: float
    intercept: float
    identically_zero: bool
    epsilon: np.ndarray = None
    sup_chi_eps: np.ndarray = None

    def rows(self):
        return list(zip(self.R.tolist(), self.sup_chi.tolist()))


def fit_growth_exponent(R, values, level=0.95):
    """OLS slope of ``log values`` on ``log R`` with a one-sided upper confidence bound."""
    R = np.asarray(R, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(R) < 3:
        raise InvalidParameterError("need at least three ladder points")
    if np.all(v == 0):
        return float("nan"), float("nan"), float("nan")
    if np.any(v <= 0):
        raise InvalidParameterError("growth fit needs positive values")
    fit = stats.linregress(np.log(R), np.log(v))
    tq = stats.t.ppf(level, len(R) - 2)
    return float(fit.slope), float(fit.slope + tq * fit.stderr), float(fit.intercept)


def sublinearity_profile(decomp, graph, field_spec, R_ladder, center=None, tol=1e-8,
                         preconditioner="jacobi", epsilon_ladder=None, R_eps=None):
    """``sup |chi|`` over the Dirichlet trace of radius ``R`` for each ladder radius.

    With ``epsilon_ladder`` (and the macroscopic radius ``R_eps``) the
    rescaled corrector ``chi_eps(x) = eps chi(x / eps)`` is reported as
    ``eps * sup_{W'_{R_eps / eps}} |chi|``.
    """
    R_ladder = np.asarray(R_ladder if epsilon_ladder is None else
                          [R_eps / e for e in epsilon_ladder], dtype=float)
    if len(R_ladder) < 3:
        raise InvalidParameterError("ladder must have at least three points")
    sups = []
    for R in R_ladder:
        form = assemble(decomp, graph, field_spec, R=R, center=center)
        sols = solve_all(form, tol=tol, preconditioner=preconditioner)
        sups.append(max(float(np.max(np.abs(s.chi_values))) for s in sols))
    sups = np.array(sups)
    zero = bool(np.all(sups == 0))
    slope, upper, icpt = fit_growth_exponent(R_ladder, sups)
    prof = SublinearityProfile(R_ladder, sups, slope, upper, icpt, zero)
    if epsilon_ladder is not None:
        prof.epsilon = np.asarray(epsilon_ladder, dtype=float)
        prof.sup_chi_eps = prof.epsilon * sups
    return prof


@dataclass
class MaximalReport:
    lhs: float
    norm_alpha: float
    weight_factor: float
    rhs: float
    rhs_without_C: float
    empirical_constant: float
    norm_ratio: float
    sigma: float
    sigma_prime: float
    alpha: float


def averaged_norm(values, alpha):
    v = np.abs(np.asarray(values, dtype=float))
    if len(v) == 0:
        return 0.0
    if np.isinf(alpha):
        return float(v.max())
    return float(np.mean(v**alpha) ** (1.0 / alpha))


def maximal_inequality_check(solution, p, q, sigma, sigma_prime, alpha, theta=0.9,
                             field_spec=None, config=None, values=None,
                             C_prime=1.0, kappa_prime=1.0, gamma_prime=1.0):
    """Both sides of the maximal inequality for a node function on the trace.

    ``W(r)`` is the set of trace nodes within distance ``r`` of the trace
    centre; norms ``||u||_{W(r), alpha}`` are averages over nodes.  The
    weight factor is ``(1 v ||1/lambda||_q ||Lambda||_p) / (sigma - sigma')^2``
    with the pointwise ellipticity bounds of the field on ``W(R)``.
    """
    form = solution.form
    if form.center is None or form.R is None:
        raise InvalidParameterError("maximal inequality needs a ball trace")
    if not (0.5 <= sigma_prime < sigma <= 1.0):
        raise InvalidParameterError("need 1/2 <= sigma' < sigma <= 1")
    sobolev_exponents(p, q, theta, form.dim)
    if not alpha > 0:
        raise InvalidParameterError("alpha must be positive")
    u = solution.chi_values if values is None else np.asarray(values, dtype=float)
    r = np.linalg.norm(form.coords - form.center, axis=1)
    R = form.R
    inner = r < sigma_prime * R
    mid = r < sigma * R
    if not inner.any():
        raise DomainError("no nodes in W(sigma' R)")
    lhs = float(np.max(np.abs(u[inner])))
    na = averaged_norm(u[mid], alpha)
    if field_spec is None:
        lam_pt = Lam_pt = np.ones(form.n_nodes)
    else:
        s = fieldmod.scalar_values(field_spec, config, form.coords)
        if s is None:
            ev = np.linalg.eigvalsh(np.asarray(field_spec.params["matrix"], dtype=float))
            lam_pt = np.full(form.n_nodes, ev[0])
            Lam_pt = np.full(form.n_nodes, ev[-1])
        else:
            lam_pt = Lam_pt = s
    wf = max(1.0, averaged_norm(1.0 / lam_pt, q) * averaged_norm(Lam_pt, p)) / (sigma - sigma_prime) ** 2
    rhs_noC = max(wf**kappa_prime * na**gamma_prime, na)
    rhs = max(C_prime * wf**kappa_prime * na**gamma_prime, na)
    emp = lhs / rhs_noC if rhs_noC > 0 else (0.0 if lhs == 0 else np.inf)
    ratio = lhs / na if na > 0 else (0.0 if lhs == 0 else np.inf)
    return MaximalReport(lhs, na, wf, rhs, rhs_noC, emp, ratio, sigma, sigma_prime, alpha)
