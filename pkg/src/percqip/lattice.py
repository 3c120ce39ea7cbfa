"""Lattice approximation of the enlarged cluster and geometric diagnostics.

A site ``z`` of the lattice ``delta Z^d`` is open when the closed cube of
side ``delta`` centred at ``z`` lies inside a single enlarged ball.  Open sites
with nearest-neighbour adjacency form the graph used for connectivity
witnesses, volume and surface estimates, crossing events and the corrector
solver.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph
from scipy.special import gamma

from . import _geom
from .errors import DomainError, InvalidParameterError


def unit_ball_volume(d):
    """Lebesgue measure of the unit ball in ``R^d``."""
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def zeta_of(theta, d):
    return (1.0 - theta) / (1.0 - theta / d)


# --------------------------------------------------------------------------
# graph construction


@dataclass(eq=False)
class LatticeGraph:
    """Open sites of ``delta Z^d`` inside a box.

    Site with array index ``idx`` sits at ``delta * (m0 + idx)``.
    ``component_label`` is 0 on closed sites and ``1..n`` on open ones.
    """

    delta: float
    box: object
    m0: np.ndarray
    shape: tuple
    periodic: bool
    open_mask: np.ndarray
    component_label: np.ndarray
    sizes: np.ndarray
    largest_component: int

    @property
    def dim(self):
        return len(self.shape)

    @property
    def n_open(self):
        return int(self.open_mask.sum())

    def coords(self, idx=None):
        """Physical coordinates of sites (all sites when ``idx`` is None)."""
        if idx is None:
            axes = [self.delta * (self.m0[j] + np.arange(self.shape[j])) for j in range(self.dim)]
            return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self.delta * (self.m0 + np.asarray(idx))

    def site_index(self, x):
        """Index of the site nearest to ``x``; wraps on a torus."""
        k = np.rint(np.asarray(x, dtype=float) / self.delta).astype(np.int64) - self.m0
        if self.periodic:
            return tuple(int(v) for v in np.mod(k, self.shape))
        if np.any(k < 0) or np.any(k >= self.shape):
            raise DomainError("point lies outside the lattice box")
        return tuple(int(v) for v in k)

    def largest_mask(self):
        return self.component_label == self.largest_component

    def window(self, lo_idx, count):
        """Index arrays of a window starting at ``lo_idx`` with ``count`` sites per axis.

        Periodic graphs wrap; otherwise the window must fit in the box.
        """
        ix = []
        for j in range(self.dim):
            a = np.arange(lo_idx[j], lo_idx[j] + count[j])
            if self.periodic:
                a = np.mod(a, self.shape[j])
            elif a[0] < 0 or a[-1] >= self.shape[j]:
                raise DomainError("window exceeds the lattice box")
            ix.append(a)
        return np.ix_(*ix)


def _lattice_frame(box, delta):
    lo, hi = box.lo, box.hi
    if box.periodic:
        n = (hi - lo) / delta
        if np.any(np.abs(n - np.rint(n)) > 1e-9 * np.maximum(1.0, n)):
            raise InvalidParameterError("periodic box lengths must be integer multiples of delta")
        m0 = np.ceil(lo / delta - 1e-9).astype(np.int64)
        shape = tuple(int(v) for v in np.rint(n))
    else:
        m0 = np.ceil(lo / delta - 1e-9).astype(np.int64)
        top = np.ceil(hi / delta - 1e-9).astype(np.int64) - 1
        shape = tuple(int(v) for v in np.maximum(top - m0 + 1, 0))
    return m0, shape


def _images(points, box, lo, hi, reach):
    """Periodic copies of ``points`` that can reach the window ``[lo, hi]``."""
    if not box.periodic or len(points) == 0:
        sel = np.all((points > lo - reach) & (points < hi + reach), axis=1)
        return points[sel]
    L = box.lengths
    kmin = np.floor((lo - reach - box.hi) / L).astype(int)
    kmax = np.ceil((hi + reach - box.lo) / L).astype(int)
    base = box.wrap(points)
    out = []
    for k in np.stack(np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(kmin, kmax)], indexing="ij"), -1).reshape(-1, box.dim):
        cand = base + k * L
        sel = np.all((cand > lo - reach) & (cand < hi + reach), axis=1)
        out.append(cand[sel])
    return np.concatenate(out) if out else np.zeros((0, box.dim))


def open_mask_region(decomp, delta, lo, hi):
    """Open-site mask on the lattice points of ``delta Z^d`` inside ``[lo, hi]``.

    Works on periodic geometries by including ball images.  Returns the mask
    and the site coordinates (shape ``mask.shape + (d,)``).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m0 = np.ceil(lo / delta - 1e-9).astype(np.int64)
    m1 = np.floor(hi / delta + 1e-9).astype(np.int64)
    shape = np.maximum(m1 - m0 + 1, 0)
    rp = decomp.radii.rho_prime
    centers = np.ascontiguousarray(_images(decomp.cluster_points, decomp.box, lo, hi, rp))
    flat = np.zeros(int(np.prod(shape)), dtype=np.bool_)
    _geom.open_sites_kernel(centers, rp, float(delta), m0, shape.astype(np.int64), False, flat)
    axes = [delta * (m0[j] + np.arange(shape[j])) for j in range(len(shape))]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return flat.reshape(tuple(shape)), coords


def _structure(d):
    return ndimage.generate_binary_structure(d, 1)


def label_sites(mask, periodic=False):
    """Nearest-neighbour component labels (0 on closed sites), merged across periodic faces."""
    lab, n = ndimage.label(mask, structure=_structure(mask.ndim))
    if periodic and n > 1:
        ii, jj = [], []
        for ax in range(mask.ndim):
            a = np.take(lab, 0, axis=ax).ravel()
            b = np.take(lab, -1, axis=ax).ravel()
            both = (a > 0) & (b > 0)
            ii.append(a[both])
            jj.append(b[both])
        ii = np.concatenate(ii)
        jj = np.concatenate(jj)
        if len(ii):
            g = sparse.coo_matrix((np.ones(len(ii)), (ii, jj)), shape=(n + 1, n + 1))
            _, comp = csgraph.connected_components(g, directed=False)
            # renumber merged components in order of first label
            _, first = np.unique(comp[1:], return_index=True)
            rank = np.empty(len(first), dtype=np.int64)
            rank[np.argsort(first)] = np.arange(1, len(first) + 1)
            uniq = np.unique(comp[1:])
            remap = np.zeros(n + 1, dtype=np.int64)
            remap[1:] = rank[np.searchsorted(uniq, comp[1:])]
            lab = remap[lab]
            n = len(first)
    return lab.astype(np.int64), n


def build_delta_graph(decomp, delta, box=None):
    """Lattice graph of delta-open sites of the enlarged cluster.

    Parameters
    ----------
    decomp : ClusterDecomposition
    delta : float
        Lattice spacing; must satisfy ``0 < delta <= rho'``.
    box : Box, optional
        Region to cover, defaults to the configuration box.  Periodic boxes
        need side lengths that are integer multiples of ``delta``.
    """
    box = decomp.box if box is None else box
    delta = float(delta)
    if not delta > 0:
        raise InvalidParameterError("delta must be positive")
    if delta > decomp.radii.rho_prime:
        raise InvalidParameterError("delta must not exceed rho_prime")
    m0, shape = _lattice_frame(box, delta)
    flat = np.zeros(int(np.prod(shape)), dtype=np.bool_)
    rp = decomp.radii.rho_prime
    if box.periodic:
        centers = np.ascontiguousarray(box.wrap(decomp.cluster_points))
    else:
        centers = np.ascontiguousarray(_images(decomp.cluster_points, box, box.lo, box.hi, rp))
    _geom.open_sites_kernel(centers, rp, delta, m0, np.array(shape, dtype=np.int64), box.periodic, flat)
    mask = flat.reshape(shape)
    lab, n = label_sites(mask, box.periodic)
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    sizes[0] = 0
    largest = int(np.argmax(sizes)) if n else 0
    return LatticeGraph(delta, box, m0, tuple(shape), bool(box.periodic), mask, lab, sizes, largest)


def graph_from_mask(mask, delta, box=None, m0=None, periodic=False):
    """Lattice graph from an explicit open-site mask (used by tests and benchmarks)."""
    mask = np.asarray(mask, dtype=bool)
    lab, n = label_sites(mask, periodic)
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    sizes[0] = 0
    m0 = np.zeros(mask.ndim, dtype=np.int64) if m0 is None else np.asarray(m0, dtype=np.int64)
    return LatticeGraph(float(delta), box, m0, mask.shape, bool(periodic), mask, lab, sizes,
                        int(np.argmax(sizes)) if n else 0)


def graph_ball(graph, z, R_graph):
    """Sites within graph distance ``R_graph`` of the open site ``z`` (boolean mask)."""
    z = tuple(int(v) for v in z)
    if not graph.open_mask[z]:
        raise DomainError("graph ball centre must be an open site")
    start = int(np.ravel_multi_index(z, graph.shape))
    dist = _geom.bfs_distances(graph.open_mask.ravel(), np.array(graph.shape, dtype=np.int64),
                               graph.periodic, start, int(R_graph))
    return (dist >= 0).reshape(graph.shape)


def graph_distances(graph, z, max_dist=-1):
    z = tuple(int(v) for v in z)
    start = int(np.ravel_multi_index(z, graph.shape))
    return _geom.bfs_distances(graph.open_mask.ravel(), np.array(graph.shape, dtype=np.int64),
                               graph.periodic, start, int(max_dist)).reshape(graph.shape)


# --------------------------------------------------------------------------
# crossing events


@dataclass(frozen=True)
class CubeSpec:
    """Cube ``G(z, n delta)`` centred at the lattice index ``center``.

    The cube holds ``n`` sites per axis (``ceil(3n/2)`` for the enlarged cube
    when ``plus`` is set), starting at ``center - side // 2``.
    """

    center: tuple
    n: int
    plus: bool = False

    @property
    def sites(self):
        return int(math.ceil(1.5 * self.n)) if self.plus else int(self.n)

    def lower(self):
        return tuple(int(c) - self.sites // 2 for c in self.center)

    def enlarged(self):
        return CubeSpec(self.center, self.n, True)


def _crossing_labels(lab, n):
    """Labels (1..n) of clusters connecting opposite faces in every direction."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    ok = np.ones(n + 1, dtype=bool)
    ok[0] = False
    for ax in range(lab.ndim):
        a = np.zeros(n + 1, dtype=bool)
        b = np.zeros(n + 1, dtype=bool)
        a[np.take(lab, 0, axis=ax).ravel()] = True
        b[np.take(lab, -1, axis=ax).ravel()] = True
        ok &= a & b
    return np.flatnonzero(ok)


def crosses(sub):
    """True if the sites in ``sub`` (a box-shaped boolean array) cross in every direction."""
    lab, n = ndimage.label(sub, structure=_structure(sub.ndim))
    return len(_crossing_labels(lab, n)) > 0


def _cube_view(graph, cube, mask=None):
    mask = graph.open_mask if mask is None else mask
    return mask[graph.window(cube.lower(), (cube.sites,) * graph.dim)]


def is_crossing(graph, cluster_sites, cube):
    """Whether ``cluster_sites`` restricted to ``cube`` crosses it in all directions."""
    sites = graph.open_mask if cluster_sites is None else np.asarray(cluster_sites, dtype=bool)
    return crosses(_cube_view(graph, cube, sites))


def _diameter(idx, delta):
    """Euclidean diameter of a set of lattice indices."""
    if len(idx) < 2:
        return 0.0
    ext = idx.max(axis=0) - idx.min(axis=0)
    if np.sqrt(np.sum(ext.astype(float) ** 2)) * delta <= 0:
        return 0.0
    if len(idx) > 4000:
        # hull-free upper/lower bounds suffice for large sets: extent is within sqrt(d)
        return float(np.max(ext) * delta) if np.max(ext) > 0 else 0.0
    diff = idx[:, None, :] - idx[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff.astype(float) ** 2, axis=-1))) * delta)


def _largest_label(lab, n):
    if n == 0:
        return 0
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    sizes[0] = 0
    return int(np.argmax(sizes))


def subcube_family(n):
    """Per-axis (start, side) pairs, in sites, of the sub-cubes checked inside a cube of ``n`` sites.

    Corners step by ``max(1, n // 16)`` sites (the last start is always
    included) and sides run over ``ceil(n / 8) .. n``.
    """
    stride = max(1, n // 16)
    fam = []
    for side in range(max(1, math.ceil(n / 8)), n + 1):
        starts = list(range(0, n - side + 1, stride))
        if starts[-1] != n - side:
            starts.append(n - side)
        fam.extend((s0, side) for s0 in starts)
    return fam


def _event_R0(graph, Q, detail=False):
    if Q.n < 8:
        raise InvalidParameterError("crossing events need n >= 8")
    Qp = Q.enlarged()
    try:
        P = _cube_view(graph, Qp)
    except DomainError:
        raise DomainError("enlarged cube exceeds the lattice box") from None
    lab, n = ndimage.label(P, structure=_structure(P.ndim))
    crossing = _crossing_labels(lab, n)
    info = {"n_crossing": int(len(crossing))}
    if len(crossing) != 1:
        return (False, info, lab, 0) if detail else False
    C = int(crossing[0])
    thr = Q.n * graph.delta / 8.0
    sl = ndimage.find_objects(lab)
    for k, s in enumerate(sl, start=1):
        if k == C or s is None:
            continue
        ext = np.array([t.stop - t.start - 1 for t in s], dtype=float) * graph.delta
        if np.max(ext) > thr:
            info["big_other"] = k
            return (False, info, lab, C) if detail else False
        if np.sqrt(np.sum(ext**2)) <= thr:
            continue
        idx = np.argwhere(lab[s] == k)
        if _diameter(idx, graph.delta) > thr:
            info["big_other"] = k
            return (False, info, lab, C) if detail else False
    cmask = lab == C
    d = graph.dim
    inner = cmask[tuple(slice(Q.lower()[j] - Qp.lower()[j], Q.lower()[j] - Qp.lower()[j] + Q.sites)
                        for j in range(d))]
    n = Q.sites
    stride = max(1, n // 16)
    for side in range(max(1, math.ceil(n / 8)), n + 1):
        starts = list(range(0, n - side + 1, stride))
        if starts[-1] != n - side:
            starts.append(n - side)
        for corner in np.stack(np.meshgrid(*[starts] * d, indexing="ij"), -1).reshape(-1, d):
            if not crosses(inner[tuple(slice(c, c + side) for c in corner)]):
                info["subcube"] = (tuple(int(c) for c in corner), side)
                return (False, info, lab, C) if detail else False
    return (True, info, lab, C) if detail else True


def event_R0(graph, Q):
    """Crossing-cluster event on the enlarged cube of ``Q``.

    True when (i) the enlarged cube has exactly one cluster crossing it in all
    directions, (ii) every other cluster there has Euclidean diameter at most
    ``n delta / 8`` and (iii) that cluster crosses every cube of the lattice
    sub-cube family of ``Q``.
    """
    return _event_R0(graph, Q)


def event_R(graph, Q):
    """``event_R0`` plus crossing of ``Q`` and of its enlargement by their largest clusters."""
    if not _event_R0(graph, Q):
        return False
    for cube in (Q, Q.enlarged()):
        sub = _cube_view(graph, cube)
        lab, n = ndimage.label(sub, structure=_structure(sub.ndim))
        big = _largest_label(lab, n)
        if big == 0 or big not in set(_crossing_labels(lab, n).tolist()):
            return False
    return True


# --------------------------------------------------------------------------
# measures


def _pad_pair(O, open_mask, periodic):
    if periodic:
        return O, open_mask
    return np.pad(O, 1), np.pad(open_mask, 1)


def _faces(O, open_mask, periodic, relative):
    """Yield ``(axis, sign, face mask)`` for faces from open cells of ``O`` to cells outside ``O``.

    Non-periodic inputs are padded, so the rolled-in row is always empty.
    """
    for ax in range(O.ndim):
        for sgn in (1, -1):
            nb_in = np.roll(O, -sgn, axis=ax)
            nb_open = np.roll(open_mask, -sgn, axis=ax)
            face = O & open_mask & ~nb_in
            if relative:
                face &= nb_open
            yield ax, sgn, face


def surface_measure(graph, O, relative=False, method="faces", sigma=1.5, open_mask=None):
    """Estimated ``(d-1)``-measure of the boundary of ``O`` within the open set.

    Parameters
    ----------
    graph : LatticeGraph
        Supplies ``delta``, periodicity and the open-site mask.
    O : ndarray of bool
        Region as a set of lattice cells (same shape as the mask).
    relative : bool
        Count only faces whose outer neighbour is open (boundary of ``O``
        lying inside the enlarged cluster).
    method : {"faces", "normal_weighted"}
        ``faces`` counts exposed faces times ``delta^(d-1)``.
        ``normal_weighted`` divides each face by the l1 norm of an estimated
        unit normal, which removes the staircase bias for curved boundaries.
    """
    mask = graph.open_mask if open_mask is None else open_mask
    O = np.asarray(O, dtype=bool)
    if O.shape != mask.shape:
        raise InvalidParameterError("region and mask shapes differ")
    Op, mp = _pad_pair(O, mask, graph.periodic)
    d = O.ndim
    unit = graph.delta ** (d - 1)
    if method == "faces":
        total = 0
        for _, _, face in _faces(Op, mp, graph.periodic, relative):
            total += int(face.sum())
        return total * unit
    if method != "normal_weighted":
        raise InvalidParameterError(f"unknown surface method {method!r}")
    sm = ndimage.gaussian_filter(Op.astype(float), sigma, mode="wrap" if graph.periodic else "constant")
    grads = np.gradient(sm)
    if d == 1:
        grads = [grads]
    total = 0.0
    for ax, sgn, face in _faces(Op, mp, graph.periodic, relative):
        if not face.any():
            continue
        pos = np.nonzero(face)
        g = np.stack([gr[pos] + np.roll(gr, -sgn, axis=ax)[pos] for gr in grads], axis=1)
        l2 = np.linalg.norm(g, axis=1)
        l1 = np.abs(g).sum(axis=1)
        w = np.where(l1 > 1e-12, l2 / np.maximum(l1, 1e-300), 1.0)
        total += float(w.sum())
    return total * unit


def region_volume(graph, O, open_only=True):
    mask = graph.open_mask if open_only else np.ones(graph.shape, dtype=bool)
    return int((np.asarray(O, dtype=bool) & mask).sum()) * graph.delta ** graph.dim


def isoperimetric_ratio(graph, O, relative=True, method="normal_weighted"):
    vol = region_volume(graph, O)
    if vol <= 0:
        return np.inf
    return surface_measure(graph, O, relative=relative, method=method) / vol ** ((graph.dim - 1) / graph.dim)


# --------------------------------------------------------------------------
# scans


def _ball_window(graph, x, R, margin=2):
    """Window indices covering ``B(x, R)`` plus a margin, and site coordinates."""
    r = int(math.ceil(R / graph.delta)) + margin
    c = np.rint(np.asarray(x, dtype=float) / graph.delta).astype(np.int64) - graph.m0
    lo = c - r
    count = np.full(graph.dim, 2 * r + 1)
    if not graph.periodic:
        lo = np.maximum(lo, 0)
        hi = np.minimum(c + r, np.array(graph.shape) - 1)
        count = hi - lo + 1
    elif np.any(count > np.array(graph.shape)):
        raise DomainError("ball does not fit in the periodic box")
    win = graph.window(lo, count)
    axes = [graph.delta * (graph.m0[j] + lo[j] + np.arange(count[j])) for j in range(graph.dim)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return win, coords


def local_trace(graph, x, R):
    """Component of open sites within ``B(x, R)`` containing the site nearest to ``x``.

    Returns ``(window index, component mask in the window, window coords)``;
    the mask is empty when no open site is close to ``x``.
    """
    x = np.asarray(x, dtype=float)
    win, coords = _ball_window(graph, x, R)
    sub = graph.open_mask[win] & (np.linalg.norm(coords - x, axis=-1) < R)
    lab, n = ndimage.label(sub, structure=_structure(sub.ndim))
    if n == 0:
        return win, np.zeros_like(sub), coords
    flat = lab.reshape(-1)
    cand = np.flatnonzero(flat > 0)
    pts = coords.reshape(-1, graph.dim)[cand]
    home = flat[cand[np.argmin(np.linalg.norm(pts - x, axis=1))]]
    return win, lab == home, coords


@dataclass
class VolumeScan:
    R: np.ndarray
    min_ratio: np.ndarray
    witness: np.ndarray
    ratios: np.ndarray
    c_v_hat: float
    r_v_hat: float


def volume_regularity_scan(decomp, graph, centers, R_ladder):
    """Ratios ``|W'(x, R)| / R^d`` over centres and an increasing ``R`` ladder.

    ``C_V`` is estimated as the smallest ratio over ``R >= R_V``, where
    ``R_V`` is the smallest ladder radius from which the minimum ratio stays
    above half of its value at the largest radius.
    """
    R_ladder = np.asarray(R_ladder, dtype=float)
    if len(R_ladder) == 0 or np.any(np.diff(R_ladder) <= 0):
        raise InvalidParameterError("R_ladder must be increasing and non-empty")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if decomp is not None:
        from .cluster import contains

        if not np.all(contains(decomp, centers)):
            raise DomainError("all centres must lie in the enlarged cluster")
    d = graph.dim
    ratios = np.zeros((len(centers), len(R_ladder)))
    for i, x in enumerate(centers):
        for k, R in enumerate(R_ladder):
            _, comp, _ = local_trace(graph, x, R)
            ratios[i, k] = comp.sum() * graph.delta**d / R**d
    mins = ratios.min(axis=0)
    wit = ratios.argmin(axis=0)
    ok = mins >= 0.5 * mins[-1]
    start = len(ok) - 1
    while start > 0 and ok[start - 1]:
        start -= 1
    return VolumeScan(R_ladder, mins, wit, ratios, float(mins[start:].min()), float(R_ladder[start]))


def exposed_cap_area(rho_prime, s, d):
    """Area of the part of one sphere of radius ``rho'`` inside a second ball at centre distance ``s``."""
    if s >= 2 * rho_prime:
        return 0.0
    if d == 2:
        return 2 * rho_prime * math.acos(s / (2 * rho_prime))
    if d == 3:
        return 2 * math.pi * rho_prime * (rho_prime - s / 2)
    raise InvalidParameterError("cap area implemented for d in {2, 3}")


def default_c_H(decomp):
    """Half the smallest exposed cap area over overlapping enlarged-ball pairs."""
    rp = decomp.radii.rho_prime
    pts = decomp.cluster_points
    box = decomp.box
    if len(pts) < 2:
        return 0.5 * exposed_cap_area(rp, 0.0, decomp.dim)
    grid = _geom.CellGrid(pts, 2 * rp, box.lo, box.hi, box.periodic)
    _, _, dist, _ = _geom.find_pairs(grid, 2 * rp)
    if len(dist) == 0:
        return 0.5 * exposed_cap_area(rp, 0.0, decomp.dim)
    return 0.5 * exposed_cap_area(rp, float(dist.max()), decomp.dim)


@dataclass
class IsoperimetricResult:
    c_il_hat: float
    c_is_hat: float
    c_H: float
    witnesses: list = field(default_factory=list)
    il_witness: dict = None
    is_witness: dict = None


def _biased_animal(open_w, start, size, direction, beta, gen):
    """Lattice animal grown from ``start`` by repeatedly adding a frontier site.

    Frontier sites are drawn with weight ``exp(beta * <offset, direction>)``.
    """
    shape = open_w.shape
    d = len(shape)
    region = np.zeros(shape, dtype=bool)
    region[start] = True
    frontier = {}
    start_arr = np.array(start)

    def push(site):
        for ax in range(d):
            for sgn in (-1, 1):
                nb = list(site)
                nb[ax] += sgn
                if not 0 <= nb[ax] < shape[ax]:
                    continue
                nb = tuple(nb)
                if open_w[nb] and not region[nb] and nb not in frontier:
                    frontier[nb] = math.exp(beta * float(np.dot(np.array(nb) - start_arr, direction)))

    push(start)
    count = 1
    while count < size and frontier:
        keys = list(frontier)
        w = np.array([frontier[k] for k in keys])
        pick = keys[gen.choice(len(keys), p=w / w.sum())]
        del frontier[pick]
        region[pick] = True
        count += 1
        push(pick)
    return region


def isoperimetric_scan(decomp, graph, R, theta=0.9, center=None, c_H=None, rng=None,
                       n_centers=8, method="normal_weighted"):
    """Upper estimates of the large-set and small-set isoperimetric constants.

    Candidate regions inside ``B(center, R)``: graph balls, half-space cuts of
    the local trace, lattice animals grown by biased breadth-first growth and
    rasterised Euclidean balls and cubes.  For each the ratio of relative
    boundary measure to ``|W' cap O|^((d-1)/d)`` is computed.  ``C_IL`` is the
    minimum over candidates with ``|O| >= R^theta``; ``C_IS`` the minimum over
    candidates whose boundary measure is below ``c_H``.
    """
    if not 0 < theta < 1:
        raise InvalidParameterError("theta must lie in (0, 1)")
    if not R > 2 * graph.delta:
        raise InvalidParameterError("R must exceed two lattice spacings")
    d = graph.dim
    center = graph.box.center if center is None else np.asarray(center, dtype=float)
    gen = np.random.default_rng(0) if rng is None else (rng.generator(0x150) if hasattr(rng, "generator") else rng)
    c_H = default_c_H(decomp) if (c_H is None and decomp is not None) else c_H
    win, comp, coords = local_trace(graph, center, R)
    open_w = graph.open_mask[win]
    if not comp.any():
        raise InvalidParameterError("no open sites near the scan centre")
    inball = np.linalg.norm(coords - center, axis=-1) < R
    sub = _SubGraph(graph, open_w)
    cells = np.argwhere(comp)
    cand = []

    def add(kind, O, **meta):
        O = O & inball
        vol_all = int(O.sum()) * graph.delta**d
        vol = int((O & open_w).sum()) * graph.delta**d
        if vol <= 0:
            return
        lab, n = ndimage.label(O, structure=_structure(d))
        if n != 1:
            return
        surf = surface_measure(sub, O, relative=True, method=method)
        cand.append(dict(kind=kind, volume=vol, volume_all=vol_all, surface=surf,
                         ratio=surf / vol ** ((d - 1) / d), **meta))

    picks = cells[gen.choice(len(cells), size=min(n_centers, len(cells)), replace=False)]
    rmax = int(R / graph.delta)
    radii_g = sorted({max(1, int(v)) for v in np.geomspace(1, rmax, 8)})
    for p in picks:
        start = int(np.ravel_multi_index(tuple(p), comp.shape))
        dist = _geom.bfs_distances((open_w & inball).ravel(), np.array(comp.shape, dtype=np.int64),
                                   False, start, -1).reshape(comp.shape)
        for r in radii_g:
            add("graph_ball", (dist >= 0) & (dist <= r), r_graph=r, site=p.tolist())
    for _ in range(2 * n_centers):
        u = gen.normal(size=d)
        u /= np.linalg.norm(u)
        proj = (coords - center) @ u
        for frac in (-0.5, 0.0, 0.5):
            add("half_space", comp & (proj < frac * R), direction=u.tolist(), offset=frac * R)
    for p in picks[: max(1, n_centers // 2)]:
        u = gen.normal(size=d)
        u /= np.linalg.norm(u)
        for size in sorted({4, 16, 64, max(4, int(comp.sum() // 8))}):
            add("animal", _biased_animal(comp, tuple(p), size, u, 0.5, gen), size=size, site=p.tolist())
    for p in picks:
        x0 = coords[tuple(p)]
        for r in np.geomspace(2 * graph.delta, R, 6):
            add("euclid_ball", np.linalg.norm(coords - x0, axis=-1) < r, radius=float(r), site=p.tolist())
            add("euclid_cube", np.max(np.abs(coords - x0), axis=-1) < r, half_side=float(r), site=p.tolist())
    if not cand:
        raise InvalidParameterError("empty candidate family")
    large = [c for c in cand if c["volume_all"] >= R**theta]
    small = [c for c in cand if c_H is not None and c["surface"] < c_H]
    il = min(large, key=lambda c: c["ratio"]) if large else None
    is_ = min(small, key=lambda c: c["ratio"]) if small else None
    return IsoperimetricResult(
        c_il_hat=il["ratio"] if il else float("nan"),
        c_is_hat=is_["ratio"] if is_ else float("nan"),
        c_H=float("nan") if c_H is None else float(c_H),
        witnesses=cand,
        il_witness=il,
        is_witness=is_,
    )


class _SubGraph:
    """Minimal graph view over a non-periodic window (for surface estimates)."""

    def __init__(self, graph, open_w):
        self.delta = graph.delta
        self.periodic = False
        self.open_mask = open_w
        self.dim = graph.dim


# --------------------------------------------------------------------------
# functional inequality check


@dataclass
class SobolevReport:
    zeta: float
    rho_exp: float
    q_sharp: float
    lhs: float
    volume_factor: float
    grad_norm: float
    constant: float
    bound: float | None
    passed: bool


def sobolev_exponents(p, q, theta, d):
    zeta = zeta_of(theta, d)
    if not (p > 0 and q > 0 and 1.0 / p + 1.0 / q < 2 * zeta / d):
        raise InvalidParameterError("exponents must satisfy 1/p + 1/q < 2 zeta / d")
    rho_exp = 2 * q * d / (q * (d - 2 * zeta) + d)
    q_sharp = 2 * q / (q + 1)
    return zeta, rho_exp, q_sharp


def discrete_gradient_norm(u, region, delta, q_sharp, periodic=False):
    """``(sum_z |grad u(z)|^q# delta^d)^(1/q#)`` with forward differences inside ``region``."""
    u = np.where(region, u, 0.0)
    d = u.ndim
    sq = np.zeros_like(u, dtype=float)
    for ax in range(d):
        if periodic:
            nb = np.roll(u, -1, axis=ax)
            nb_in = np.roll(region, -1, axis=ax)
        else:
            nb = np.concatenate([np.take(u, np.arange(1, u.shape[ax]), axis=ax),
                                 np.zeros_like(np.take(u, [0], axis=ax))], axis=ax)
            nb_in = np.concatenate([np.take(region, np.arange(1, u.shape[ax]), axis=ax),
                                    np.zeros_like(np.take(region, [0], axis=ax))], axis=ax)
        diff = np.where(region | nb_in, (nb - u) / delta, 0.0)
        sq += diff**2
    g = np.sqrt(sq)
    return float((np.sum(g**q_sharp) * delta**d) ** (1.0 / q_sharp))


def sobolev_check(region, u, p, q, theta, delta, bound=None, periodic=False):
    """Empirical constant of the Sobolev-type inequality on a lattice region.

    ``u`` must vanish outside ``region`` on the killed part of the boundary;
    values outside ``region`` are treated as zero.  The reported constant is
    ``||u||_rho / (|region|^((1-zeta)/d) ||grad u||_q#)``, zero for ``u == 0``.
    """
    region = np.asarray(region, dtype=bool)
    u = np.asarray(u, dtype=float)
    d = region.ndim
    zeta, rho_exp, q_sharp = sobolev_exponents(p, q, theta, d)
    vol = region.sum() * delta**d
    lhs = float((np.sum(np.abs(np.where(region, u, 0.0)) ** rho_exp) * delta**d) ** (1 / rho_exp))
    vf = vol ** ((1 - zeta) / d)
    gn = discrete_gradient_norm(u, region, delta, q_sharp, periodic)
    const = 0.0 if lhs == 0 else (lhs / (vf * gn) if gn > 0 else np.inf)
    passed = True if bound is None else bool(const <= bound)
    return SobolevReport(zeta, rho_exp, q_sharp, lhs, vf, gn, const, bound, passed)


# --------------------------------------------------------------------------
# report


@dataclass
class GeometryReport:
    c_v_hat: float
    r_v_hat: float
    c_il_hat: float
    c_is_hat: float
    theta: float
    zeta: float
    samples: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise InvalidParameterError("theta must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)

    def to_json(self, **extra):
        out = self.to_dict()
        out.update(extra)
        return json.dumps(out, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def geometry_report(vscan, iso, theta, d):
    samples = [dict(R=float(r), ratio=float(v), witness_id=int(w), kind="volume")
               for r, v, w in zip(vscan.R, vscan.min_ratio, vscan.witness)]
    for k, c in enumerate(iso.witnesses if iso else []):
        samples.append(dict(R=None, ratio=float(c["ratio"]), witness_id=k, kind=c["kind"]))
    return GeometryReport(
        c_v_hat=vscan.c_v_hat,
        r_v_hat=vscan.r_v_hat,
        c_il_hat=iso.c_il_hat if iso else float("nan"),
        c_is_hat=iso.c_is_hat if iso else float("nan"),
        theta=float(theta),
        zeta=zeta_of(theta, d),
        samples=samples,
    )


def scan_table_csv(R, ratio, witness):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["R", "ratio", "witness_id"])
    for r, v, k in zip(R, ratio, witness):
        w.writerow([repr(float(r)), repr(float(v)), int(k)])
    return buf.getvalue()
