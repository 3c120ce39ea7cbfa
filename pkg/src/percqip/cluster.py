"""Boolean model clusters, the enlarged cluster and geometric queries on it.

``build_clusters`` links balls of radius ``rho`` whose centres are closer than
``2 rho`` and picks a percolation proxy component.  The enlarged cluster is
the union of radius-``rho_prime`` balls around the points of that component;
membership, depth and reflection queries all refer to it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import _geom
from .errors import DegenerateConfigurationError, DomainError, InvalidParameterError, StepRejectedError

TIE_TOL = 1e-12
JITTER = 1e-9


@dataclass(frozen=True)
class RadiusPair:
    rho: float
    rho_prime: float

    def __post_init__(self):
        if not (self.rho > 0 and np.isfinite(self.rho)):
            raise InvalidParameterError("rho must be positive")
        if not (self.rho_prime >= self.rho):
            raise InvalidParameterError("rho_prime must be at least rho")


@dataclass(frozen=True)
class LocalRegion:
    center: np.ndarray
    radius_R: float
    member_balls: np.ndarray
    site_count: int
    delta: float

    @property
    def volume(self):
        return self.site_count * self.delta ** len(self.center)


@dataclass(eq=False)
class ClusterDecomposition:
    """Connectivity of the Boolean model and the selected percolating component.

    ``points`` may differ from ``config.points`` by the tie-breaking jitter
    recorded in ``jittered``.
    """

    config: object
    radii: RadiusPair
    points: np.ndarray
    component_label: np.ndarray
    selected: int | None
    crossing: bool
    index_set: np.ndarray
    wraps: dict = field(default_factory=dict)
    jittered: dict = field(default_factory=dict)
    tol_geom: float = 0.0
    max_reflections: int = 64
    _wgrid: object = field(default=None, repr=False)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def box(self):
        return self.config.box

    @property
    def n_components(self):
        return int(self.component_label.max()) + 1 if len(self.component_label) else 0

    @property
    def cluster_points(self):
        return self.points[self.index_set]

    @property
    def wgrid(self):
        if self._wgrid is None:
            box = self.config.box
            self._wgrid = _geom.CellGrid(
                self.cluster_points, self.radii.rho_prime, box.lo, box.hi, box.periodic
            )
        return self._wgrid

    def ball_index(self, sorted_k):
        """Map a grid-sorted ball index back to a point index of the configuration."""
        return int(self.index_set[self.wgrid.order[sorted_k]])


def _brute_labels(points, rho):
    """Reference labels by all-pairs union-find (no spatial index)."""
    n = len(points)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(points[i] - points[j]) < 2 * rho:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = [find(i) for i in range(n)]
    remap = {}
    return np.array([remap.setdefault(r, len(remap)) for r in roots], dtype=np.int64)


def _canonical(labels):
    """Relabel components in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(len(first), dtype=np.int64)
    remap[order] = np.arange(len(first))
    return remap[np.searchsorted(np.unique(labels), labels)]


def _jitter_vector(seed, index, dim):
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(0xDE17A, int(index)))))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)


def _wrap_vectors(n, labels, i, j, k, dim):
    """Per-component winding vectors on a torus from the overlap graph.

    Each node gets an integer image offset along a spanning forest; a non-tree
    edge whose offsets disagree closes a loop around the torus.
    """
    img = np.zeros((n, dim), dtype=np.int64)
    if len(i) == 0:
        return {}
    adj = sparse.coo_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    # edge (a -> b) carries shift k meaning b + kL is the copy adjacent to a
    lookup = {}
    for a, b, kk in zip(i, j, k):
        lookup[(a, b)] = kk
        lookup[(b, a)] = -kk
    seen = np.zeros(n, dtype=bool)
    for root in range(n):
        if seen[root]:
            continue
        order, pred = csgraph.breadth_first_order(adj, root, directed=False, return_predecessors=True)
        seen[order] = True
        for node in order[1:]:
            p = pred[node]
            img[node] = img[p] + lookup[(p, node)]
    wraps = {}
    w = img[i] + k - img[j]
    bad = np.any(w != 0, axis=1)
    for lab, vec in zip(labels[i[bad]], w[bad]):
        acc = wraps.setdefault(int(lab), np.zeros(dim, dtype=bool))
        acc |= vec != 0
    return wraps


def _union_volume_estimate(points, rho, cells=4):
    """Rasterised area/volume of a union of balls (side rho/cells)."""
    h = rho / cells
    keys = set()
    dim = points.shape[1]
    r = int(np.ceil(rho / h))
    offs = np.stack(np.meshgrid(*[np.arange(-r, r + 1)] * dim, indexing="ij"), -1).reshape(-1, dim)
    offs = offs[np.linalg.norm(offs * h, axis=1) < rho]
    base = np.floor(points / h).astype(np.int64)
    for b in base:
        keys.update(map(tuple, b + offs))
    return len(keys) * h**dim


def select_percolating(decomp, box=None):
    """Return ``(component id or None, crossing flag)`` for the percolation proxy.

    Non-periodic boxes: a component crosses when its ball union reaches all
    ``2d`` faces.  Periodic boxes: a component crosses when it winds around
    the torus in every direction.  Without a crossing component the largest
    one by estimated union volume is returned with ``crossing=False``.
    """
    box = decomp.config.box if box is None else box
    labels = decomp.component_label
    if len(labels) == 0:
        return None, False
    rho = decomp.radii.rho
    pts = decomp.points
    ncomp = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=ncomp)
    if box.periodic:
        crossing = [c for c, w in decomp.wraps.items() if np.all(w)]
    else:
        lo_hit = pts - rho < box.lo
        hi_hit = pts + rho > box.hi
        lo_any = np.zeros((ncomp, box.dim), dtype=bool)
        hi_any = np.zeros((ncomp, box.dim), dtype=bool)
        np.logical_or.at(lo_any, labels, lo_hit)
        np.logical_or.at(hi_any, labels, hi_hit)
        crossing = list(np.flatnonzero(np.all(lo_any & hi_any, axis=1)))
    if crossing:
        return int(max(crossing, key=lambda c: (sizes[c], -c))), True
    top = np.argsort(-sizes, kind="stable")[:5]
    vols = [_union_volume_estimate(pts[labels == c], rho) for c in top]
    return int(top[int(np.argmax(vols))]), False


def build_clusters(config, radii, tol_geom=None, max_reflections=64, max_jitter_rounds=3):
    """Connected components of the Boolean model with balls of radius ``rho``.

    Two balls overlap when their centres are closer than ``2 rho`` (strict).
    Pairs within ``1e-12`` of that threshold are separated by moving the
    later-indexed point by a seed-derived ``1e-9 rho`` jitter.
    """
    if len(config) == 0:
        raise InvalidParameterError("configuration is empty")
    box = config.box
    rho = radii.rho
    pts = np.array(config.points, dtype=float)
    jittered = {}
    cutoff = 2 * rho + TIE_TOL
    for _ in range(max_jitter_rounds + 1):
        grid = _geom.CellGrid(pts, cutoff, box.lo, box.hi, box.periodic)
        i, j, dist, k = _geom.find_pairs(grid, cutoff)
        ties = np.abs(dist - 2 * rho) < TIE_TOL
        if not np.any(ties):
            break
        for a, b in zip(i[ties], j[ties]):
            later = int(max(a, b))
            if later in jittered:
                continue
            v = JITTER * rho * _jitter_vector(config.seed, later, box.dim)
            pts[later] += v
            jittered[later] = v
    else:
        a, b = int(i[ties][0]), int(j[ties][0])
        raise DegenerateConfigurationError(
            f"points {a} and {b} remain at distance 2*rho after jitter", pair=(a, b)
        )
    keep = dist < 2 * rho
    i, j, k = i[keep], j[keep], k[keep]
    n = len(pts)
    adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    _, raw = csgraph.connected_components(adj, directed=False)
    labels = _canonical(raw)
    wraps = _wrap_vectors(n, labels, i, j, k, box.dim) if box.periodic else {}
    decomp = ClusterDecomposition(
        config=config,
        radii=radii,
        points=pts,
        component_label=labels,
        selected=None,
        crossing=False,
        index_set=np.zeros(0, dtype=np.int64),
        wraps=wraps,
        jittered=jittered,
        tol_geom=1e-10 * radii.rho_prime if tol_geom is None else float(tol_geom),
        max_reflections=int(max_reflections),
    )
    sel, crossing = select_percolating(decomp, box)
    decomp.selected = sel
    decomp.crossing = crossing
    decomp.index_set = np.flatnonzero(labels == sel).astype(np.int64)
    return decomp


def _margins(decomp, p):
    p = np.ascontiguousarray(np.atleast_2d(np.asarray(p, dtype=float)))
    if p.shape[1] != decomp.dim:
        raise InvalidParameterError("point dimension does not match the configuration")
    if len(decomp.index_set) == 0:
        return np.full(len(p), -np.inf), np.full(len(p), -1)
    return _geom.max_margin_many(p, *decomp.wgrid.args, decomp.radii.rho_prime)


def contains(decomp, p):
    """Membership of ``p`` (one point or an array of points) in the enlarged cluster."""
    m, _ = _margins(decomp, p)
    inside = m > 0
    return bool(inside[0]) if np.ndim(p) == 1 else inside


def depth(decomp, p):
    """``max_i (rho' - |p - x_i|)`` over cluster balls: a safe inner radius at ``p``."""
    m, _ = _margins(decomp, p)
    if np.any(m <= 0):
        raise DomainError("point lies outside the enlarged cluster")
    return float(m[0]) if np.ndim(p) == 1 else m


def reflect_segment(decomp, p, q):
    """Move from ``p`` towards ``q`` reflecting specularly off the cluster boundary.

    Returns the end point and a list of ``(exit_point, ball_index)`` events.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q - p)):
        raise InvalidParameterError("proposal must be finite")
    if not contains(decomp, p):
        raise DomainError("segment start lies outside the enlarged cluster")
    cap = decomp.max_reflections
    ev_pts = np.empty((cap + 1, decomp.dim))
    ev_idx = np.empty(cap + 1, dtype=np.int64)
    status, end, nev = _geom.reflect_segment(
        p, q, *decomp.wgrid.args, decomp.radii.rho_prime, decomp.tol_geom, cap, ev_pts, ev_idx
    )
    if status == _geom.STATUS_REJECTED:
        raise StepRejectedError(f"more than {cap} reflections; shrink the time step")
    if status == _geom.STATUS_OUTSIDE:
        raise DomainError("segment start lies outside the enlarged cluster")
    events = [(ev_pts[e].copy(), decomp.ball_index(ev_idx[e])) for e in range(nev)]
    return np.array(end), events


def local_component(decomp, x, R, delta_geom=None):
    """Connected component of (enlarged cluster) ∩ B(x, R) containing ``x``.

    Connectivity is certified on a lattice of spacing ``delta_geom``
    (default ``rho'/8``) restricted to the bounding box of the ball.
    """
    from .lattice import open_mask_region  # local import: lattice depends on this module

    x = np.asarray(x, dtype=float)
    if not contains(decomp, x):
        raise DomainError("x lies outside the enlarged cluster")
    if not R > 0:
        raise InvalidParameterError("R must be positive")
    rp = decomp.radii.rho_prime
    delta = rp / 8 if delta_geom is None else float(delta_geom)
    mask, coords = open_mask_region(decomp, delta, x - R, x + R)
    inball = np.linalg.norm(coords - x, axis=-1) < R
    from scipy import ndimage

    lab, _ = ndimage.label(mask & inball)
    home = _home_label(lab, coords, x)
    comp = lab == home if home > 0 else np.zeros_like(mask)
    sites = coords[comp]
    members = set()
    if len(sites):
        _, arg = _margins(decomp, sites)
        members.update(decomp.wgrid.order[arg[arg >= 0]].tolist())
    _, own = _margins(decomp, x)
    if own[0] >= 0:
        members.add(int(decomp.wgrid.order[own[0]]))
    member_balls = np.array(sorted(int(decomp.index_set[m]) for m in members), dtype=np.int64)
    return LocalRegion(center=x, radius_R=float(R), member_balls=member_balls,
                       site_count=int(comp.sum()), delta=delta)


def _home_label(lab, coords, x):
    """Label of the lattice site nearest to ``x`` among labelled sites."""
    flat = lab.reshape(-1)
    cand = np.flatnonzero(flat > 0)
    if len(cand) == 0:
        return 0
    pts = coords.reshape(-1, coords.shape[-1])[cand]
    return int(flat[cand[np.argmin(np.linalg.norm(pts - x, axis=1))]])


def recenter_at_cluster_point(decomp, rng):
    """Shift the configuration so that a uniformly chosen cluster point sits at 0.

    Returns ``(shifted configuration, chosen point index)``.  This is one of two
    finite-volume stand-ins for conditioning on the origin lying in the
    enlarged cluster; see also :func:`condition_origin_by_rejection`.
    """
    from .config import shift

    if len(decomp.index_set) == 0:
        raise DomainError("no selected cluster to recenter on")
    k = int(decomp.index_set[rng.generator(0xCE17).integers(len(decomp.index_set))])
    return shift(decomp.config, decomp.config.points[k]), k


def condition_origin_by_rejection(sampler, radii, rng, max_tries=1000, require_crossing=True):
    """Draw configurations from ``sampler(stream)`` until the origin lies in the enlarged cluster.

    ``sampler`` receives a fresh child stream on every attempt.  Returns
    ``(configuration, decomposition, attempts)``.
    """
    for attempt in range(int(max_tries)):
        config = sampler(rng.child(rng.stream_id * 1_000_003 + attempt + 1))
        if len(config) == 0:
            continue
        decomp = build_clusters(config, radii)
        if require_crossing and not decomp.crossing:
            continue
        if contains(decomp, np.zeros(config.dim)):
            return config, decomp, attempt + 1
    raise DomainError(f"origin not covered after {max_tries} attempts")
