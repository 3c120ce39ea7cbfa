"""Shipped benchmark geometries and the studies run on them.

* ``poisson``: supercritical Boolean model on a torus (``lambda rho^2`` about
  2.8 times the critical value in d = 2).
* ``one_hole``: a covering lattice of balls with one hole punched out.
* ``free_space``: a covering lattice whose union is the whole torus.
* ``disconnected``: parallel strips, percolating in one direction only; the
  deliberate counterexample for the positive-definiteness audit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _geom
from . import corrector as cor
from . import field as fieldmod
from . import lattice
from .cluster import RadiusPair, build_clusters
from .config import Box, RngStream, explicit, sample_poisson
from .errors import InvalidParameterError

POISSON_INTENSITY = 1.0  # lambda rho^2 for rho = 1; critical value is about 0.359


@dataclass
class Benchmark:
    name: str
    decomp: object
    delta: float
    field: object
    percolating: bool
    graph: object = None

    @property
    def config(self):
        return self.decomp.config

    def lattice_graph(self):
        if self.graph is None:
            self.graph = lattice.build_delta_graph(self.decomp, self.delta)
        return self.graph

    def start(self):
        """Cluster point closest to the box centre (the conditioned origin)."""
        pts = self.decomp.cluster_points
        return pts[np.argmin(np.linalg.norm(pts - self.decomp.box.center, axis=1))].copy()


def _lattice_points(L, spacing, d):
    ax = spacing * (np.arange(int(round(L / spacing))) + 0.5)
    return np.stack(np.meshgrid(*[ax] * d, indexing="ij"), -1).reshape(-1, d)


def poisson(L=100.0, intensity=POISSON_INTENSITY, rho=1.0, rho_prime=1.25, delta=0.15625, seed=2024,
            periodic=True, d=2):
    box = Box.cube(d, L, periodic=periodic)
    cfg = sample_poisson(intensity, box, RngStream(seed))
    dec = build_clusters(cfg, RadiusPair(rho, rho_prime))
    return Benchmark("poisson", dec, delta, fieldmod.half_identity(), bool(dec.crossing))


def one_hole(L=10.0, spacing=0.5, rho=0.49, hole=2.5, delta=0.125, periodic=True):
    """Covering lattice of radius-``rho`` balls without the centres within ``hole`` of the middle.

    Radii avoid lattice distances so that no pair of balls is exactly tangent.
    """
    pts = _lattice_points(L, spacing, 2)
    pts = pts[np.linalg.norm(pts - L / 2, axis=1) >= hole]
    dec = build_clusters(explicit(pts, Box.cube(2, L, periodic=periodic)), RadiusPair(rho, rho))
    return Benchmark("one_hole", dec, delta, fieldmod.half_identity(), bool(dec.crossing))


def free_space(L=16.0, spacing=1.0, rho=1.9, delta=0.25, d=2):
    """Balls of radius 1.9 on a unit lattice: every lattice cell lies inside a single ball."""
    pts = _lattice_points(L, spacing, d)
    dec = build_clusters(explicit(pts, Box.cube(d, L, periodic=True)), RadiusPair(rho, rho))
    return Benchmark("free_space", dec, delta, fieldmod.half_identity(), bool(dec.crossing))


def disconnected(L=12.0, spacing=0.5, rho=0.49, gap=3.0, delta=0.125):
    """Horizontal strips of balls separated by gaps wider than ``2 rho'``."""
    ax = spacing * (np.arange(int(round(L / spacing))) + 0.5)
    rows = np.arange(0.5, L, gap + 1.0)
    pts = np.array([(x, y + dy) for x in ax for y in rows for dy in (0.0, 0.5)])
    dec = build_clusters(explicit(pts, Box.cube(2, L, periodic=True)), RadiusPair(rho, rho))
    return Benchmark("disconnected", dec, delta, fieldmod.half_identity(), bool(dec.crossing))


def single_ball(rho_prime=9.0, side=30.0, d=2):
    box = Box(d, (-side / 2,) * d, (side / 2,) * d)
    dec = build_clusters(explicit(np.zeros((1, d)), box), RadiusPair(rho_prime, rho_prime))
    return dec


def percolating_benchmarks(small=True):
    """The percolating geometries used by the audits (reduced Poisson box when ``small``)."""
    return [
        poisson(L=30.0, delta=0.3125) if small else poisson(),
        one_hole(),
        free_space(),
    ]


def torus_effective_matrix(bench, tol=1e-8, preconditioner="amg", normalization="per_cluster_volume"):
    """Periodic corrector on the largest lattice component of a benchmark torus."""
    g = bench.lattice_graph()
    form = cor.assemble(bench.decomp, g, bench.field, boundary="periodic")
    sols = cor.solve_all(form, tol=tol, preconditioner=preconditioner)
    return cor.effective_matrix(sols, normalization=normalization), sols, form


# --------------------------------------------------------------------------
# crossing events over many configurations


def boolean_mask(config, rho_prime, delta, box=None):
    """delta-open sites of the whole Boolean model (all balls of radius ``rho_prime``)."""
    box = config.box if box is None else box
    m0, shape = lattice._lattice_frame(box, delta)
    flat = np.zeros(int(np.prod(shape)), dtype=np.bool_)
    pts = config.points
    centers = np.ascontiguousarray(box.wrap(pts) if box.periodic else
                                   lattice._images(pts, box, box.lo, box.hi, rho_prime))
    _geom.open_sites_kernel(centers, float(rho_prime), float(delta), m0, np.array(shape, dtype=np.int64),
                            box.periodic, flat)
    return lattice.graph_from_mask(flat.reshape(shape), delta, box=box, m0=m0, periodic=box.periodic)


def crossing_failure_frequency(k_values=(8, 16, 32), n_configs=500, delta=0.8, intensity=3.0,
                               rho_prime=1.25, seed=77, d=2):
    """Empirical ``P(R(G(z, k delta))^c)`` over independent Poisson configurations.

    Each configuration lives in a box just large enough for the enlarged cube
    of the largest ``k``; the cube is centred in the box.
    """
    k_values = [int(k) for k in k_values]
    if min(k_values) < 8:
        raise InvalidParameterError("k must be at least 8")
    sites = int(np.ceil(1.5 * max(k_values))) + 4
    side = sites * delta
    fails = np.zeros(len(k_values), dtype=np.int64)
    base = RngStream(seed)
    for c in range(n_configs):
        cfg = sample_poisson(intensity, Box.cube(d, side), base.child(c))
        g = boolean_mask(cfg, rho_prime, delta)
        center = tuple(s // 2 for s in g.shape)
        for j, k in enumerate(k_values):
            if not lattice.event_R(g, lattice.CubeSpec(center, k)):
                fails[j] += 1
    return np.array(k_values), fails / n_configs, fails
