import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from percqip import lattice as la
from percqip.cluster import RadiusPair, build_clusters, contains
from percqip.config import Box, RngStream, explicit, sample_poisson
from percqip.errors import DomainError, InvalidParameterError


def single_ball(rho_prime=1.0, side=20.0):
    box = Box.cube(2, side, lower=-side / 2)
    return build_clusters(explicit([[0.0, 0.0]], box), RadiusPair(rho_prime, rho_prime))


@pytest.fixture(scope="module")
def poisson():
    c = sample_poisson(1.4, Box.cube(2, 16.0), RngStream(21))
    return build_clusters(c, RadiusPair(0.6, 0.8))


def test_single_ball_origin_open():
    g = la.build_delta_graph(single_ball(), 0.1)
    assert g.open_mask[g.site_index([0, 0])]
    # the ball of radius one at spacing 0.1 holds roughly pi / 0.01 open sites
    assert 250 < g.n_open < 315


def test_straddling_site_closed():
    g = la.build_delta_graph(single_ball(), 0.1)
    assert not g.open_mask[g.site_index([1.0, 0.0])]
    assert not g.open_mask[g.site_index([0.96, 0.0])]


def test_delta_validation():
    d = single_ball()
    with pytest.raises(InvalidParameterError):
        la.build_delta_graph(d, 0.0)
    with pytest.raises(InvalidParameterError):
        la.build_delta_graph(d, 2.0)


def test_open_sites_sound(poisson):
    g = la.build_delta_graph(poisson, 0.8 / 8)
    idx = np.argwhere(g.open_mask)
    gen = np.random.default_rng(0)
    pick = idx[gen.choice(len(idx), 60, replace=False)]
    for z in pick:
        probes = g.coords(z) + gen.uniform(-0.05, 0.05, (1000, 2))
        assert np.all(contains(poisson, probes))


def test_volume_converges_and_monotone(poisson):
    vols = []
    for k in (8, 16, 32):
        g = la.build_delta_graph(poisson, 0.8 / k)
        vols.append(g.n_open * g.delta**2)
    assert vols[0] <= vols[1] * 1.001 and vols[1] <= vols[2] * 1.001
    assert abs(vols[2] - vols[1]) / vols[2] < 0.05
    probes = np.random.default_rng(1).uniform(0, 16, (200_000, 2))
    mc = contains(poisson, probes).mean() * 256
    assert abs(vols[2] - mc) / mc < 0.05


def test_periodic_labels_merge_across_faces():
    mask = np.zeros((10, 10), dtype=bool)
    mask[:, 0] = mask[:, 9] = True
    lab, n = la.label_sites(mask, periodic=True)
    assert n == 1
    lab, n = la.label_sites(mask, periodic=False)
    assert n == 2


def _l1_ball_count(R, d):
    return sum(math.comb(d, k) * math.comb(R, k) * 2**k for k in range(d + 1))


@pytest.mark.parametrize("d", [2, 3])
def test_graph_ball_full_lattice(d):
    g = la.graph_from_mask(np.ones((21,) * d, dtype=bool), 1.0)
    z = (10,) * d
    assert la.graph_ball(g, z, 0).sum() == 1
    prev = 0
    for R in range(0, 9):
        c = la.graph_ball(g, z, R).sum()
        assert c == _l1_ball_count(R, d)
        assert c >= prev
        prev = c


def test_graph_ball_closed_centre():
    g = la.graph_from_mask(np.zeros((5, 5), dtype=bool), 1.0)
    with pytest.raises(DomainError):
        la.graph_ball(g, (2, 2), 1)


def _bfs_cross(sub):
    # exhaustive search: from every face-0 site, explore; record whether opposite face reached
    d = sub.ndim
    for ax in range(d):
        seen = np.zeros(sub.shape, dtype=bool)
        q = deque()
        for z in np.argwhere(sub):
            if z[ax] == 0:
                seen[tuple(z)] = True
                q.append(tuple(z))
        ok = False
        while q:
            z = q.popleft()
            if z[ax] == sub.shape[ax] - 1:
                ok = True
                break
            for j in range(d):
                for s in (-1, 1):
                    nb = list(z)
                    nb[j] += s
                    if 0 <= nb[j] < sub.shape[j] and sub[tuple(nb)] and not seen[tuple(nb)]:
                        seen[tuple(nb)] = True
                        q.append(tuple(nb))
        if not ok:
            return False
    return True


def _bfs_cross_single_cluster(sub):
    # crossing in all directions by one cluster: test each cluster separately
    from scipy import ndimage

    lab, n = ndimage.label(sub)
    return any(_bfs_cross(lab == k) for k in range(1, n + 1))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.floats(0.3, 0.9), st.integers(0, 10**6))
def test_is_crossing_matches_bfs(n, p, seed):
    mask = np.random.default_rng(seed).random((n, n)) < p
    g = la.graph_from_mask(mask, 1.0)
    cube = la.CubeSpec((n // 2, n // 2), n)
    assert la.is_crossing(g, mask, cube) == _bfs_cross_single_cluster(mask)


def test_is_crossing_examples():
    g = la.graph_from_mask(np.ones((8, 8), dtype=bool), 1.0)
    cube = la.CubeSpec((4, 4), 8)
    assert la.is_crossing(g, None, cube)
    m = np.ones((8, 8), dtype=bool)
    m[3, :] = False
    assert not la.is_crossing(g, m, cube)


def test_events_full_and_split():
    g = la.graph_from_mask(np.ones((40, 40), dtype=bool), 0.5)
    Q = la.CubeSpec((20, 20), 16)
    assert la.event_R0(g, Q) and la.event_R(g, Q)
    m = np.ones((40, 40), dtype=bool)
    m[20, :] = False
    g2 = la.graph_from_mask(m, 0.5)
    assert not la.event_R0(g2, Q)
    assert not la.event_R(g2, Q)


def test_event_errors():
    g = la.graph_from_mask(np.ones((20, 20), dtype=bool), 0.5)
    with pytest.raises(InvalidParameterError):
        la.event_R0(g, la.CubeSpec((10, 10), 4))
    with pytest.raises(DomainError):
        la.event_R0(g, la.CubeSpec((3, 3), 16))


def test_event_R_implies_R0(poisson):
    g = la.build_delta_graph(poisson, 0.4)
    for cx in range(14, 27, 3):
        for cy in range(14, 27, 3):
            Q = la.CubeSpec((cx, cy), 8)
            if la.event_R(g, Q):
                assert la.event_R0(g, Q)


def test_subcube_family_shape():
    fam = la.subcube_family(32)
    sides = {s for _, s in fam}
    assert min(sides) == 4 and max(sides) == 32
    assert all(o + s <= 32 for o, s in fam)


def test_surface_single_cell_and_block():
    for d in (2, 3):
        g = la.graph_from_mask(np.ones((6,) * d, dtype=bool), 0.25)
        O = np.zeros((6,) * d, dtype=bool)
        O[(2,) * d] = True
        assert la.surface_measure(g, O) == pytest.approx(2 * d * 0.25 ** (d - 1))
        O[(slice(2, 4),) * d] = True
        assert la.surface_measure(g, O) == pytest.approx(2 * d * 2 ** (d - 1) * 0.25 ** (d - 1))


def test_surface_flat_interface():
    # slab of thickness 64 cells: two flat faces of length side each
    side = 1.0
    n = 64
    g = la.graph_from_mask(np.ones((n, 3 * n), dtype=bool), side / n, periodic=True)
    O = np.zeros(g.shape, dtype=bool)
    O[:, n: 2 * n] = True
    for method in ("faces", "normal_weighted"):
        assert la.surface_measure(g, O, method=method) == pytest.approx(2 * side, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_surface_and_volume_additivity(seed):
    gen = np.random.default_rng(seed)
    mask = gen.random((12, 12)) < 0.8
    g = la.graph_from_mask(mask, 0.5)
    A = gen.random((12, 12)) < 0.4
    B = (gen.random((12, 12)) < 0.4) & ~A
    # faces between A and B: counted from the open side(s) only
    shared = 0
    for ax in range(2):
        for s in (1, -1):
            nbB = np.roll(np.pad(B, 1), -s, axis=ax)[1:-1, 1:-1]
            nbA = np.roll(np.pad(A, 1), -s, axis=ax)[1:-1, 1:-1]
            shared += int((A & mask & nbB).sum()) + int((B & mask & nbA).sum())
    S = lambda O: la.surface_measure(g, O) / 0.5
    assert round(S(A) + S(B)) == round(S(A | B)) + shared
    assert la.region_volume(g, A) + la.region_volume(g, B) == la.region_volume(g, A | B)


def test_ball_isoperimetric_ratio_and_invariances():
    d = single_ball(rho_prime=9.0, side=30.0)
    g = la.build_delta_graph(d, 9.0 / 32)
    C = g.coords()
    target = 2 * math.sqrt(math.pi)
    r1 = la.isoperimetric_ratio(g, np.linalg.norm(C, axis=-1) < 2.5)
    r2 = la.isoperimetric_ratio(g, np.linalg.norm(C, axis=-1) < 5.0)
    assert r1 == pytest.approx(target, rel=0.05)
    assert r2 == pytest.approx(r1, rel=0.03)
    O = np.linalg.norm(C - [0.3, -0.4], axis=-1) < 2.0
    shifted = np.roll(O, (3, -5), axis=(0, 1))
    assert la.isoperimetric_ratio(g, shifted) == pytest.approx(la.isoperimetric_ratio(g, O), rel=1e-12)


def test_volume_scan_single_ball():
    d = single_ball(rho_prime=9.0, side=30.0)
    g = la.build_delta_graph(d, 4.0 / 64)
    scan = la.volume_regularity_scan(d, g, [[0.0, 0.0], [1.0, -0.5]], [1.0, 2.0, 4.0])
    assert np.all(scan.min_ratio >= 0)
    assert scan.c_v_hat == pytest.approx(math.pi, rel=0.03)


def test_volume_scan_shift_covariant(poisson):
    from percqip.config import shift

    g = la.build_delta_graph(poisson, 0.1)
    x = poisson.cluster_points[:3]
    a = la.volume_regularity_scan(poisson, g, x, [1.0, 2.0, 3.0])
    z = np.array([0.5, -1.0])  # multiple of delta
    d2 = build_clusters(shift(poisson.config, z), poisson.radii)
    g2 = la.build_delta_graph(d2, 0.1)
    b = la.volume_regularity_scan(d2, g2, x - z, [1.0, 2.0, 3.0])
    assert np.allclose(a.ratios, b.ratios, atol=2 * 0.01 * 20)


def test_isoperimetric_scan_poisson(poisson):
    g = la.build_delta_graph(poisson, 0.1)
    res = la.isoperimetric_scan(poisson, g, 4.0, theta=0.9, center=poisson.cluster_points[0],
                                rng=RngStream(3))
    assert res.c_il_hat > 0
    assert res.c_H > 0
    assert len(res.witnesses) > 10
    with pytest.raises(InvalidParameterError):
        la.isoperimetric_scan(poisson, g, 4.0, theta=1.2)


def test_cap_area_and_c_H():
    assert la.exposed_cap_area(1.0, 0.0, 2) == pytest.approx(math.pi)
    assert la.exposed_cap_area(1.0, 0.0, 3) == pytest.approx(2 * math.pi)
    assert la.exposed_cap_area(1.0, 2.0, 2) == 0.0
    box = Box.cube(2, 20.0, lower=-10)
    d = build_clusters(explicit([[0, 0], [1.0, 0]], box), RadiusPair(0.6, 1.0))
    assert la.default_c_H(d) == pytest.approx(0.5 * 2 * math.acos(0.5))


def test_sobolev_exponents_and_errors():
    zeta, rho_exp, qs = la.sobolev_exponents(12, 12, 0.9, 2)
    assert zeta == pytest.approx(0.1 / 0.55)
    assert rho_exp == pytest.approx(48 / (12 * (2 - 2 * zeta) + 2))
    assert qs == pytest.approx(24 / 13)
    with pytest.raises(InvalidParameterError):
        la.sobolev_exponents(2, 2, 0.9, 2)


def _tent(n):
    x = (np.arange(n) + 0.5) / n
    t = 1 - np.abs(2 * x - 1)
    return np.outer(t, t)


def test_sobolev_check_tent_and_homogeneity():
    region = np.ones((32, 32), dtype=bool)
    a = la.sobolev_check(region, _tent(32), 12, 12, 0.9, 1 / 32)
    b = la.sobolev_check(np.ones((64, 64), dtype=bool), _tent(64), 12, 12, 0.9, 1 / 64)
    assert np.isfinite(a.constant) and a.constant > 0
    assert b.constant == pytest.approx(a.constant, rel=0.10)
    c = la.sobolev_check(region, 7.5 * _tent(32), 12, 12, 0.9, 1 / 32)
    assert c.constant == pytest.approx(a.constant, rel=1e-12)
    z = la.sobolev_check(region, np.zeros((32, 32)), 12, 12, 0.9, 1 / 32, bound=1.0)
    assert z.constant == 0 and z.passed


def test_geometry_report_json_and_csv():
    vs = la.VolumeScan(np.array([1.0, 2.0]), np.array([3.0, 3.1]), np.array([0, 1]),
                       np.zeros((2, 2)), 3.0, 1.0)
    rep = la.geometry_report(vs, None, 0.9, 2)
    import json

    out = json.loads(rep.to_json())
    for k in ("c_v_hat", "r_v_hat", "c_il_hat", "c_is_hat", "theta", "zeta", "samples"):
        assert k in out
    assert out["zeta"] == pytest.approx(0.1 / 0.55)
    csv_text = la.scan_table_csv(vs.R, vs.min_ratio, vs.witness)
    assert csv_text.splitlines()[0] == "R,ratio,witness_id"
