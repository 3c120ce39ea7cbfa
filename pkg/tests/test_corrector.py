import numpy as np
import pytest

from percqip import corrector as C
from percqip import field, lattice
from percqip.cluster import RadiusPair, build_clusters
from percqip.config import Box, RngStream, sample_poisson
from percqip.errors import DomainError, InvalidParameterError, NonConvergenceError


def full_graph(n=40, delta=0.25, periodic=True, d=2):
    box = Box.cube(d, n * delta, periodic=periodic)
    return lattice.graph_from_mask(np.ones((n,) * d, bool), delta, box=box, periodic=periodic)


def holed_torus(n=40, delta=0.25, hole=1.0):
    """Torus cell with one disc hole of radius ``hole`` in the middle."""
    L = n * delta
    ax = delta * np.arange(n)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    m = np.hypot(X - L / 2, Y - L / 2) >= hole
    return lattice.graph_from_mask(m, delta, box=Box.cube(2, L, periodic=True), periodic=True)


def test_full_cube_conductances_and_energy():
    g = full_graph(20, 0.5, periodic=False)
    f = C.assemble(None, g, field.half_identity(), R=4.0, center=[5.0, 5.0])
    assert np.all(f.conductance == 0.5)
    assert f.energy(np.full(f.n_nodes, 3.7)) == 0.0
    nk = np.sum(f.edge_axis == 0)
    assert f.energy(f.coords[:, 0]) == pytest.approx(0.5 * 0.5**2 * nk, rel=1e-13)
    assert f.coordinate_energy(0) == pytest.approx(f.energy(f.coords[:, 0]), rel=1e-13)
    g3 = full_graph(8, 0.5, periodic=False, d=3)
    f3 = C.assemble(None, g3, field.half_identity(), R=1.6, center=[2.0, 2.0, 2.0])
    assert np.allclose(f3.conductance, 0.5 * 0.5)


def test_full_cube_coordinates_exact():
    g = full_graph(30, 0.25, periodic=False)
    for spec in (field.half_identity(), field.scalar_field(3.0),
                 field.FieldSpec("constant", 1.0, 3.0, {"matrix": [[2.0, 0.5], [0.5, 2.0]]})):
        f = C.assemble(None, g, spec, R=3.5, center=[3.75, 3.75])
        for s in C.solve_all(f):
            assert np.max(np.abs(s.chi_values)) < 1e-8
            assert np.array_equal(s.y_values + s.chi_values, f.coords[:, s.k])


@pytest.mark.parametrize("c", [0.5, 0.3, 2.0])
def test_free_space_effective_matrix(c):
    g = full_graph(32, 0.25)
    f = C.assemble(None, g, field.scalar_field(c), boundary="periodic")
    em = C.effective_matrix(C.solve_all(f))
    assert np.allclose(em.D, 2 * c * np.eye(2), atol=1e-8)
    assert em.positive_definite
    # Dirichlet ball: exact with the per-direction edge normalisation
    gd = full_graph(40, 0.25, periodic=False)
    fd = C.assemble(None, gd, field.scalar_field(c), R=4.5, center=[5.0, 5.0])
    em2 = C.effective_matrix(C.solve_all(fd), normalization="per_edge_direction")
    assert np.allclose(em2.D, 2 * c * np.eye(2), atol=1e-10)


def test_effective_matrix_errors():
    g = full_graph(16, 0.25)
    f = C.assemble(None, g, field.half_identity(), boundary="periodic")
    f2 = C.assemble(None, g, field.half_identity(), boundary="periodic")
    s = C.solve_all(f)
    with pytest.raises(InvalidParameterError):
        C.effective_matrix([s[0], C.solve_harmonic_coordinate(f2, 1)])
    with pytest.raises(InvalidParameterError):
        C.effective_matrix([s[0], s[0]])
    with pytest.raises(InvalidParameterError):
        C.effective_matrix(s, normalization="bogus")


def test_holed_torus_properties():
    g = holed_torus()
    f = C.assemble(None, g, field.half_identity(), boundary="periodic")
    sols = C.solve_all(f)
    em = C.effective_matrix(sols)
    D = em.D
    assert abs(D[0, 1] - D[1, 0]) <= 1e-12 * np.linalg.norm(D)
    assert 0 < em.eigenvalues[0] and em.eigenvalues[-1] <= 2 * 0.5 + 1e-12
    # hole reduces the diffusivity below the free value
    assert em.eigenvalues[-1] < 1.0
    # four-fold symmetry of the cell
    assert D[0, 0] == pytest.approx(D[1, 1], rel=1e-6)
    for s in sols:
        assert s.residual_norm <= 1e-8
        res = s.harmonicity_residual()
        deg = f.degree()
        assert np.all(np.abs(res) <= 1e-8 * deg * f.conductance.max() * f.delta * 10)
        assert abs(s.chi_values.mean()) < 1e-12


def test_periodic_hole_matches_fine_reference():
    em = C.effective_matrix(C.solve_all(C.assemble(None, holed_torus(40, 0.25), field.half_identity(),
                                                   boundary="periodic")))
    ref = C.effective_matrix(C.solve_all(C.assemble(None, holed_torus(160, 0.0625), field.half_identity(),
                                                    boundary="periodic"), preconditioner="amg"))
    assert np.linalg.norm(em.D - ref.D) <= 0.05 * np.linalg.norm(ref.D)


def test_amg_and_jacobi_agree():
    f = C.assemble(None, holed_torus(), field.half_identity(), boundary="periodic")
    a = C.solve_harmonic_coordinate(f, 0, tol=1e-10)
    b = C.solve_harmonic_coordinate(f, 0, tol=1e-10, preconditioner="amg")
    assert np.max(np.abs(a.chi_values - b.chi_values)) < 1e-7


def test_nonconvergence_carries_history():
    f = C.assemble(None, holed_torus(), field.half_identity(), boundary="periodic")
    with pytest.raises(NonConvergenceError) as ei:
        C.solve_harmonic_coordinate(f, 0, max_iter=3)
    assert len(ei.value.residual_history) == 4


def test_gradient_consistency():
    f = C.assemble(None, holed_torus(), field.half_identity(), boundary="periodic")
    s = C.solve_harmonic_coordinate(f, 0)
    g = s.edge_gradient_chi()
    assert np.array_equal(g * f.delta, s.chi_values[f.edge_b] - s.chi_values[f.edge_a])
    gy = s.edge_gradient_y()
    assert np.allclose(gy + g, (f.edge_axis == 0).astype(float), atol=1e-15)


def test_interpolants_hit_nodes_and_wrap():
    f = C.assemble(None, holed_torus(), field.half_identity(), boundary="periodic")
    sols = C.solve_all(f)
    cf = C.CorrectorField(sols)
    pts = f.coords[::37]
    chi = np.stack([s.chi_values for s in sols], 1)[::37]
    assert np.allclose(cf.chi(pts), chi, atol=1e-14)
    assert np.allclose(cf.chi(pts + 10.0), chi, atol=1e-12)
    assert np.allclose(cf.y(pts), pts - chi, atol=1e-14)
    gy = cf.grad_y(pts)
    assert gy.shape == (len(pts), 2, 2)


def test_csv_export_round_trip():
    g = full_graph(12, 0.5, periodic=False)
    f = C.assemble(None, g, field.half_identity(), R=2.5, center=[3.0, 3.0])
    s = C.solve_harmonic_coordinate(f, 1)
    lines = s.to_csv().splitlines()
    assert lines[0] == "z_1,z_2,y,chi"
    assert len(lines) == f.n_nodes + 1
    row = np.array(lines[1].split(","), float)
    assert np.array_equal(row, np.r_[f.coords[0], s.y_values[0], s.chi_values[0]])
    em = C.effective_matrix(C.solve_all(f))
    assert '"positive_definite": true' in em.to_json()


def test_assemble_errors():
    g = full_graph(20, 0.25, periodic=False)
    with pytest.raises(DomainError):
        C.assemble(None, g, field.half_identity(), R=4.0, center=[2.5, 2.5])
    with pytest.raises(InvalidParameterError):
        C.assemble(None, g, field.half_identity(), boundary="periodic")
    with pytest.raises(InvalidParameterError):
        C.assemble(None, g, field.half_identity(), boundary="robin")
    m = np.zeros((20, 20), bool)
    g0 = lattice.graph_from_mask(m, 0.25, box=Box.cube(2, 5.0))
    with pytest.raises(DomainError):
        C.assemble(None, g0, field.half_identity(), R=2.0, center=[2.5, 2.5])


def test_sublinearity_free_space_and_validation():
    g = full_graph(64, 0.25, periodic=False)
    prof = C.sublinearity_profile(None, g, field.half_identity(), [2.0, 3.0, 4.0, 6.0], center=[8.0, 8.0])
    assert prof.identically_zero and np.all(prof.sup_chi == 0)
    with pytest.raises(InvalidParameterError):
        C.sublinearity_profile(None, g, field.half_identity(), [2.0, 3.0], center=[8.0, 8.0])
    eps = C.sublinearity_profile(None, g, field.half_identity(), None, center=[8.0, 8.0],
                                 epsilon_ladder=[1.0, 0.5, 0.25], R_eps=1.5)
    assert np.allclose(eps.R, [1.5, 3.0, 6.0]) and np.all(eps.sup_chi_eps == 0)


def test_growth_fit():
    R = np.array([1.0, 2.0, 4.0, 8.0])
    s, up, _ = C.fit_growth_exponent(R, 3 * R**0.4)
    assert s == pytest.approx(0.4) and up == pytest.approx(0.4)
    with pytest.raises(InvalidParameterError):
        C.fit_growth_exponent(R, [1, 2, 0, 3])


@pytest.fixture(scope="module")
def poisson_trace():
    cfg = sample_poisson(0.6366, Box.cube(2, 30.0), RngStream(5))
    dec = build_clusters(cfg, RadiusPair(1.0, 1.25))
    g = lattice.build_delta_graph(dec, 0.3125)
    c = dec.cluster_points[np.argmin(np.linalg.norm(dec.cluster_points - 15.0, axis=1))]
    f = C.assemble(dec, g, field.half_identity(), R=8.0, center=c)
    return dec, g, f


def test_poisson_sublinearity_profile(poisson_trace):
    dec, g, f = poisson_trace
    prof = C.sublinearity_profile(dec, g, field.half_identity(), [3.0, 5.0, 8.0, 12.0], center=f.center)
    assert np.all(prof.sup_chi >= 0) and not prof.identically_zero
    assert np.isfinite(prof.exponent)


def test_maximal_inequality(poisson_trace):
    dec, g, f = poisson_trace
    s = C.solve_harmonic_coordinate(f, 0)
    r = C.maximal_inequality_check(s, 12, 12, 0.9, 0.7, 2.0, theta=0.9, field_spec=field.half_identity())
    assert r.lhs >= 0 and r.weight_factor == pytest.approx(2.0**1 * 0.5 / 0.04)
    const = C.maximal_inequality_check(s, 12, 12, 0.9, 0.7, 2.0, values=np.full(f.n_nodes, -2.5))
    assert const.lhs == 2.5 and const.norm_alpha == pytest.approx(2.5) and const.norm_ratio == pytest.approx(1.0)
    big = 50.0 * s.chi_values
    a = C.maximal_inequality_check(s, 12, 12, 0.9, 0.7, 2.0, values=big, gamma_prime=1.0)
    b = C.maximal_inequality_check(s, 12, 12, 0.9, 0.7, 2.0, values=7 * big, gamma_prime=1.0)
    assert a.empirical_constant == pytest.approx(b.empirical_constant, rel=1e-12)
    with pytest.raises(InvalidParameterError):
        C.maximal_inequality_check(s, 12, 12, 0.7, 0.9, 2.0)
    with pytest.raises(InvalidParameterError):
        C.maximal_inequality_check(s, 1, 1, 0.9, 0.7, 2.0)


@pytest.mark.slow
def test_maximal_constant_stable_across_geometries():
    consts = []
    for seed in range(20):
        cfg = sample_poisson(0.6366, Box.cube(2, 24.0), RngStream(100 + seed))
        dec = build_clusters(cfg, RadiusPair(1.0, 1.25))
        g = lattice.build_delta_graph(dec, 0.3125)
        c = dec.cluster_points[np.argmin(np.linalg.norm(dec.cluster_points - 12.0, axis=1))]
        f = C.assemble(dec, g, field.half_identity(), R=7.0, center=c)
        s = C.solve_harmonic_coordinate(f, 0)
        consts.append(C.maximal_inequality_check(s, 12, 12, 0.9, 0.7, 2.0).empirical_constant)
    consts = np.array(consts)
    assert np.all(consts > 0) and consts.max() / consts.min() < 10
