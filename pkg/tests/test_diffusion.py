import numpy as np
import pytest

from percqip import benchmarks as B
from percqip import corrector as C
from percqip import diffusion as D
from percqip import field, lattice
from percqip.cluster import RadiusPair, build_clusters, contains
from percqip.config import Box, RngStream, sample_poisson, shift
from percqip.errors import DomainError, InvalidParameterError, SimulationFailureError


def euler(dt, T, start, seed=1, **kw):
    return D.SimParams(dt, T, "reflected_euler", RngStream(seed), np.asarray(start, float), **kw)


def walk(dt, T, start, seed=1):
    return D.SimParams(dt, T, "lattice_walk", RngStream(seed), np.asarray(start, float))


def torus_form(mask, delta):
    n = mask.shape[0]
    g = lattice.graph_from_mask(mask, delta, box=Box.cube(mask.ndim, n * delta, periodic=True), periodic=True)
    return C.assemble(None, g, field.half_identity(), boundary="periodic")


@pytest.fixture(scope="module")
def hole():
    return B.one_hole()


# --------------------------------------------------------------------------
# parameters


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        euler(2.0, 1.0, [0, 0])
    with pytest.raises(InvalidParameterError):
        euler(0.0, 1.0, [0, 0])
    with pytest.raises(InvalidParameterError):
        D.SimParams(0.1, 1.0, "exact", RngStream(0), np.zeros(2))
    with pytest.raises(InvalidParameterError):
        euler(0.1, 1.0, [0, 0], record_stride=0)
    assert euler(0.3, 1.0, [0, 0]).n_steps == 4
    assert euler(0.1, 0.0, [0, 0]).n_steps == 0


# --------------------------------------------------------------------------
# reflected Euler


@pytest.mark.parametrize("free", [True, False])
def test_euler_gaussian_increments(free):
    # deep inside a huge ball no step ever reflects
    dec = None if free else B.single_ball(rho_prime=100.0, side=250.0)
    dt, N = 1e-3, 100_000
    path = D.simulate_reflected_euler(dec, euler(dt, N * dt, [0.0, 0.0], seed=7))
    assert path.reflection_log == []
    inc = np.diff(path.positions, axis=0)
    assert len(inc) == N
    sd = np.sqrt(dt)
    assert np.all(np.abs(inc.mean(axis=0)) < 4 * sd / np.sqrt(N))
    cov = np.cov(inc.T)
    assert np.allclose(np.diag(cov), dt, rtol=0.03)
    assert abs(cov[0, 1]) < 0.03 * dt


def test_euler_scalar_coefficient_scales_variance():
    dt, N = 1e-3, 50_000
    path = D.simulate_reflected_euler(None, euler(dt, N * dt, [0.0, 0.0]), field.scalar_field(2.0))
    var = np.diff(path.positions, axis=0).var(axis=0)
    assert np.allclose(var, 4.0 * dt, rtol=0.04)


@pytest.mark.slow
def test_euler_ball_equilibrium_is_uniform():
    dec = B.single_ball(rho_prime=1.0, side=4.0)
    p = euler(0.02, 6.0, [0.0, 0.0], seed=3, record_stride=50)
    batch = D.simulate_euler_batch(dec, p, 2000)
    assert np.allclose(batch.times, np.arange(7.0))
    u = np.sort(batch.positions[:, 2:, 0].ravel())
    n = len(u)
    # first-coordinate law of the uniform disc
    F = 0.5 + (u * np.sqrt(1 - u**2) + np.arcsin(u)) / np.pi
    ks = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    assert ks < 0.02


def test_zero_horizon():
    dec = B.single_ball(rho_prime=1.0, side=4.0)
    path = D.simulate_reflected_euler(dec, euler(0.1, 0.0, [0.2, 0.1]))
    assert path.times.tolist() == [0.0]
    assert path.positions.tolist() == [[0.2, 0.1]]


def test_euler_conservative_and_log(hole):
    p = euler(0.01, 20.0, hole.start(), seed=4)
    path = D.simulate_reflected_euler(hole.decomp, p)
    assert path.times[0] == 0.0 and np.array_equal(path.positions[0], hole.start())
    assert np.all(contains(hole.decomp, path.positions))
    assert len(path.reflection_log) == path.diagnostics["reflections"] > 0
    box = hole.config.box
    rho = hole.decomp.radii.rho_prime
    ts = [t for t, _, _ in path.reflection_log]
    assert np.all(np.diff(ts) >= 0)
    for t, e, b in path.reflection_log[:200]:
        r = e - hole.config.points[b]
        r -= box.lengths * np.round(r / box.lengths)
        assert np.linalg.norm(r) == pytest.approx(rho, abs=1e-9)
    batch = D.simulate_euler_batch(hole.decomp, p, 8)
    assert np.all(contains(hole.decomp, batch.positions.reshape(-1, 2)))
    # unwrapped torus coordinates
    assert np.ptp(batch.positions) > 0


def test_euler_determinism(hole):
    p = euler(0.01, 5.0, hole.start(), seed=11, record_stride=10)
    a = D.simulate_euler_batch(hole.decomp, p, 6)
    b = D.simulate_euler_batch(hole.decomp, p, 6)
    assert np.array_equal(a.positions, b.positions)
    one = D.simulate_reflected_euler(hole.decomp, p)
    assert np.array_equal(one.positions, a.positions[0])
    tail = D.simulate_euler_batch(hole.decomp, p, 3, path_offset=3)
    assert np.array_equal(tail.positions, a.positions[3:])
    other = D.simulate_euler_batch(hole.decomp, euler(0.01, 5.0, hole.start(), seed=12, record_stride=10), 6)
    assert not np.array_equal(other.positions, a.positions)


def test_euler_errors(hole):
    with pytest.raises(DomainError):
        D.simulate_reflected_euler(hole.decomp, euler(0.01, 1.0, [5.0, 5.0]))
    twophase = field.FieldSpec("two_phase_by_coverage", 0.5, 1.0, {"alpha1": 0.5, "alpha2": 1.0, "radius": 0.5})
    with pytest.raises(InvalidParameterError):
        D.simulate_reflected_euler(hole.decomp, euler(0.01, 1.0, hole.start()), twophase)
    with pytest.raises(InvalidParameterError):
        D.simulate_reflected_euler(hole.decomp, walk(0.01, 1.0, hole.start()))


def test_euler_failure_carries_diagnostics(hole):
    tight = build_clusters(hole.config, RadiusPair(0.49, 0.49), max_reflections=0)
    with pytest.raises(SimulationFailureError) as err:
        D.simulate_reflected_euler(tight, euler(1.0, 50.0, hole.start(), seed=3, max_level=0))
    diag = err.value.diagnostics
    assert diag["status"] == 1 and diag["deepest_level"] == 0


def test_path_csv(hole):
    path = D.simulate_reflected_euler(hole.decomp, euler(0.05, 2.0, hole.start(), record_stride=4))
    rows = path.to_csv().splitlines()
    assert rows[0] == "t,x_1,x_2"
    assert len(rows) == len(path.times) + 1
    assert float(rows[-1].split(",")[0]) == 2.0
    log = path.reflections_csv().splitlines()
    assert log[0] == "t,exit_1,exit_2,ball_index"
    assert len(log) == len(path.reflection_log) + 1
    assert np.array_equal(path.position_at(1.0), path.positions[5])
    with pytest.raises(InvalidParameterError):
        path.position_at(3.0)


# --------------------------------------------------------------------------
# lattice walk


def test_walk_full_lattice_covariance():
    form = torus_form(np.ones((32, 32), bool), 0.25)
    batch = D.simulate_walk_batch(form, walk(1.0, 100.0, [4.0, 4.0], seed=5), 200)
    assert batch.diagnostics["jumps"] > 100_000
    inc = np.diff(batch.positions, axis=1).reshape(-1, 2)
    cov = inc.T @ inc / len(inc)
    assert np.allclose(np.diag(cov), 1.0, rtol=0.03)
    assert abs(cov[0, 1]) < 0.03
    assert np.allclose(np.mod(batch.positions, 0.25), 0.0)


def test_walk_single_site_never_moves():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    form = torus_form(m, 1.0)
    assert form.n_nodes == 1 and len(form.edge_a) == 0
    path = D.simulate_lattice_walk(form, walk(0.5, 50.0, form.coords[0]))
    assert path.diagnostics["jumps"] == 0
    assert np.all(path.positions == form.coords[0])


def test_walk_detailed_balance():
    m = np.zeros((6, 6), bool)
    m[1:4, 1] = True
    m[3, 1:4] = True
    g = lattice.graph_from_mask(m, 1.0, box=Box.cube(2, 6.0))
    form = C.assemble(None, g, field.half_identity(), R=2.9, center=[3.0, 3.0], boundary="neumann")
    path = D.simulate_lattice_walk(form, walk(0.1, 1e5, form.coords[0], seed=1))
    occ = np.bincount(path.nodes, minlength=form.n_nodes) / len(path.nodes)
    for a, b in zip(form.edge_a, form.edge_b):
        assert occ[a] / occ[b] == pytest.approx(1.0, abs=0.03)


def test_walk_stays_on_open_sites_and_snaps():
    m = np.ones((16, 16), bool)
    m[::4, ::4] = False
    form = torus_form(m, 0.5)
    x = form.coords[3] + 0.1
    path = D.simulate_lattice_walk(form, walk(0.2, 20.0, x))
    assert np.array_equal(path.positions[0], form.coords[3])
    assert np.array_equal(np.mod(path.positions, 8.0), form.coords[path.nodes])


def test_walk_errors():
    m = np.ones((8, 8), bool)
    m[4, 4] = False
    form = torus_form(m, 1.0)
    with pytest.raises(DomainError):
        D.simulate_lattice_walk(form, walk(0.1, 1.0, [4.0, 4.0]))
    g = lattice.graph_from_mask(np.ones((12, 12), bool), 0.5, box=Box.cube(2, 6.0))
    killed = C.assemble(None, g, field.half_identity(), R=2.0, center=[3.0, 3.0])
    with pytest.raises(InvalidParameterError):
        D.simulate_lattice_walk(killed, walk(0.1, 1.0, [3.0, 3.0]))
    with pytest.raises(InvalidParameterError):
        D.simulate(None, walk(0.1, 1.0, [3.0, 3.0]))


# --------------------------------------------------------------------------
# environment process


@pytest.fixture(scope="module")
def poisson_env():
    b = B.poisson(L=30.0, delta=0.3125)
    return b


def test_environment_window_identity(poisson_env):
    cfg = poisson_env.config
    x0 = poisson_env.start()
    path = D.simulate_reflected_euler(poisson_env.decomp, euler(0.05, 40.0, x0, seed=2, record_stride=20))
    w0 = D.environment_window(cfg, path, 0.0, 3.0)
    assert np.any(np.all(w0 == 0.0, axis=1))
    box = cfg.base_box
    for t in (0.0, 13.0, 40.0):
        w = D.environment_window(cfg, path, t, 3.0)
        s = shift(cfg, path.position_at(t)).points
        s = s - box.lengths * np.round(s / box.lengths)
        s = s[np.linalg.norm(s, axis=1) < 3.0]
        s = s[np.lexsort(s.T[::-1])]
        assert np.array_equal(w, s)
    with pytest.raises(InvalidParameterError):
        D.environment_window(cfg, path, 0.0, 0.0)


def test_environment_average_stabilises(poisson_env):
    path = D.simulate_reflected_euler(poisson_env.decomp,
                                      euler(0.1, 8000.0, poisson_env.start(), seed=6, record_stride=10))
    avg = D.window_statistic_average(poisson_env.config, path, 4.0)
    n = len(avg)
    assert abs(avg[-1] - avg[n // 2]) / avg[-1] < 0.02


# --------------------------------------------------------------------------
# quadratic variation


def test_qv_free_space():
    p = euler(1e-3, 1.0, [0.0, 0.0], seed=9)
    batch = D.simulate_euler_batch(None, p, 20)
    rep = D.qv_check(batch)
    assert np.allclose(np.diag(rep.realized) / 20, 1.0, rtol=0.05)
    assert np.allclose(rep.predicted, 20 * np.eye(2))
    assert abs(rep.realized[0, 1]) < 4 * rep.realized_se[0, 1]
    assert rep.martingale_ok


def test_qv_lattice_walk_on_holed_torus():
    n, delta = 32, 0.25
    ax = delta * np.arange(n)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    form = torus_form(np.hypot(X - 4, Y - 4) >= 1.0, delta)
    sols = C.solve_all(form, tol=1e-10)
    batch = D.simulate_walk_batch(form, walk(0.01, 20.0, [0.5, 0.5], seed=3), 100)
    rep = D.qv_check(batch, sols)
    assert rep.discrepancy < 0.05
    assert rep.martingale_ok
    with pytest.raises(InvalidParameterError):
        other = torus_form(np.ones((n, n), bool), delta)
        D.qv_check(batch, C.solve_all(other))


def test_qv_needs_two_times():
    path = D.simulate_reflected_euler(None, euler(0.1, 0.0, [0.0, 0.0]))
    with pytest.raises(InvalidParameterError):
        D.qv_check(path)
    with pytest.raises(InvalidParameterError):
        D.qv_check(np.zeros((3, 2)))
