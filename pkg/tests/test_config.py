import numpy as np
import pytest

from percqip.config import (
    Box,
    Configuration,
    RngStream,
    explicit,
    load_config,
    sample_perturbed_lattice,
    sample_poisson,
    save_config,
    shift,
)
from percqip.errors import InvalidParameterError, ParseError


def test_box_validation():
    with pytest.raises(InvalidParameterError):
        Box(2, [0, 0], [1, 0], False)
    b = Box.cube(3, 2.0, lower=-1.0)
    assert b.volume == 8.0
    assert np.allclose(b.center, 0)


def test_poisson_determinism():
    box = Box.cube(2, 10.0)
    a = sample_poisson(2.0, box, RngStream(7, 3))
    b = sample_poisson(2.0, box, RngStream(7, 3))
    c = sample_poisson(2.0, box, RngStream(7, 4))
    assert np.array_equal(a.points, b.points)
    assert not (len(a) == len(c) and np.array_equal(a.points, c.points))
    assert np.all(box.contains(a.points))


def test_poisson_count_law():
    # mean and variance/mean ratio of the count over many boxes
    box = Box.cube(2, 10.0)
    lam = 1.5
    counts = np.array([len(sample_poisson(lam, box, RngStream(11, s))) for s in range(10_000)])
    mu = lam * box.volume
    assert abs(counts.mean() - mu) < 3 * np.sqrt(mu / len(counts))
    assert abs(counts.var(ddof=1) / counts.mean() - 1) < 0.05


def test_poisson_near_zero_intensity():
    box = Box.cube(2, 1.0)
    counts = [len(sample_poisson(1e-6, box, RngStream(5, s))) for s in range(200)]
    assert sum(counts) == 0


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_poisson_rejects_bad_intensity(bad):
    with pytest.raises(InvalidParameterError):
        sample_poisson(bad, Box.cube(2, 1.0), RngStream(1))


def test_perturbed_lattice_full_and_distances():
    box = Box.cube(2, 10.0)
    c = sample_perturbed_lattice(1 - 1e-9, box, RngStream(3))
    assert len(c) == 100
    d = c.points[:, None, :] - c.points[None, :, :]
    # offsets cancel: differences are integer vectors up to rounding
    assert np.max(np.abs(d - np.round(d))) < 1e-12


def test_perturbed_lattice_keep_fraction():
    box = Box.cube(2, 1000.0)
    c = sample_perturbed_lattice(0.37, box, RngStream(9))
    assert abs(len(c) / 1e6 - 0.37) < 0.003


@pytest.mark.parametrize("p", [0.0, 1.0, 1.5])
def test_perturbed_lattice_rejects_p(p):
    with pytest.raises(InvalidParameterError):
        sample_perturbed_lattice(p, Box.cube(2, 4.0), RngStream(1))


def test_shift_identities():
    c = sample_poisson(1.0, Box.cube(2, 20.0), RngStream(1))
    z1 = np.array([0.1, -0.7])
    z2 = np.array([1.3, 2.9])
    assert shift(c, np.zeros(2)) == c
    s = shift(c, z1)
    assert np.array_equal(s.points, c.points - z1)
    assert np.all(s.box.contains(s.points))
    assert shift(shift(c, z1), z2) == shift(c, z1 + z2)
    assert np.array_equal(shift(shift(c, z1), -z1).points, c.points)


@pytest.mark.parametrize("binary", [False, True])
def test_save_load_roundtrip(tmp_path, binary):
    c = sample_poisson(0.7, Box.cube(3, 5.0, periodic=True), RngStream(99))
    path = tmp_path / "c.pcfg"
    save_config(c, path, binary=binary)
    back = load_config(path)
    assert back == c
    assert np.array_equal(back.points, c.points)


def test_empty_roundtrip(tmp_path):
    c = explicit(np.zeros((0, 2)), Box.cube(2, 1.0))
    save_config(c, tmp_path / "e.pcfg")
    assert len(load_config(tmp_path / "e.pcfg")) == 0


def test_load_rejects_nan(tmp_path):
    p = tmp_path / "bad.pcfg"
    p.write_text("pcfg v1 dim=2 periodic=0\nbox 0 0 1 1\nmeta seed=1 gen=explicit\n0.5 nan\n")
    with pytest.raises(ParseError) as ei:
        load_config(p)
    assert ei.value.line == 4


def test_load_rejects_dimension_mismatch(tmp_path):
    p = tmp_path / "bad.pcfg"
    p.write_text("pcfg v1 dim=2 periodic=0\nbox 0 0 1 1\nmeta seed=1 gen=explicit\n0.5 0.5 0.5\n")
    with pytest.raises(ParseError):
        load_config(p)


def test_load_rejects_header(tmp_path):
    p = tmp_path / "bad.pcfg"
    p.write_text("hello\n")
    with pytest.raises(ParseError) as ei:
        load_config(p)
    assert ei.value.line == 1


def test_configuration_immutable():
    c = explicit([[0.0, 0.0]], Box.cube(2, 1.0))
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0
    assert isinstance(c, Configuration)
