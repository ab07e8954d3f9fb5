import numpy as np
import pytest

from coupledot.density_mesh import (
    DensityMesh,
    MeshFormatError,
    check_mass_balance,
    disk_mesh,
    format_mesh,
    make_rng,
    merge_meshes,
    normalized,
    parse_mesh,
    sample_sites,
    square_mesh,
    total_mass,
)
from coupledot.geom2d import point_in_convex, polygon_moments

from conftest import ramp_square

ONE_TRI = "v 0 0 1\nv 1 0 1\nv 0 1 1\nt 0 1 2\n"


def test_parse_single_triangle():
    m = parse_mesh(ONE_TRI)
    assert len(m.triangles) == 1
    assert total_mass(m) == pytest.approx(0.5)


def test_parse_comments_and_blank_lines():
    m = parse_mesh("# header\n\n" + ONE_TRI.replace("t 0 1 2", "t 0 1 2  # tri"))
    assert total_mass(m) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "text, needle, line",
    [
        ("v 0 0 1\nv 0 1 1\nv 1 0 1\nt 0 1 2\n", "negative area", 4),
        ("v 0 0 -1\nv 1 0 1\nv 0 1 1\nt 0 1 2\n", "negative density", 1),
        ("v 0 0 1\nv 1 0 1\nv 0 1 1\nt 0 1 5\n", "out of range", 4),
        ("v 0 0 1\nv 1 0 1\nv 2 0 1\nt 0 1 2\n", "zero area", 4),
        ("v 0 0\n", "expected", 1),
        ("q 1 2 3\n", "unknown record", 1),
        ("v 0 0 x\n", "malformed", 1),
    ],
)
def test_parse_errors(text, needle, line):
    with pytest.raises(MeshFormatError) as e:
        parse_mesh(text)
    assert needle in str(e.value)
    assert e.value.line == line


def test_format_round_trip():
    m = disk_mesh((0.3, 0.1), 0.7, 16, density=2.5)
    back = parse_mesh(format_mesh(m))
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_array_equal(back.densities, m.densities)


def test_total_mass_examples():
    assert total_mass(square_mesh()) == pytest.approx(1.0, rel=1e-15)
    assert total_mass(ramp_square()) == pytest.approx(0.5, rel=1e-15)
    tri = DensityMesh([[0, 0], [1, 0], [0, 1]], [3, 0, 0], [[0, 1, 2]])
    assert total_mass(tri) == pytest.approx(0.5, rel=1e-15)


def test_total_mass_matches_polygon_moments():
    m = disk_mesh((0, 0), 1.0, 24, density=1.0)
    m = DensityMesh(m.vertices, 1 + m.vertices[:, 0] ** 2, m.triangles)
    grad, off = m.density_coefficients
    s = sum(polygon_moments(m.vertices[t], (grad[k], off[k]), (0, 0)).mass for k, t in enumerate(m.triangles))
    assert s == pytest.approx(m.total_mass, rel=1e-12)


def test_sampling_deterministic():
    m = disk_mesh((0, 0), 1.0, 16)
    a = sample_sites(m, 5, seed=42).positions
    b = sample_sites(m, 5, seed=42).positions
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_sites(m, 5, seed=43).positions)


def test_sampling_centroid():
    pos = sample_sites(square_mesh(), 100_000, seed=0).positions
    assert np.abs(pos.mean(axis=0) - 0.5).max() < 0.01


def test_sampling_area_proportional():
    v = np.array([[0, 0], [1, 0], [0, 1.98], [0, -0.02]])
    m = DensityMesh(v, np.ones(4), [[0, 1, 2], [0, 3, 1]])
    np.testing.assert_allclose(m.areas, [0.99, 0.01])
    pos = sample_sites(m, 10_000, seed=5).positions
    frac = np.mean(pos[:, 1] >= 0)
    assert 0.97 <= frac <= 1.0


def test_sampling_mass_mode_follows_density():
    m = ramp_square()
    area = sample_sites(m, 20_000, seed=1, mode="area").positions[:, 0].mean()
    mass = sample_sites(m, 20_000, seed=1, mode="mass").positions[:, 0].mean()
    assert area == pytest.approx(0.5, abs=0.01)
    # mass mode picks triangles by mass only, so this mean sits between 0.5 and 2/3
    assert mass > area + 0.05


def test_samples_inside_triangles():
    m = disk_mesh((0, 0), 1.0, 12)
    pos = sample_sites(m, 500, seed=3).positions
    tris = m.vertices[m.triangles]
    for p in pos:
        assert any(point_in_convex(t, p, eps=1e-12) for t in tris)


def test_mass_targets():
    s = sample_sites(square_mesh(density=2.0), 8, seed=0)
    assert s.target_mass == pytest.approx(0.25)


def test_mass_balance_warning(caplog):
    assert check_mass_balance(square_mesh(), square_mesh()) == 0
    with caplog.at_level("WARNING"):
        check_mass_balance(square_mesh(), square_mesh(density=2.0))
    assert caplog.records


def test_builders():
    d = disk_mesh((0.5, 0.5), 0.2, 64)
    assert d.total_mass == pytest.approx(0.5 * 64 * 0.04 * np.sin(2 * np.pi / 64), rel=1e-12)
    two = merge_meshes(d, disk_mesh((2, 0), 0.2, 64))
    assert two.total_mass == pytest.approx(2 * d.total_mass)
    assert normalized(two).total_mass == pytest.approx(1.0, rel=1e-14)
    assert two.boundary_edges.sum() == 128


def test_transformed_preserves_mass():
    d = disk_mesh((0.5, 0.5), 0.2, 32)
    t = d.transformed(3.0, np.array([0.3, 0.3]))
    assert t.total_mass == pytest.approx(d.total_mass, rel=1e-13)
    assert t.diameter == pytest.approx(3 * d.diameter)


def test_make_rng_streams_independent():
    a = make_rng(7, 0).random(4)
    b = make_rng(7, 1).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, make_rng(7, 0).random(4))
