import numpy as np
import pytest

from coupledot.density_mesh import disk_mesh, square_mesh
from coupledot.symmetrizer import (
    CouplingError,
    diagnostics,
    init_coupling,
    iterate,
    overlap_suspects,
    run,
    state_from_sites,
)
from coupledot.power_diagram import build_rpd

TWO = np.array([[0.25, 0.5], [0.75, 0.5]])


def inside_square(p, x0=0.0, size=1.0):
    return np.all((p >= x0) & (p <= x0 + size))


def test_init_containment_and_determinism():
    mu = square_mesh()
    nu = square_mesh(2.0, 0.0)
    a = init_coupling(mu, nu, 8, seed=7)
    b = init_coupling(mu, nu, 8, seed=7)
    assert inside_square(a.x[:, 0], 2.0) and inside_square(a.y)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.iteration == 0 and not a.phi.any() and not a.psi.any()


def test_init_single_site():
    s = init_coupling(square_mesh(), square_mesh(), 1, seed=0)
    assert s.x.shape == (1, 2) and s.phi.tolist() == [0.0]
    with pytest.raises(ValueError):
        init_coupling(square_mesh(), square_mesh(), 0)


def test_square_fixed_point():
    sq = square_mesh()
    s0 = state_from_sites(sq, sq, TWO, TWO)
    s1 = iterate(s0)
    np.testing.assert_allclose(s1.x, TWO, atol=1e-9)
    np.testing.assert_allclose(s1.y, TWO, atol=1e-9)
    d = diagnostics(s1)
    assert d.barycenter_residual_x <= 1e-9 and d.barycenter_residual_y <= 1e-9
    assert s1.iteration == 1


def test_single_site_iteration():
    mu = disk_mesh((0.2, 0.1), 0.5, 16, density=lambda p: 1 + p[:, 0] ** 2)
    nu = square_mesh(3, 3, 1.0, density=lambda p: 0.5 + p[:, 1])
    nu = nu.__class__(nu.vertices, nu.densities * mu.total_mass / nu.total_mass, nu.triangles)
    s = iterate(state_from_sites(mu, nu, [[3.5, 3.5]], [[0.0, 0.0]]))
    bmu = build_rpd(mu, s.y, np.zeros(1)).barycenters()
    bnu = build_rpd(nu, s.x, np.zeros(1)).barycenters()
    # the solved weight of a lone site is only fixed up to the gauge
    np.testing.assert_allclose(s.y, bmu, atol=1e-14)
    np.testing.assert_allclose(s.x, bnu, atol=1e-14)


def test_translation_equivariance():
    mu = disk_mesh((0.5, 0.5), 0.4, 24)
    nu = disk_mesh((0.6, 0.4), 0.35, 24, density=lambda p: 1 + p[:, 0])
    from coupledot.density_mesh import normalized

    mu, nu = normalized(mu), normalized(nu)
    base = init_coupling(mu, nu, 12, seed=3)
    shift = np.array([0.3, -0.2])
    moved_nu = nu.transformed(1.0, -shift)
    a = iterate(base, tol=1e-10)
    b = iterate(state_from_sites(mu, moved_nu, base.x + shift, base.y), tol=1e-10)
    np.testing.assert_allclose(b.x, a.x + shift, atol=1e-9)
    np.testing.assert_allclose(b.y, a.y, atol=1e-9)


def test_translated_squares():
    mu = square_mesh(0, 0, 1, subdivisions=2)
    nu = square_mesh(2, 0, 1, subdivisions=2)
    state, hist = run(mu, nu, 20, outer_iters=300, seed=0)
    np.testing.assert_allclose(state.y, state.x - [2.0, 0.0], atol=1e-6)
    assert hist[-1].barycenter_residual_x < 1e-6


def test_run_rejects_zero_iterations():
    with pytest.raises(ValueError):
        run(square_mesh(), square_mesh(), 4, outer_iters=0)


def test_run_deterministic():
    mu = disk_mesh((0, 0), 1, 24)
    a, ha = run(mu, mu, 10, outer_iters=3, seed=5)
    b, hb = run(mu, mu, 10, outer_iters=3, seed=5)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.psi, b.psi)
    assert [h.as_dict() for h in ha] == [h.as_dict() for h in hb]


def test_self_coupling_residuals():
    mu = disk_mesh((0, 0), 0.5, 24)
    state, hist = run(mu, mu, 50, outer_iters=100, seed=1)
    d = hist[-1]
    assert d.barycenter_residual_x <= 1e-4 * mu.diameter
    assert d.barycenter_residual_y == pytest.approx(0.0, abs=1e-12)
    assert len(hist) == state.iteration


def test_residual_y_zero_right_after_iterate():
    mu = disk_mesh((0, 0), 0.5, 24)
    s = iterate(init_coupling(mu, mu, 9, seed=2))
    assert diagnostics(s).barycenter_residual_y == pytest.approx(0.0, abs=1e-15)


def test_equal_cell_masses():
    mu = disk_mesh((0, 0), 0.5, 24)
    nu = disk_mesh((1, 0), 0.5, 24, density=lambda p: 0.5 + 0.2 * p[:, 1] + 0.5)
    from coupledot.density_mesh import normalized

    mu, nu = normalized(mu), normalized(nu)
    s, _ = run(mu, nu, 16, outer_iters=5, seed=0)
    np.testing.assert_allclose(s.rpd_mu.masses, 1 / 16, rtol=1e-6)
    np.testing.assert_allclose(s.rpd_nu.masses, 1 / 16, rtol=1e-6)


def test_overlap_suspect_on_split_cell():
    from coupledot.density_mesh import merge_meshes

    two = merge_meshes(square_mesh(0, 0, 1), square_mesh(2, 0, 1))
    # a single site owning both squares spans two components
    rpd = build_rpd(two, np.array([[1.5, 0.5]]), np.zeros(1))
    assert overlap_suspects(rpd) == [0]
    rpd = build_rpd(two, np.array([[0.5, 0.5], [2.5, 0.5]]), np.zeros(2))
    assert overlap_suspects(rpd) == []


def test_coupling_error_keeps_state(monkeypatch):
    import coupledot.symmetrizer as sym

    sq = square_mesh()
    s0 = state_from_sites(sq, sq, TWO, TWO)
    real = sym.solve_weights

    def failing(*a, **k):
        w, rep = real(*a, **k)
        rep.converged = False
        return w, rep

    monkeypatch.setattr(sym, "solve_weights", failing)
    with pytest.raises(CouplingError) as e:
        iterate(s0)
    assert e.value.state is s0 and e.value.iteration == 1
