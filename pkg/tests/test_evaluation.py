import numpy as np
import pytest

from coupledot.density_mesh import disk_mesh, normalized, square_mesh
from coupledot.evaluation import (
    BenchmarkReport,
    EmptyFrameError,
    Scenario,
    baseline_morph,
    hausdorff,
    hausdorff_points,
    run_benchmark,
    sample_frame,
)
from coupledot.morph import FrameCell, MorphFrame


def square_frame(x0=0.0, y0=0.0, size=1.0):
    sq = np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size]], float)
    return MorphFrame(0.0, [FrameCell(0, [sq], size * size, 1.0)])


def test_self_distance_zero():
    f = square_frame()
    assert hausdorff(f, f, 1000, seed=3) == 0.0


def test_translated_squares():
    d = hausdorff(square_frame(), square_frame(0.1), 100_000, seed=0)
    assert d == pytest.approx(0.1, abs=0.01)


def test_disjoint_squares():
    assert hausdorff(square_frame(), square_frame(6.0), 1000) >= 5.0


def test_symmetry():
    a, b = square_frame(), square_frame(0.3, 0.2, 0.5)
    assert hausdorff(a, b, 2000, 4) == hausdorff(b, a, 2000, 4)


def test_preconditions():
    with pytest.raises(ValueError):
        hausdorff(square_frame(), square_frame(), 50)
    with pytest.raises(EmptyFrameError):
        hausdorff(MorphFrame(0.0, []), square_frame(), 1000)


def test_samples_uniform_in_region():
    pts = sample_frame(square_frame(), 50_000, seed=1)
    assert np.all((pts >= 0) & (pts <= 1))
    assert np.abs(pts.mean(axis=0) - 0.5).max() < 0.01
    np.testing.assert_array_equal(pts, sample_frame(square_frame(), 50_000, seed=1))


def test_overlapping_cells_sampled_as_union():
    a = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    f = MorphFrame(0.0, [FrameCell(0, [a], 1, 1), FrameCell(1, [a + 0.5], 1, 1)])
    pts = sample_frame(f, 40_000, seed=2)
    # the union has area 1.75; the overlap (0.25) must not be sampled twice
    frac = np.mean(np.all((pts >= 0.5) & (pts <= 1.0), axis=1))
    assert frac == pytest.approx(0.25 / 1.75, abs=0.01)


def test_monotone_refinement():
    rng = np.random.default_rng(0)
    a, b = square_frame(), square_frame(0.2, 0.1, 0.7)
    drops = 0
    for trial in range(20):
        seed = int(rng.integers(1 << 30))
        d1 = hausdorff(a, b, 500, seed)
        d2 = hausdorff(a, b, 1000, seed)
        # gap bound: typical spacing of 500 uniform points in a unit square
        drops += d2 < d1 - 3.0 / np.sqrt(500)
    assert drops == 0


def test_point_hausdorff():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 0.5]])
    assert hausdorff_points(a, b) == pytest.approx(np.hypot(1.0, 0.5))


def test_baseline_endpoints():
    mu = normalized(square_mesh(0, 0, 1, subdivisions=2))
    nu = normalized(square_mesh(2, 0, 1, subdivisions=2))
    base = baseline_morph(mu, nu, 16, seed=0)
    f0, f1 = base.frame(0.0), base.frame(1.0)
    assert sum(c.area for c in f0.cells) == pytest.approx(1.0, rel=1e-9)
    # each cell arrives translated so that its barycenter sits on its site
    rpd = base.rpd
    for i, c in enumerate(f1.cells):
        shift = rpd.sites[i] - rpd.barycenters()[i]
        np.testing.assert_allclose(np.concatenate(c.loops), np.concatenate(f0.cells[i].loops) + shift, atol=1e-12)


def test_empty_benchmark():
    rep = run_benchmark([])
    assert rep.rows == [] and rep.to_csv().startswith("scenario")


def test_degenerate_scenario_constant_morph():
    mu = normalized(disk_mesh((0.5, 0.5), 0.3, 24))
    sc = Scenario("same", mu, mu, n=20, n_ref=200, seeds=(0,), outer_iters=10, samples=2000)
    rep = run_benchmark([sc])
    row = rep.rows[0]
    assert not row.error
    noise = 0.05
    assert max(row.ours) <= row.ours[0] + noise
    assert "same" in rep.to_text()
    assert len(rep.to_csv().strip().splitlines()) == 1 + 2 * len(sc.ts)


def test_failures_recorded_per_row():
    mu = normalized(disk_mesh((0.5, 0.5), 0.3, 24))
    bad = Scenario("bad", mu, mu, n=0, n_ref=50, seeds=(0, 1), outer_iters=1, samples=200)
    rep = run_benchmark([bad])
    assert len(rep.rows) == 2 and all(r.error for r in rep.rows)
    assert "error" in rep.to_csv()
