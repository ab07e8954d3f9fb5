import re

import numpy as np
import pytest

from coupledot.density_mesh import disk_mesh, merge_meshes, normalized, square_mesh
from coupledot.morph import (
    TYPE_I,
    TYPE_II,
    TYPE_III,
    ClassifiedVertex,
    FrameCell,
    MorphFrame,
    VertexSet,
    classify_vertices,
    coupled_morph,
    frame_to_svg,
    gray_level,
    interpolate_frame,
    match_vertices,
    neighbor_preservation,
)
from coupledot.power_diagram import build_rpd
from coupledot.symmetrizer import run

TWO = np.array([[0.25, 0.5], [0.75, 0.5]])


def keyed(vs):
    return sorted((v.key, v.ordinal) for v in vs)


def test_two_site_classification(unit_square):
    vs = classify_vertices(build_rpd(unit_square, TWO, np.zeros(2)))
    got = keyed(vs)
    assert got.count(((0, 0, 1), 0)) + got.count(((0, 0, 1), 1)) == 2
    assert [k for k in got if k[0] == (0, 0, 2)] == [((0, 0, 2), 0), ((0, 0, 2), 1)]
    ii = [v for v in vs if v.vtype == TYPE_II]
    assert sorted(v.ordinal for v in ii) == [0, 1]
    assert all(v.key == (0, 1, 2) for v in ii)
    np.testing.assert_allclose(sorted(v.position for v in ii), [(0.5, 0.0), (0.5, 1.0)], atol=1e-14)
    assert not [v for v in vs if v.vtype == TYPE_III]


def test_single_cell_classification(unit_square):
    vs = classify_vertices(build_rpd(unit_square, np.array([[0.3, 0.3]]), np.zeros(1)))
    assert keyed(vs) == [((0, 0, 1), k) for k in range(4)]


def test_triple_point_classification():
    m = square_mesh(subdivisions=3)
    sites = np.array([[0.5, 0.8], [0.25, 0.3], [0.75, 0.3]])
    vs = classify_vertices(build_rpd(m, sites, np.zeros(3)))
    iii = [v for v in vs if v.vtype == TYPE_III]
    assert len(iii) == 1 and iii[0].key == (1, 2, 3)


def test_interior_mesh_vertices_not_emitted():
    m = square_mesh(subdivisions=4)
    # bisector at x = 0.45 avoids the grid vertices
    vs = classify_vertices(build_rpd(m, np.array([[0.2, 0.5], [0.7, 0.5]]), np.zeros(2)))
    # 16 boundary mesh vertices (type i) plus the two bisector crossings
    assert sum(v.vtype == TYPE_I for v in vs) == 16
    assert len(vs) == 18


def test_key_validation():
    with pytest.raises(ValueError):
        ClassifiedVertex((0, 0), (2, 1, 3), TYPE_III, 0, ())
    with pytest.raises(ValueError):
        ClassifiedVertex((0, 0), (0, 1, 2), TYPE_III, 0, ())
    with pytest.raises(ValueError):
        ClassifiedVertex((0, 0), (0, 0, 0), TYPE_I, 0, ())


def test_all_keys_valid_random():
    rng = np.random.default_rng(0)
    m = disk_mesh((0.5, 0.5), 0.5, 32)
    for _ in range(5):
        vs = classify_vertices(build_rpd(m, rng.random((25, 2)), np.zeros(25)))
        for v in vs:
            assert list(v.key) == sorted(v.key) and v.key[2] >= 1


def test_identity_matching():
    m = disk_mesh((0.5, 0.5), 0.5, 32)
    rng = np.random.default_rng(1)
    rpd = build_rpd(m, rng.random((20, 2)), np.zeros(20))
    A = classify_vertices(rpd)
    corr = match_vertices(A, A)
    assert sorted(corr.matched) == [(i, i) for i in range(len(A))]
    assert not corr.splits and not corr.attachments and not corr.unmatched


def _vs(entries, n_cells):
    verts = [ClassifiedVertex(p, k, t, o, tuple(c - 1 for c in k if c)) for p, k, t, o in entries]
    bary = np.array([[i, 0.0] for i in range(n_cells)], float)
    return VertexSet(verts, [[] for _ in range(n_cells)], bary, np.ones(n_cells))


def test_split_record():
    A = _vs([((1.0, 0.5), (1, 2, 3), TYPE_III, 0)], 3)
    B = _vs([((0.5, 1.0), (0, 1, 2), TYPE_II, 0), ((1.5, 1.0), (0, 2, 3), TYPE_II, 0)], 3)
    corr = match_vertices(A, B)
    assert len(corr.splits) == 1
    r = corr.splits[0]
    assert r.side == "A" and r.vertex == 0 and sorted(r.partners) == [0, 1]
    assert ("A", 0) in corr.discontinuity_vertices()


def test_boundary_crossing_splits_into_mesh_vertices():
    A = _vs([((0.5, 0.0), (0, 1, 2), TYPE_II, 0)], 2)
    B = _vs([((0.2, 0.0), (0, 0, 1), TYPE_I, 0), ((0.8, 0.0), (0, 0, 2), TYPE_I, 0)], 2)
    corr = match_vertices(A, B)
    assert [(r.side, r.vertex, sorted(r.partners)) for r in corr.splits] == [("A", 0, [0, 1])]
    assert not corr.unmatched


def test_surplus_boundary_vertices_attach():
    A = _vs([((0.0, 0.0), (0, 0, 1), TYPE_I, 0), ((1.0, 0.0), (0, 0, 1), TYPE_I, 1)], 1)
    B = _vs([((0.5, 0.0), (0, 0, 1), TYPE_I, 0)], 1)
    corr = match_vertices(A, B)
    links = sorted(corr.links())
    assert links == [(0, 0), (1, 0)]


def test_matching_symmetry():
    mu = normalized(disk_mesh((0.3, 0.5), 0.25, 32))
    nu = normalized(merge_meshes(disk_mesh((0.6, 0.3), 0.15, 32), disk_mesh((0.6, 0.7), 0.15, 32)))
    state, _ = run(mu, nu, 30, outer_iters=10, seed=0)
    A, B = classify_vertices(state.rpd_mu), classify_vertices(state.rpd_nu)
    ab = match_vertices(A, B)
    ba = match_vertices(B, A).swapped()
    assert sorted(ab.matched) == sorted(ba.matched)
    assert sorted(ab.links()) == sorted(ba.links())
    assert sorted((r.side, r.vertex, sorted(r.partners)) for r in ab.splits) == sorted(
        (r.side, r.vertex, sorted(r.partners)) for r in ba.splits
    )


@pytest.fixture(scope="module")
def disk_pair():
    mu = normalized(disk_mesh((0.3, 0.5), 0.25, 32))
    nu = normalized(disk_mesh((0.7, 0.5), 0.2, 32, density=lambda p: 0.5 + p[:, 1]))
    state, _ = run(mu, nu, 25, outer_iters=20, seed=0)
    return state, coupled_morph(state.rpd_mu, state.rpd_nu)


def test_endpoints_bit_exact(disk_pair):
    _, cm = disk_pair
    for t, side in ((0.0, cm.A), (1.0, cm.B)):
        f = cm.frame(t)
        pts = {tuple(p) for c in f.cells for l in c.loops for p in l.tolist()}
        for a, b in cm.corr.matched:
            v = (cm.A[a] if t == 0 else cm.B[b]).position
            assert tuple(float(c) for c in v) in pts


def test_endpoint_areas(disk_pair):
    state, cm = disk_pair
    f0, f1 = cm.frame(0.0), cm.frame(1.0)
    a0 = np.array([c.area for c in f0.cells])
    a1 = np.array([c.area for c in f1.cells])
    cell_area = lambda rpd: np.bincount(rpd.piece_site, [rpd.piece(p).area() for p in range(rpd.n_pieces)], len(rpd.sites))
    np.testing.assert_allclose(a0, cell_area(state.rpd_mu), rtol=1e-9)
    np.testing.assert_allclose(a1, cell_area(state.rpd_nu), rtol=1e-9)


def test_frame_t_range(disk_pair):
    _, cm = disk_pair
    with pytest.raises(ValueError):
        cm.frame(1.5)
    with pytest.raises(ValueError):
        interpolate_frame(cm.corr, cm.A, cm.B, -0.1)


def test_reverse_coupling_geometry(disk_pair):
    state, cm = disk_pair
    rev = coupled_morph(state.rpd_nu, state.rpd_mu)
    for t in (0.25, 0.5):
        f = cm.frame(t)
        g = rev.frame(1 - t)
        for cf, cg in zip(f.cells, g.cells):
            pf = sorted(map(tuple, np.round(np.concatenate(cf.loops), 9).tolist())) if cf.loops else []
            pg = sorted(map(tuple, np.round(np.concatenate(cg.loops), 9).tolist())) if cg.loops else []
            np.testing.assert_allclose(np.array(pf).reshape(-1, 2), np.array(pg).reshape(-1, 2), atol=1e-9)


def test_translated_square_midframe():
    mu = square_mesh(0, 0, 1, subdivisions=2)
    nu = square_mesh(2, 0, 1, subdivisions=2)
    state, _ = run(mu, nu, 20, outer_iters=300, seed=0)
    cm = coupled_morph(state.rpd_mu, state.rpd_nu)
    f = cm.frame(0.5)
    f0 = cm.frame(0.0)
    for c, c0 in zip(f.cells, f0.cells):
        for l, l0 in zip(c.loops, c0.loops):
            np.testing.assert_allclose(l, l0 + [1.0, 0.0], atol=1e-6)
    assert sum(c.area for c in f.cells) == pytest.approx(1.0, abs=1e-6)


def test_neighbor_preservation_identity(unit_square):
    rpd = build_rpd(unit_square, np.random.default_rng(2).random((12, 2)), np.zeros(12))
    assert neighbor_preservation(rpd, rpd) == 1.0


def test_svg_empty_frame():
    svg = frame_to_svg(MorphFrame(0.0, []))
    assert svg.startswith("<?xml") and 'version="1.1"' in svg
    assert "<path" not in svg


def test_svg_single_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    svg = frame_to_svg(MorphFrame(0.0, [FrameCell(0, [sq], 1.0, 1.0)]))
    paths = re.findall(r'\sd="([^"]+)"', svg)
    assert len(paths) == 1
    assert paths[0].count("L") == 3 and paths[0].startswith("M") and paths[0].endswith("Z")


def test_svg_deterministic(disk_pair):
    _, cm = disk_pair
    assert frame_to_svg(cm.frame(0.3)) == frame_to_svg(cm.frame(0.3))


def test_gray_levels():
    assert gray_level(0.0, 1.0) == 255
    assert gray_level(1.0, 1.0) == 40
    assert gray_level(5.0, 1.0) == 40
    assert gray_level(float("inf"), 1.0) == 40


def test_frame_metadata(disk_pair):
    _, cm = disk_pair
    meta = cm.frame(0.5).metadata()
    assert meta["t"] == 0.5 and len(meta["cells"]) == 25
    assert "density_annotation" in meta
