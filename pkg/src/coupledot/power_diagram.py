"""Power diagrams of weighted sites restricted to a density mesh."""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import _kernels
from .density_mesh import DensityMesh, SiteSet
from .geom2d import EPS_GEOM, ConvexPolygon, HalfPlane, Moments, clip_polygon_halfplane, polygon_moments


class EmptyCellError(ValueError):
    """A cell carries no mass, so its barycenter is undefined."""

    def __init__(self, index):
        self.index = index
        super().__init__(f"cell {index} is empty")


class DuplicateSitesError(ValueError):
    pass


@dataclass
class RestrictedCell:
    site_index: int
    pieces: list
    moments: Moments


def mesh_edge_label(edge):
    return -(int(edge) + 2)


def label_edge(label):
    return -int(label) - 2


class RestrictedPowerDiagram:
    """Pieces of every power cell clipped to every mesh triangle.

    Pieces are stored flat and sorted by ``(triangle, site)``: piece ``p``
    owns vertices ``piece_start[p]:piece_start[p + 1]`` of ``vertices`` and
    ``labels``, counter-clockwise.
    """

    def __init__(self, mesh, sites, weights, piece_tri, piece_site, piece_start, vertices, labels, piece_moments):
        self.mesh = mesh
        self.sites = sites
        self.weights = weights
        self.piece_tri = piece_tri
        self.piece_site = piece_site
        self.piece_start = piece_start
        self.vertices = vertices
        self.labels = labels
        self.piece_moments = piece_moments
        n = len(sites)
        pm = piece_moments
        self.masses = np.bincount(piece_site, pm[:, 0], minlength=n)
        self.first_moments = np.column_stack(
            [np.bincount(piece_site, pm[:, 1], minlength=n), np.bincount(piece_site, pm[:, 2], minlength=n)]
        )
        self.costs = np.bincount(piece_site, pm[:, 3], minlength=n)

    def __len__(self):
        return len(self.sites)

    @property
    def n_pieces(self):
        return len(self.piece_tri)

    @property
    def eps_len(self):
        return EPS_GEOM * self.mesh.diameter

    def piece(self, p):
        a, b = self.piece_start[p], self.piece_start[p + 1]
        return ConvexPolygon(self.vertices[a:b], self.labels[a:b])

    @cached_property
    def pieces_by_site(self):
        order = np.argsort(self.piece_site, kind="stable")
        split = np.searchsorted(self.piece_site[order], np.arange(len(self.sites) + 1))
        return [order[split[i] : split[i + 1]] for i in range(len(self.sites))]

    @property
    def cells(self):
        out = []
        for i, plist in enumerate(self.pieces_by_site):
            out.append(
                RestrictedCell(
                    i,
                    [(int(self.piece_tri[p]), self.piece(p)) for p in plist],
                    Moments(float(self.masses[i]), self.first_moments[i].copy(), float(self.costs[i])),
                )
            )
        return out

    def barycenters(self):
        """Mass barycenters; raises :class:`EmptyCellError` on the first empty cell."""
        empty = np.flatnonzero(self.masses <= 0)
        if len(empty):
            raise EmptyCellError(int(empty[0]))
        return self.first_moments / self.masses[:, None]

    def empty_cells(self):
        return np.flatnonzero(self.masses <= 0)

    @cached_property
    def adjacency(self):
        return neighbor_graph(self)

    @cached_property
    def vertex_ids(self):
        """Topological identity of every stored piece vertex."""
        return _vertex_ids(self)

    def locate(self, points):
        """Site index of the piece containing each point (-1 outside the mesh)."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.full(len(points), -1, dtype=np.int64)
        lo = np.minimum.reduceat(self.vertices, self.piece_start[:-1], axis=0)
        hi = np.maximum.reduceat(self.vertices, self.piece_start[:-1], axis=0)
        for p in range(self.n_pieces):
            cand = np.flatnonzero(
                (out < 0)
                & (points[:, 0] >= lo[p, 0])
                & (points[:, 0] <= hi[p, 0])
                & (points[:, 1] >= lo[p, 1])
                & (points[:, 1] <= hi[p, 1])
            )
            if not len(cand):
                continue
            v = self.vertices[self.piece_start[p] : self.piece_start[p + 1]]
            e = np.roll(v, -1, axis=0) - v
            r = points[cand, None, :] - v[None, :, :]
            cross = e[None, :, 0] * r[..., 1] - e[None, :, 1] * r[..., 0]
            hit = np.all(cross >= 0, axis=1)
            out[cand[hit]] = self.piece_site[p]
        return out


_GRIDS = weakref.WeakKeyDictionary()


def _triangle_grid(mesh: DensityMesh):
    grid = _GRIDS.get(mesh)
    if grid is not None:
        return grid
    lo, hi = mesh.bbox
    p = mesh.vertices[mesh.triangles]
    tlo = p.min(axis=1)
    thi = p.max(axis=1)
    span = np.maximum(hi - lo, 1e-300)
    cell = max(float(np.sqrt(np.median(np.prod(thi - tlo, axis=1)))), float(span.max()) / 512)
    nx = max(1, int(np.ceil(span[0] / cell)))
    ny = max(1, int(np.ceil(span[1] / cell)))
    i0 = np.clip(((tlo[:, 0] - lo[0]) / cell).astype(np.int64), 0, nx - 1)
    i1 = np.clip(((thi[:, 0] - lo[0]) / cell).astype(np.int64), 0, nx - 1)
    j0 = np.clip(((tlo[:, 1] - lo[1]) / cell).astype(np.int64), 0, ny - 1)
    j1 = np.clip(((thi[:, 1] - lo[1]) / cell).astype(np.int64), 0, ny - 1)
    buckets = [[] for _ in range(nx * ny)]
    for t in range(len(p)):
        for gj in range(j0[t], j1[t] + 1):
            for gi in range(i0[t], i1[t] + 1):
                buckets[gj * nx + gi].append(t)
    start = np.zeros(nx * ny + 1, dtype=np.int64)
    start[1:] = np.cumsum([len(b) for b in buckets])
    items = np.array([t for b in buckets for t in b], dtype=np.int64)
    grid = (float(lo[0]), float(lo[1]), cell, nx, ny, start, items)
    _GRIDS[mesh] = grid
    return grid


def _hull_polygon(mesh):
    """Mesh bounding box, padded slightly, counter-clockwise: the seed of every cell."""
    (x0, y0), (x1, y1) = mesh.bbox
    pad = 1e-6 * mesh.diameter
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def _as_positions(sites):
    if isinstance(sites, SiteSet):
        return sites.positions
    return np.ascontiguousarray(sites, dtype=float).reshape(-1, 2)


def _check_inputs(mesh, pos, w):
    if len(w) != len(pos):
        raise ValueError(f"{len(pos)} sites but {len(w)} weights")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if len(pos) > 1:
        pairs = cKDTree(pos).query_pairs(EPS_GEOM * mesh.diameter)
        if pairs:
            i, j = min(pairs)
            raise DuplicateSitesError(f"sites {i} and {j} coincide")


def build_rpd(mesh: DensityMesh, sites, weights=None, method="fast", check=True) -> RestrictedPowerDiagram:
    """Restricted power diagram of ``sites`` with ``weights`` on ``mesh``.

    ``method="brute"`` clips every triangle against every bisector in pure
    Python; it is the reference the fast path is tested against.
    """
    pos = _as_positions(sites)
    w = np.zeros(len(pos)) if weights is None else np.ascontiguousarray(weights, dtype=float).reshape(-1)
    if check:
        _check_inputs(mesh, pos, w)
    if method == "brute":
        return _build_brute(mesh, pos, w)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    return _build_fast(mesh, pos, w)


def power_neighbors(pos, w, k_extra=8):
    """Candidate neighbour lists (CSR) containing every power-diagram neighbour.

    The regular triangulation is read off the lower convex hull of the lifted
    points ``(x, y, |x|^2 - w)``; the ``k_extra`` nearest sites are added so a
    Qhull precision slip cannot drop a neighbour.
    """
    n = len(pos)
    if n <= 16:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
        return np.arange(n + 1, dtype=np.int64) * max(n - 1, 0), j.astype(np.int64)
    pairs = []
    lifted = np.column_stack([pos, np.einsum("ij,ij->i", pos, pos) - w])
    try:
        hull = ConvexHull(lifted, qhull_options="Qt")
        low = hull.simplices[hull.equations[:, 2] < 0]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            pairs.append(low[:, [a, b]])
        # a hidden site is dominated by the corners of the facet below it
        hidden = np.setdiff1d(np.arange(n), low.ravel())
        if len(hidden):
            below = low[_facets_below(pos, low, pos[hidden])]
            pairs.append(np.column_stack([np.repeat(hidden, 3), below.ravel()]))
    except QhullError:
        k_extra = min(n - 1, 4 * k_extra + 16)
    k = min(n, k_extra + 1)
    _, nn = cKDTree(pos).query(pos, k=k)
    nn = np.asarray(nn).reshape(n, k)
    pairs.append(np.column_stack([np.repeat(np.arange(n), k - 1), nn[:, 1:].ravel()]))
    e = np.concatenate(pairs).astype(np.int64)
    code = np.unique(np.concatenate([e[:, 0] * n + e[:, 1], e[:, 1] * n + e[:, 0]]))
    src, dst = np.divmod(code, n)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    start = np.searchsorted(src, np.arange(n + 1))
    return start.astype(np.int64), np.ascontiguousarray(dst)


def _facets_below(pos, tris, points, chunk=256):
    """Index of the projected triangle containing each point (nearest by barycentric slack)."""
    a = pos[tris[:, 0]]
    e1 = pos[tris[:, 1]] - a
    e2 = pos[tris[:, 2]] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    det = np.where(det == 0, np.inf, det)
    out = np.empty(len(points), dtype=np.int64)
    for s in range(0, len(points), chunk):
        r = points[s : s + chunk, None, :] - a[None]
        u = (r[..., 0] * e2[:, 1] - r[..., 1] * e2[:, 0]) / det
        v = (e1[:, 0] * r[..., 1] - e1[:, 1] * r[..., 0]) / det
        slack = np.minimum(np.minimum(u, v), 1.0 - u - v)
        out[s : s + chunk] = np.argmax(slack, axis=1)
    return out


def _build_fast(mesh, pos, w):
    n = len(pos)
    diam = mesh.diameter
    eps_len = EPS_GEOM * diam
    eps_area = (EPS_GEOM * diam) ** 2
    hull = _hull_polygon(mesh)
    cstart, citems = power_neighbors(pos, w)
    grad, off = mesh.density_coefficients
    gx0, gy0, gcell, gnx, gny, gstart, gitems = _triangle_grid(mesh)
    cap_p = max(64, 4 * (n + len(mesh.triangles)))
    cap_v = 8 * cap_p
    while True:
        bufs = (
            np.empty(cap_p, dtype=np.int64),
            np.empty(cap_p, dtype=np.int64),
            np.empty(cap_p + 1, dtype=np.int64),
            np.empty(cap_v),
            np.empty(cap_v),
            np.empty(cap_v, dtype=np.int64),
            np.empty((cap_p, 4)),
        )
        np_, nv, overflow = _kernels.build_cells(
            pos, w, cstart, citems,
            mesh.vertices, mesh.triangles, mesh.triangle_edges, grad, off,
            gx0, gy0, gcell, gnx, gny, gstart, gitems,
            hull, eps_len, eps_area,
            *bufs,
        )
        if not overflow:
            break
        cap_p *= 2
        cap_v *= 2
    pt, ps, pstart, vx, vy, lab, mom = bufs
    result = (pt[:np_], ps[:np_], np.diff(pstart[: np_ + 1]), np.column_stack([vx[:nv], vy[:nv]]), lab[:nv], mom[:np_])
    return _assemble(mesh, pos, w, [result])


def _assemble(mesh, pos, w, results):
    if not results:
        results = [(np.zeros(0, np.int64),) * 3 + (np.zeros((0, 2)), np.zeros(0, np.int64), np.zeros((0, 4)))]
    pt = np.concatenate([r[0] for r in results])
    ps = np.concatenate([r[1] for r in results])
    counts = np.concatenate([r[2] for r in results]).astype(np.int64)
    verts = np.concatenate([r[3] for r in results])
    labs = np.concatenate([r[4] for r in results])
    mom = np.concatenate([r[5] for r in results])
    starts = np.concatenate([[0], np.cumsum(counts)])
    order = np.lexsort((ps, pt))
    new_counts = counts[order]
    new_start = np.concatenate([[0], np.cumsum(new_counts)]).astype(np.int64)
    gather = np.repeat(starts[order] - new_start[:-1], new_counts) + np.arange(new_start[-1])
    return RestrictedPowerDiagram(
        mesh,
        pos.copy(),
        w.copy(),
        pt[order],
        ps[order],
        new_start,
        verts[gather] if len(gather) else np.zeros((0, 2)),
        labs[gather] if len(gather) else np.zeros(0, np.int64),
        mom[order] if len(order) else np.zeros((0, 4)),
    )


def _build_brute(mesh, pos, w):
    n = len(pos)
    diam = mesh.diameter
    eps_len = EPS_GEOM * diam
    eps_area = (EPS_GEOM * diam) ** 2
    grad, off = mesh.density_coefficients
    pt, ps, counts, verts, labs, mom = [], [], [], [], [], []
    for t, tri in enumerate(mesh.triangles):
        base = ConvexPolygon(mesh.vertices[tri], [mesh_edge_label(e) for e in mesh.triangle_edges[t]])
        for i in range(n):
            poly = base
            for j in range(n):
                if j == i:
                    continue
                poly = clip_polygon_halfplane(poly, HalfPlane.power_bisector(pos[i], pos[j], w[i], w[j], j), eps_len)
                if poly.is_empty:
                    break
            if poly.is_empty or poly.area() < eps_area:
                continue
            m = polygon_moments(poly, (grad[t], off[t]), pos[i])
            pt.append(t)
            ps.append(i)
            counts.append(len(poly))
            verts.append(poly.vertices)
            labs.append(poly.labels)
            mom.append([m.mass, m.first_moment[0], m.first_moment[1], m.cost])
    if not pt:
        return _assemble(mesh, pos, w, [])
    results = [
        (
            np.array(pt, dtype=np.int64),
            np.array(ps, dtype=np.int64),
            np.array(counts, dtype=np.int64),
            np.concatenate(verts),
            np.concatenate(labs).astype(np.int64),
            np.array(mom),
        )
    ]
    return _assemble(mesh, pos, w, results)


def cell_stats(rpd: RestrictedPowerDiagram, i: int):
    """``(mass, barycenter, cost)`` of cell ``i``; cost is taken about site ``i``."""
    mass = float(rpd.masses[i])
    if mass <= 0:
        raise EmptyCellError(i)
    return mass, rpd.first_moments[i] / mass, float(rpd.costs[i])


def neighbor_graph(rpd: RestrictedPowerDiagram):
    """Pairs ``(i, j)``, ``i < j``, whose cells share a boundary of positive length."""
    v = rpd.vertices
    lab = rpd.labels
    nxt = np.arange(1, len(v) + 1)
    nxt[rpd.piece_start[1:] - 1] = rpd.piece_start[:-1]
    length = np.hypot(*(v[nxt] - v).T)
    owner = np.repeat(rpd.piece_site, np.diff(rpd.piece_start))
    sel = (lab >= 0) & (length > rpd.eps_len)
    a = owner[sel]
    b = lab[sel]
    pairs = np.unique(np.column_stack([np.minimum(a, b), np.maximum(a, b)]), axis=0)
    return {(int(i), int(j)) for i, j in pairs}


def _vertex_ids(rpd: RestrictedPowerDiagram):
    edges = rpd.mesh.edges
    ids = []
    for p in range(rpd.n_pieces):
        i = int(rpd.piece_site[p])
        a, b = rpd.piece_start[p], rpd.piece_start[p + 1]
        lab = rpd.labels[a:b].tolist()
        m = len(lab)
        for q in range(m):
            lin = lab[q - 1]
            lout = lab[q]
            if lin < -1 and lout < -1:
                e1, e2 = label_edge(lin), label_edge(lout)
                common = set(edges[e1].tolist()) & set(edges[e2].tolist())
                if e1 != e2 and len(common) == 1:
                    ids.append(("v", common.pop()))
                else:
                    ids.append(("d", p, q))
            elif lin >= 0 and lout >= 0:
                if lin == lout:
                    ids.append(("d", p, q))
                else:
                    ids.append(("t",) + tuple(sorted((i, lin, lout))))
            elif lin >= 0 or lout >= 0:
                j = lin if lin >= 0 else lout
                e = label_edge(lout if lin >= 0 else lin)
                ids.append(("e", e, min(i, j), max(i, j)))
            else:
                ids.append(("d", p, q))
    return ids


def vertex_key(vid, boundary_edges, boundary_vertices, cell=None):
    """Sorted incident-cell triple (``0`` = outside) for a match point, else ``None``."""
    kind = vid[0]
    if kind == "t":
        return (vid[1] + 1, vid[2] + 1, vid[3] + 1)
    if kind == "e" and boundary_edges[vid[1]]:
        return (0, vid[2] + 1, vid[3] + 1)
    if kind == "v" and boundary_vertices[vid[1]] and cell is not None:
        return (0, 0, cell + 1)
    return None


def dump_diagram(rpd: RestrictedPowerDiagram, transform=None):
    """JSON-ready description of a diagram (per cell: site, weight, mass, pieces)."""
    mesh = rpd.mesh
    ids = rpd.vertex_ids
    fwd = transform or (lambda p: p)
    cells = []
    for i, plist in enumerate(rpd.pieces_by_site):
        mass = float(rpd.masses[i])
        bary = (rpd.first_moments[i] / mass) if mass > 0 else None
        pieces = []
        for p in plist:
            a, b = rpd.piece_start[p], rpd.piece_start[p + 1]
            keys = []
            for q in range(a, b):
                k = vertex_key(ids[q], mesh.boundary_edges, mesh.boundary_vertices, i)
                keys.append(list(k) if k is not None else None)
            pieces.append(
                {
                    "triangle": int(rpd.piece_tri[p]),
                    "vertices": fwd(rpd.vertices[a:b]).tolist(),
                    "edge_labels": rpd.labels[a:b].tolist(),
                    "vertex_keys": keys,
                }
            )
        cells.append(
            {
                "site": fwd(rpd.sites[i]).tolist(),
                "weight": float(rpd.weights[i]),
                "mass": mass,
                "barycenter": None if bary is None else fwd(bary).tolist(),
                "pieces": pieces,
            }
        )
    return {"n_sites": len(rpd.sites), "cells": cells}
