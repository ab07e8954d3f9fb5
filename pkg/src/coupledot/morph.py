"""Vertex matching between two coupled restricted diagrams and morph frames.

A vertex is keyed by the sorted triple of cell ids meeting at it, with ``0``
standing for the outside of the mesh: ``(a, b, c)`` for a triple point of
three cells (type iii), ``(0, a, b)`` where a cell edge meets the mesh
boundary (type ii) and ``(0, 0, a)`` for a boundary mesh vertex inside cell
``a - 1`` (type i).  Cell ids are site indices plus one.
"""
from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .power_diagram import label_edge, vertex_key

TYPE_I, TYPE_II, TYPE_III = "i", "ii", "iii"


@dataclass(frozen=True)
class ClassifiedVertex:
    position: tuple
    key: tuple
    vtype: str
    ordinal: int
    cells: tuple

    def __post_init__(self):
        k = self.key
        if len(k) != 3 or list(k) != sorted(k) or k[2] < 1 or k[1] == 0 and k[2] == 0:
            raise ValueError(f"invalid vertex key {k}")
        zeros = k.count(0)
        if (zeros, self.vtype) not in ((0, TYPE_III), (1, TYPE_II), (2, TYPE_I)):
            raise ValueError(f"key {k} does not fit type {self.vtype}")


def vertex_type(key):
    return {0: TYPE_III, 1: TYPE_II, 2: TYPE_I}[key.count(0)]


def _angle(p, c):
    return math.atan2(p[1] - c[1], p[0] - c[0])


class VertexSet:
    """Classified vertices of one diagram plus each cell's boundary loops.

    ``loops[c]`` lists the counter-clockwise boundary loops of cell ``c`` as
    sequences of vertex indices.
    """

    def __init__(self, vertices, loops, barycenters, masses):
        self.vertices = vertices
        self.loops = loops
        self.barycenters = barycenters
        self.masses = masses
        self.positions = np.array([v.position for v in vertices], dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.vertices)

    def __iter__(self):
        return iter(self.vertices)

    def __getitem__(self, i):
        return self.vertices[i]

    @property
    def n_cells(self):
        return len(self.loops)

    def center(self, key):
        """Reference point for angular ordering of vertices carrying ``key``."""
        cells = [c - 1 for c in key if c > 0]
        return self.barycenters[cells].mean(axis=0)

    def angle(self, i):
        v = self.vertices[i]
        return _angle(v.position, self.center(v.key))

    def by_key(self):
        out = defaultdict(list)
        for i, v in enumerate(self.vertices):
            out[v.key].append(i)
        return out


def classify_vertices(rpd) -> VertexSet:
    """Emit every cell-boundary and domain-boundary vertex once, with its key.

    Crossings of cell edges with interior mesh edges and interior mesh
    vertices are clipping artifacts and are not emitted.
    """
    mesh = rpd.mesh
    ids = rpd.vertex_ids
    bedge = mesh.boundary_edges
    bvert = mesh.boundary_vertices
    n = len(rpd.sites)
    bary = rpd.sites.astype(float).copy()
    ok = rpd.masses > 0
    bary[ok] = rpd.first_moments[ok] / rpd.masses[ok, None]

    raw = []
    index = {}
    loops_vid = []
    for c, plist in enumerate(rpd.pieces_by_site):
        nxt = {}
        order = []
        for p in plist:
            a, b = rpd.piece_start[p], rpd.piece_start[p + 1]
            lab = rpd.labels[a:b]
            keep = [q for q in range(b - a) if ids[a + q][0] != "d"]
            m = len(keep)
            for r in range(m):
                q = keep[r]
                q1 = keep[(r + 1) % m]
                lb = int(lab[q])
                if lb >= 0 or (lb < -1 and bedge[label_edge(lb)]):
                    s = ids[a + q]
                    if s not in nxt:
                        nxt[s] = ids[a + q1]
                        order.append(s)
            for q in keep:
                vid = ids[a + q]
                key = vertex_key(vid, bedge, bvert, c)
                if key is None:
                    continue
                ident = (vid, c) if vid[0] == "v" else vid
                if ident not in index:
                    index[ident] = len(raw)
                    raw.append((tuple(float(z) for z in rpd.vertices[a + q]), key))
        seen = set()
        cell_loops = []
        for start in order:
            if start in seen:
                continue
            loop = []
            cur = start
            while cur is not None and cur not in seen:
                seen.add(cur)
                loop.append(cur)
                cur = nxt.get(cur)
            cell_loops.append(loop)
        loops_vid.append((c, cell_loops))

    loops = []
    for c, cell_loops in loops_vid:
        out = []
        for loop in cell_loops:
            idx = []
            for vid in loop:
                ident = (vid, c) if vid[0] == "v" else vid
                j = index.get(ident)
                if j is not None and (not idx or idx[-1] != j):
                    idx.append(j)
            if len(idx) > 1 and idx[0] == idx[-1]:
                idx.pop()
            if idx:
                out.append(idx)
        loops.append(out)

    # ordinals: angular order around the incident cells' barycenters
    groups = defaultdict(list)
    for j, (pos, key) in enumerate(raw):
        groups[key].append(j)
    ordinal = [0] * len(raw)
    for key, members in groups.items():
        cen = bary[[x - 1 for x in key if x > 0]].mean(axis=0)
        members.sort(key=lambda j: (_angle(raw[j][0], cen), j))
        for o, j in enumerate(members):
            ordinal[j] = o
    verts = [
        ClassifiedVertex(pos, key, vertex_type(key), ordinal[j], tuple(x - 1 for x in key if x > 0))
        for j, (pos, key) in enumerate(raw)
    ]
    assert len(loops) == n
    return VertexSet(verts, loops, bary, rpd.masses.copy())


@dataclass
class SplitRecord:
    """Vertex ``vertex`` of diagram ``side`` maps to several vertices of the other diagram."""

    side: str
    vertex: int
    partners: list

    def links(self):
        return [(self.vertex, p) if self.side == "A" else (p, self.vertex) for p in self.partners]


@dataclass
class Correspondence:
    matched: list = field(default_factory=list)
    splits: list = field(default_factory=list)
    attachments: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)

    def links(self):
        """Every ``(A vertex, B vertex)`` association used for interpolation."""
        out = list(self.matched)
        for r in self.splits + self.attachments:
            out.extend(r.links())
        return out

    def swapped(self):
        flip = {"A": "B", "B": "A"}
        return Correspondence(
            [(b, a) for a, b in self.matched],
            [SplitRecord(flip[r.side], r.vertex, list(r.partners)) for r in self.splits],
            [SplitRecord(flip[r.side], r.vertex, list(r.partners)) for r in self.attachments],
            [(flip[s], i, why) for s, i, why in self.unmatched],
        )

    def discontinuity_vertices(self):
        """``(side, vertex)`` pairs lying on a transport discontinuity (split sources and partners)."""
        out = []
        for r in self.splits:
            other = "B" if r.side == "A" else "A"
            out.append((r.side, r.vertex))
            out.extend((other, p) for p in r.partners)
        return out


def _circ(a, b):
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def match_vertices(A: VertexSet, B: VertexSet) -> Correspondence:
    """Pair vertices of two diagrams over the same sites by key.

    Equal keys are paired by angular assignment.  Leftover triple points
    are resolved against the boundary crossings of their cell pairs and
    leftover boundary crossings against boundary mesh vertices; either is a
    split when two or more partners are found.  Surplus boundary mesh vertices attach to a
    vertex of the same cell on the other side.  The procedure treats the
    two sides identically.
    """
    if A.n_cells != B.n_cells:
        raise ValueError("diagrams have different numbers of cells")
    sides = {"A": A, "B": B}
    ka, kb = A.by_key(), B.by_key()
    free = {"A": set(range(len(A))), "B": set(range(len(B)))}
    corr = Correspondence()
    ang = {"A": [A.angle(i) for i in range(len(A))], "B": [B.angle(i) for i in range(len(B))]}

    for key in sorted(set(ka) & set(kb)):
        ia, ib = ka[key], kb[key]
        cost = np.array([[_circ(ang["A"][a], ang["B"][b]) for b in ib] for a in ia])
        r, c = linear_sum_assignment(cost)
        for x, y in sorted(zip(r, c)):
            corr.matched.append((ia[x], ib[y]))
            free["A"].discard(ia[x])
            free["B"].discard(ib[y])

    def by_key_free(side):
        out = defaultdict(list)
        for i in sorted(free[side]):
            out[sides[side][i].key].append(i)
        return out

    def resolve(side, vtype, sub_keys):
        other = "B" if side == "A" else "A"
        src, dst = sides[side], sides[other]
        pool = by_key_free(other)
        taken = set()
        for i in sorted(j for j in free[side] if src[j].vtype == vtype):
            key = src[i].key
            a0 = _angle(src[i].position, src.center(key))
            partners = []
            for sk in sub_keys(key):
                cands = [j for j in pool.get(sk, []) if j not in taken]
                if not cands:
                    continue
                cen = dst.center(key)
                best = min(cands, key=lambda j: (_circ(_angle(dst[j].position, cen), a0), j))
                partners.append(best)
                taken.add(best)
            yield side, other, i, partners

    def triple_subkeys(key):
        a, b, c = key
        return sorted({tuple(sorted(k)) for k in ((0, a, b), (0, a, c), (0, b, c))})

    def pair_subkeys(key):
        return sorted({(0, 0, key[1]), (0, 0, key[2])})

    # a boundary crossing whose two cells land on different components splits like a torn triple point
    for vtype, subkeys in ((TYPE_III, triple_subkeys), (TYPE_II, pair_subkeys)):
        results = []
        for side in ("A", "B"):
            results.extend(resolve(side, vtype, subkeys))
        for side, other, i, partners in results:
            free[side].discard(i)
            for j in partners:
                free[other].discard(j)
            if len(partners) >= 2:
                corr.splits.append(SplitRecord(side, i, partners))
            elif len(partners) == 1:
                corr.matched.append((i, partners[0]) if side == "A" else (partners[0], i))
            else:
                corr.unmatched.append((side, i, f"no counterpart for type {vtype} key {sides[side][i].key}"))

    # surplus boundary mesh vertices attach many-to-one
    pair_of = {"A": {a: b for a, b in corr.matched}, "B": {b: a for a, b in corr.matched}}
    attach = defaultdict(list)
    for side in ("A", "B"):
        other = "B" if side == "A" else "A"
        src, dst = sides[side], sides[other]
        okeys = ka if other == "A" else kb
        for i in sorted(free[side]):
            v = src[i]
            if v.vtype != TYPE_I:
                continue
            cands = [j for j in okeys.get(v.key, []) if j in pair_of[other]]
            if not cands:
                corr.unmatched.append((side, i, f"cell {v.key[2] - 1} has no boundary vertex on the other side"))
                free[side].discard(i)
                continue
            a0 = ang[side][i]
            best = min(cands, key=lambda j: (_circ(ang[other][j], a0), j))
            attach[(other, best)].append(i)
            free[side].discard(i)
    drop = set()
    for (side, j), extra in sorted(attach.items()):
        partner = pair_of[side][j]
        drop.add((j, partner) if side == "A" else (partner, j))
        corr.attachments.append(SplitRecord(side, j, sorted([partner] + extra)))
    corr.matched = sorted(p for p in corr.matched if p not in drop)
    for side in ("A", "B"):
        for i in sorted(free[side]):
            corr.unmatched.append((side, i, "unresolved"))
    corr.splits.sort(key=lambda r: (r.side, r.vertex))
    corr.attachments.sort(key=lambda r: (r.side, r.vertex))
    corr.unmatched.sort()
    return corr


# ---------------------------------------------------------------- frames


@dataclass
class FrameCell:
    index: int
    loops: list
    area: float
    density: float


@dataclass
class MorphFrame:
    t: float
    cells: list

    @property
    def is_empty(self):
        return not any(len(l) for c in self.cells for l in c.loops)

    def polygons(self):
        return [l for c in self.cells for l in c.loops if len(l) >= 3]

    def metadata(self, splits=None):
        return {
            "t": self.t,
            "density_annotation": "target cell mass divided by cell area at t",
            "cells": [
                {
                    "index": c.index,
                    "area": c.area,
                    "density": c.density if math.isfinite(c.density) else None,
                    "loops": [l.tolist() for l in c.loops],
                }
                for c in self.cells
            ],
            "splits": splits or [],
        }


@dataclass
class _LoopPlan:
    pa: np.ndarray
    pb: np.ndarray
    keys: list


@dataclass
class MorphPlan:
    cells: list
    mass_a: np.ndarray
    mass_b: np.ndarray

    def frame(self, t):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        s = 1.0 - t
        cells = []
        for i, plans in enumerate(self.cells):
            loops = [s * lp.pa + t * lp.pb for lp in plans]
            area = float(sum(_shoelace(l) for l in loops))
            mass = s * self.mass_a[i] + t * self.mass_b[i]
            density = mass / area if area > 0 else math.inf
            cells.append(FrameCell(i, loops, area, density))
        return MorphFrame(float(t), cells)


def _shoelace(p):
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _chain(links, m, n):
    """Largest set of links monotone in both cyclic orders."""
    best = None
    for s0 in sorted(set(links)):
        rel = sorted(((a - s0[0]) % m, (b - s0[1]) % n) for a, b in set(links))
        tails, tail_idx, parent = [], [], [-1] * len(rel)
        for k, (_, rb) in enumerate(rel):
            pos = bisect.bisect_right(tails, rb)
            parent[k] = tail_idx[pos - 1] if pos else -1
            if pos == len(tails):
                tails.append(rb)
                tail_idx.append(k)
            else:
                tails[pos] = rb
                tail_idx[pos] = k
        k = tail_idx[-1]
        chain = []
        while k >= 0:
            chain.append(rel[k])
            k = parent[k]
        chain.reverse()
        if chain[0] != (0, 0):
            chain.insert(0, (0, 0))
        stretch = sum(abs((a1 - a0) / m - (b1 - b0) / n) for (a0, b0), (a1, b1) in zip(chain, chain[1:]))
        absolute = [((a + s0[0]) % m, (b + s0[1]) % n) for a, b in chain]
        score = (-len(chain), round(stretch, 12), sorted(absolute))
        if best is None or score < best[0]:
            best = (score, absolute)
    return best[1]


def _merge_loop(al, bl, anchors):
    """Cyclic sequence of ``(a, b)`` pairs walking both loops forward.

    Between consecutive anchors the remaining vertices of each side are
    interleaved by relative position, each paired with the latest vertex
    reached on the other side; coincident positions pair directly.
    """
    m, n = len(al), len(bl)
    start = anchors[0]
    rel = sorted(((a - start[0]) % m, (b - start[1]) % n) for a, b in anchors)
    out = []
    for k, (ra, rb) in enumerate(rel):
        na, nb = rel[k + 1] if k + 1 < len(rel) else (m, n)
        a_cur, b_cur = al[(ra + start[0]) % m], bl[(rb + start[1]) % n]
        out.append((a_cur, b_cur))
        ga = [al[(x + start[0]) % m] for x in range(ra + 1, na)]
        gb = [bl[(x + start[1]) % n] for x in range(rb + 1, nb)]
        i = j = 0
        while i < len(ga) or j < len(gb):
            # compare (i+1)/(len(ga)+1) with (j+1)/(len(gb)+1) exactly
            if j >= len(gb):
                c = -1
            elif i >= len(ga):
                c = 1
            else:
                lhs = (i + 1) * (len(gb) + 1)
                rhs = (j + 1) * (len(ga) + 1)
                c = (lhs > rhs) - (lhs < rhs)
            if c <= 0:
                a_cur = ga[i]
                i += 1
            if c >= 0:
                b_cur = gb[j]
                j += 1
            out.append((a_cur, b_cur))
    return out


def plan_morph(corr: Correspondence, A: VertexSet, B: VertexSet) -> MorphPlan:
    """Per-cell frame loops as ``(position at t=0, position at t=1)`` pairs."""
    links = corr.links()
    cells = []
    for c in range(A.n_cells):
        a_loops, b_loops = A.loops[c], B.loops[c]
        where_a = {v: (k, q) for k, loop in enumerate(a_loops) for q, v in enumerate(loop)}
        where_b = {v: (k, q) for k, loop in enumerate(b_loops) for q, v in enumerate(loop)}
        per_pair = defaultdict(list)
        for a, b in links:
            if a in where_a and b in where_b:
                (la, qa), (lb, qb) = where_a[a], where_b[b]
                per_pair[(la, lb)].append((qa, qb))
        # pair loops greedily by shared links
        pairs = []
        used_a, used_b = set(), set()
        for (la, lb), lk in sorted(per_pair.items(), key=lambda kv: (-len(set(kv[1])), kv[0])):
            if la in used_a or lb in used_b:
                continue
            used_a.add(la)
            used_b.add(lb)
            pairs.append((la, lb, lk))
        plans = []
        for la, lb, lk in pairs:
            al, bl = a_loops[la], b_loops[lb]
            anchors = _chain(lk, len(al), len(bl))
            seq = _merge_loop(al, bl, anchors)
            plans.append(
                _LoopPlan(
                    np.array([A.positions[a] for a, _ in seq]),
                    np.array([B.positions[b] for _, b in seq]),
                    [(A[a].key, B[b].key) for a, b in seq],
                )
            )
        for la, loop in enumerate(a_loops):
            if la not in used_a:
                pa = A.positions[loop]
                plans.append(_LoopPlan(pa, np.repeat(B.barycenters[c][None], len(loop), axis=0),
                                       [(A[a].key, None) for a in loop]))
        for lb, loop in enumerate(b_loops):
            if lb not in used_b:
                pb = B.positions[loop]
                plans.append(_LoopPlan(np.repeat(A.barycenters[c][None], len(loop), axis=0), pb,
                                       [(None, B[b].key) for b in loop]))
        cells.append(_canonical(plans))
    return MorphPlan(cells, np.asarray(A.masses, float), np.asarray(B.masses, float))


def _canonical(plans):
    """Rotate each loop to start at its lowest midpoint and sort the loops."""
    out = []
    for lp in plans:
        mid = 0.5 * lp.pa + 0.5 * lp.pb
        k = min(range(len(mid)), key=lambda q: (mid[q, 0], mid[q, 1], q)) if len(mid) else 0
        out.append(_LoopPlan(np.roll(lp.pa, -k, axis=0), np.roll(lp.pb, -k, axis=0), lp.keys[k:] + lp.keys[:k]))
    out.sort(key=lambda lp: tuple((0.5 * lp.pa[0] + 0.5 * lp.pb[0]).tolist()) if len(lp.pa) else ())
    return out


def interpolate_frame(corr: Correspondence, A: VertexSet, B: VertexSet, t: float) -> MorphFrame:
    """Frame at ``t``: every vertex moves on the segment to its counterpart."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    plan = getattr(corr, "_plan", None)
    if plan is None or plan[0] is not A or plan[1] is not B:
        plan = (A, B, plan_morph(corr, A, B))
        corr._plan = plan
    return plan[2].frame(t)


# ---------------------------------------------------------------- reports


def neighbor_preservation(rpd_a, rpd_b):
    """Fraction of adjacent cell pairs of ``rpd_a`` that are also adjacent in ``rpd_b``."""
    adj_a = rpd_a.adjacency
    if not adj_a:
        return 1.0
    return len(adj_a & rpd_b.adjacency) / len(adj_a)


def type_iii_match_fraction(corr, A, B):
    """Share of triple-point vertices (both sides) paired with an equal key."""
    total = sum(v.vtype == TYPE_III for v in A) + sum(v.vtype == TYPE_III for v in B)
    if total == 0:
        return 1.0
    exact = sum(1 for a, b in corr.matched if A[a].vtype == TYPE_III and A[a].key == B[b].key)
    return 2.0 * exact / total


def split_summary(corr, A, B):
    sides = {"A": A, "B": B}
    out = []
    for r in corr.splits:
        other = sides["B" if r.side == "A" else "A"]
        out.append(
            {
                "side": r.side,
                "key": list(sides[r.side][r.vertex].key),
                "position": list(sides[r.side][r.vertex].position),
                "partner_keys": [list(other[p].key) for p in r.partners],
            }
        )
    return out


# ---------------------------------------------------------------- svg


DEFAULT_STYLE = {"width": 512, "height": 512, "margin": 0.05, "stroke": "#000000", "stroke_width": 0.5,
                 "density_scale": None, "bounds": None}


def gray_level(density, scale):
    """Grayscale byte for a density: white at 0, darkening linearly to 40 at ``scale`` and above."""
    if not math.isfinite(density):
        return 40
    if scale <= 0:
        return 255
    v = min(max(density / scale, 0.0), 1.0)
    return int(round(255 - 215 * v))


def _fmt(v):
    return format(float(v), ".12g")


def frame_to_svg(frame: MorphFrame, style=None) -> str:
    """Render a frame as an SVG 1.1 document; y points up.

    Cell fill is ``gray_level(density, scale)`` where ``scale`` is
    ``style["density_scale"]`` or, when unset, the largest finite density in
    the frame.
    """
    st = dict(DEFAULT_STYLE)
    st.update(style or {})
    polys = frame.polygons()
    if st["bounds"] is not None:
        (x0, y0), (x1, y1) = st["bounds"]
    elif polys:
        allp = np.concatenate(polys)
        x0, y0 = allp.min(axis=0)
        x1, y1 = allp.max(axis=0)
    else:
        x0, y0, x1, y1 = 0.0, 0.0, 1.0, 1.0
    span = max(x1 - x0, y1 - y0, 1e-300)
    pad = st["margin"] * span
    vb = (x0 - pad, -(y1 + pad), (x1 - x0) + 2 * pad, (y1 - y0) + 2 * pad)
    dens = [c.density for c in frame.cells if math.isfinite(c.density)]
    scale = st["density_scale"] if st["density_scale"] is not None else (max(dens) if dens else 1.0)
    sw = st["stroke_width"] * span / max(st["width"], 1)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{st["width"]}" height="{st["height"]}" '
        f'viewBox="{" ".join(_fmt(v) for v in vb)}">',
        f'<rect x="{_fmt(vb[0])}" y="{_fmt(vb[1])}" width="{_fmt(vb[2])}" height="{_fmt(vb[3])}" fill="#ffffff"/>',
        '<g transform="scale(1,-1)">',
    ]
    for c in frame.cells:
        parts = []
        for loop in c.loops:
            if len(loop) < 3:
                continue
            parts.append("M " + " L ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in loop) + " Z")
        if not parts:
            continue
        g = gray_level(c.density, scale)
        lines.append(
            f'<path id="cell{c.index}" d="{" ".join(parts)}" fill="#{g:02x}{g:02x}{g:02x}" '
            f'fill-rule="evenodd" stroke="{st["stroke"]}" stroke-width="{_fmt(sw)}"/>'
        )
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


@dataclass
class CoupledMorph:
    """Everything needed to interpolate between two coupled diagrams."""

    rpd_a: object
    rpd_b: object
    A: VertexSet
    B: VertexSet
    corr: Correspondence
    plan: MorphPlan

    def frame(self, t):
        return self.plan.frame(t)

    def stats(self):
        return {
            "neighbor_preservation": neighbor_preservation(self.rpd_a, self.rpd_b),
            "type_iii_exact_fraction": type_iii_match_fraction(self.corr, self.A, self.B),
            "n_matched": len(self.corr.matched),
            "n_splits": len(self.corr.splits),
            "n_attachments": len(self.corr.attachments),
            "n_unmatched": len(self.corr.unmatched),
        }


def coupled_morph(rpd_a, rpd_b) -> CoupledMorph:
    A = classify_vertices(rpd_a)
    B = classify_vertices(rpd_b)
    corr = match_vertices(A, B)
    return CoupledMorph(rpd_a, rpd_b, A, B, corr, plan_morph(corr, A, B))
