"""Planar primitives: half-plane clipping of convex polygons and exact moments.

Polygons carry one integer label per vertex: ``labels[k]`` tags the edge that
leaves vertex ``k`` (towards vertex ``k + 1``).  Non-negative labels name the
site whose power bisector produced the edge; negative labels are left to the
caller (mesh edges use ``-(edge + 2)``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_GEOM = 1e-12

# Degree-3 symmetric triangle rule: centroid plus three interior points.
_QUAD_BARY = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [0.6, 0.2, 0.2],
        [0.2, 0.6, 0.2],
        [0.2, 0.2, 0.6],
    ]
)
_QUAD_W = np.array([-27.0 / 48.0, 25.0 / 48.0, 25.0 / 48.0, 25.0 / 48.0])


@dataclass(frozen=True)
class HalfPlane:
    """The set ``{p : normal . p <= offset}``."""

    normal: np.ndarray
    offset: float
    label: int = -1

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (2,) or not np.all(np.isfinite(n)) or np.hypot(*n) <= 0.0:
            raise ValueError("half-plane normal must be a finite nonzero 2-vector")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def power_bisector(cls, xi, xj, wi, wj, label=-1):
        """Points at least as close (in power distance) to site ``xi`` as to ``xj``."""
        xi = np.asarray(xi, dtype=float)
        xj = np.asarray(xj, dtype=float)
        normal = 2.0 * (xj - xi)
        offset = xj @ xj - xi @ xi + wi - wj
        return cls(normal, offset, label)


@dataclass
class ConvexPolygon:
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if self.labels is None or len(self.labels) == 0:
            self.labels = np.full(len(self.vertices), -1, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.vertices):
            raise ValueError("one label per vertex required")

    def __len__(self):
        return len(self.vertices)

    @property
    def is_empty(self):
        return len(self.vertices) < 3

    def area(self):
        return polygon_area(self.vertices)


def polygon_area(vertices):
    """Signed shoelace area (positive for counter-clockwise)."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon_halfplane(poly: ConvexPolygon, h: HalfPlane, eps=EPS_GEOM) -> ConvexPolygon:
    """Intersect a convex polygon with a half-plane (Sutherland-Hodgman step).

    Vertices within ``eps`` of the boundary line count as inside, which keeps
    the operation idempotent.  Edges created along the line get ``h.label``.
    """
    n = len(poly)
    if n < 3:
        return ConvexPolygon()
    v = poly.vertices
    lab = poly.labels
    tol = eps * float(np.hypot(*h.normal))
    d = v @ h.normal - h.offset
    inside = d <= tol
    if inside.all():
        return ConvexPolygon(v.copy(), lab.copy())
    if not inside.any():
        return ConvexPolygon()

    out_v = []
    out_l = []
    for k in range(n):
        k1 = (k + 1) % n
        if inside[k]:
            if inside[k1]:
                out_v.append(v[k])
                out_l.append(lab[k])
            elif d[k] >= -tol:
                # vertex sits on the line: the clip edge starts here
                out_v.append(v[k])
                out_l.append(h.label)
            else:
                out_v.append(v[k])
                out_l.append(lab[k])
                s = d[k] / (d[k] - d[k1])
                out_v.append(v[k] + s * (v[k1] - v[k]))
                out_l.append(h.label)
        elif inside[k1] and d[k1] < -tol:
            s = d[k] / (d[k] - d[k1])
            out_v.append(v[k] + s * (v[k1] - v[k]))
            out_l.append(lab[k])
    if len(out_v) < 3:
        return ConvexPolygon()
    return ConvexPolygon(np.array(out_v), np.array(out_l, dtype=np.int64))


@dataclass(frozen=True)
class Moments:
    mass: float
    first_moment: np.ndarray
    cost: float

    @classmethod
    def zero(cls):
        return cls(0.0, np.zeros(2), 0.0)

    def __add__(self, other):
        return Moments(
            self.mass + other.mass,
            self.first_moment + other.first_moment,
            self.cost + other.cost,
        )


def linear_density_on_triangle(tri_xy, values):
    """Coefficients ``(a, b)`` with ``a . p + b`` matching ``values`` at the corners."""
    tri_xy = np.asarray(tri_xy, dtype=float)
    m = np.column_stack([tri_xy, np.ones(3)])
    coef = np.linalg.solve(m, np.asarray(values, dtype=float))
    return coef[:2], float(coef[2])


def triangle_moments(p0, p1, p2, grad, offset, site):
    """Mass, first moment and quadratic cost of a linear density on one triangle."""
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    area = 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
    pts = _QUAD_BARY[:, :1] * p0 + _QUAD_BARY[:, 1:2] * p1 + _QUAD_BARY[:, 2:] * p2
    rho = pts @ grad + offset
    w = _QUAD_W * rho * area
    q = pts - site
    return Moments(float(w.sum()), w @ pts, float(w @ np.einsum("ij,ij->i", q, q)))


def polygon_moments(poly, density, site) -> Moments:
    """Exact moments of a linear density over a convex polygon.

    ``density`` is ``(a, b)`` for the density ``a . p + b``.  Raises
    ``ValueError`` if the density is negative at a vertex.
    """
    if isinstance(poly, ConvexPolygon):
        v = poly.vertices
    else:
        v = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(v) < 3:
        return Moments.zero()
    grad = np.asarray(density[0], dtype=float)
    offset = float(density[1])
    rho_v = v @ grad + offset
    if np.any(rho_v < -EPS_GEOM * max(1.0, float(np.abs(rho_v).max()))):
        raise ValueError("density is negative on the polygon")
    site = np.asarray(site, dtype=float)
    total = Moments.zero()
    for k in range(1, len(v) - 1):
        total = total + triangle_moments(v[0], v[k], v[k + 1], grad, offset, site)
    return total


def point_in_convex(vertices, p, eps=0.0):
    """True when ``p`` lies in the counter-clockwise convex polygon."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return False
    e = np.roll(v, -1, axis=0) - v
    r = np.asarray(p, dtype=float) - v
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    return bool(np.all(cross >= -eps))


def is_convex_ccw(vertices, eps=EPS_GEOM):
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return True
    e = np.roll(v, -1, axis=0) - v
    e2 = np.roll(e, -1, axis=0)
    cross = e[:, 0] * e2[:, 1] - e[:, 1] * e2[:, 0]
    return bool(np.all(cross >= -eps)) and polygon_area(v) > 0
