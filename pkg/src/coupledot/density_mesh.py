"""Piecewise-linear measures on triangle meshes."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay

from .geom2d import EPS_GEOM

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64/SeedSequence"


class MeshFormatError(ValueError):
    """Raised for malformed mesh text or violated mesh invariants."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class DensityMesh:
    vertices: np.ndarray
    densities: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 2)
        d = np.ascontiguousarray(self.densities, dtype=float).reshape(-1)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "densities", d)
        object.__setattr__(self, "triangles", t)
        validate_mesh(self)

    @cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def triangle_masses(self):
        return self.areas * self.densities[self.triangles].mean(axis=1)

    @cached_property
    def total_mass(self):
        return float(self.triangle_masses.sum())

    @cached_property
    def diameter(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @cached_property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def _edge_table(self):
        t = self.triangles
        # triangle edge k joins corners k and k+1
        pairs = np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return uniq, inverse.reshape(-1, 3), counts

    @property
    def edges(self):
        """Unique undirected edges as vertex pairs."""
        return self._edge_table[0]

    @property
    def triangle_edges(self):
        """``triangle_edges[t, k]`` is the edge id joining corners ``k`` and ``k+1``."""
        return self._edge_table[1]

    @property
    def edge_triangle_count(self):
        return self._edge_table[2]

    @cached_property
    def boundary_edges(self):
        return self.edge_triangle_count == 1

    @cached_property
    def boundary_vertices(self):
        flags = np.zeros(len(self.vertices), dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return flags

    @cached_property
    def density_coefficients(self):
        """Per-triangle ``(grad, offset)`` with density ``grad . p + offset``."""
        p = self.vertices[self.triangles]
        m = np.concatenate([p, np.ones((len(p), 3, 1))], axis=2)
        coef = np.linalg.solve(m, self.densities[self.triangles][..., None])[..., 0]
        return coef[:, :2].copy(), coef[:, 2].copy()

    def transformed(self, scale, shift):
        """Mesh mapped by ``p -> (p - shift) * scale`` with mass preserved."""
        return DensityMesh(
            (self.vertices - shift) * scale,
            self.densities / scale**2,
            self.triangles,
        )


def validate_mesh(mesh: DensityMesh, lines=None):
    """Check mesh invariants; ``lines`` maps entities to source line numbers."""
    v, d, t = mesh.vertices, mesh.densities, mesh.triangles
    vline = lines[0] if lines else None
    tline = lines[1] if lines else None
    if len(v) != len(d):
        raise MeshFormatError("one density per vertex required")
    if not np.all(np.isfinite(v)) or not np.all(np.isfinite(d)):
        raise MeshFormatError("non-finite vertex coordinate or density")
    neg = np.flatnonzero(d < 0)
    if len(neg):
        raise MeshFormatError("negative density", vline[neg[0]] if vline else None)
    if len(t) == 0:
        raise MeshFormatError("mesh has no triangles")
    bad = np.flatnonzero((t < 0) | (t >= len(v)))
    if len(bad):
        k = bad[0] // 3
        raise MeshFormatError("vertex index out of range", tline[k] if tline else None)
    p = v[t]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    scale = max(float(np.ptp(v, axis=0).max()), 1e-300)
    bad = np.flatnonzero(area <= EPS_GEOM * scale**2)
    if len(bad):
        k = bad[0]
        what = "negative area" if area[k] < 0 else "zero area"
        raise MeshFormatError(f"triangle has {what}", tline[k] if tline else None)
    pairs = np.sort(np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2), axis=1)
    _, counts = np.unique(pairs, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshFormatError("mesh edge shared by more than two triangles")
    mass = float((area * d[t].mean(axis=1)).sum())
    if not mass > 0:
        raise MeshFormatError("total mass must be positive")


def parse_mesh(text) -> DensityMesh:
    """Parse the line-oriented ``v x y density`` / ``t i j k`` format."""
    if hasattr(text, "read"):
        text = text.read()
    verts, dens, tris = [], [], []
    vlines, tlines = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) != 4:
                raise MeshFormatError("expected 'v <x> <y> <density>'", lineno)
            try:
                x, y, rho = (float(s) for s in parts[1:])
            except ValueError:
                raise MeshFormatError("malformed number", lineno) from None
            verts.append((x, y))
            dens.append(rho)
            vlines.append(lineno)
        elif tag == "t":
            if len(parts) != 4:
                raise MeshFormatError("expected 't <i> <j> <k>'", lineno)
            try:
                tris.append(tuple(int(s) for s in parts[1:]))
            except ValueError:
                raise MeshFormatError("malformed index", lineno) from None
            tlines.append(lineno)
        else:
            raise MeshFormatError(f"unknown record {tag!r}", lineno)
    if not verts:
        raise MeshFormatError("mesh has no vertices")
    v = np.array(verts, dtype=float)
    d = np.array(dens, dtype=float)
    t = np.array(tris, dtype=np.int64).reshape(-1, 3)
    raw = object.__new__(DensityMesh)
    object.__setattr__(raw, "vertices", v)
    object.__setattr__(raw, "densities", d)
    object.__setattr__(raw, "triangles", t)
    validate_mesh(raw, (vlines, tlines))
    return DensityMesh(v, d, t)


def format_mesh(mesh: DensityMesh) -> str:
    out = [f"# {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles"]
    out += [f"v {x!r} {y!r} {r!r}" for (x, y), r in zip(mesh.vertices.tolist(), mesh.densities.tolist())]
    out += ["t %d %d %d" % tuple(tri) for tri in mesh.triangles.tolist()]
    return "\n".join(out) + "\n"


def total_mass(mesh: DensityMesh) -> float:
    return mesh.total_mass


@dataclass(frozen=True, eq=False)
class SiteSet:
    positions: np.ndarray
    target_mass: float

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, 2)
        if len(pos) < 1:
            raise ValueError("a site set needs at least one site")
        if not np.all(np.isfinite(pos)):
            raise ValueError("site positions must be finite")
        if not self.target_mass > 0:
            raise ValueError("target mass must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "target_mass", float(self.target_mass))

    def __len__(self):
        return len(self.positions)

    @property
    def target_masses(self):
        return np.full(len(self.positions), self.target_mass)


def make_rng(seed, *spawn_key):
    """Generator for sub-stream ``spawn_key`` of ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


def sample_sites(mesh: DensityMesh, n: int, seed=0, mode="area", rng=None) -> SiteSet:
    """Draw ``n`` sites, picking triangles by area (or by mass) then uniformly inside."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == "area":
        w = mesh.areas
    elif mode == "mass":
        w = mesh.triangle_masses
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        rng = make_rng(seed)
    tri = rng.choice(len(w), size=n, p=w / w.sum())
    u = rng.random((n, 2))
    r = np.sqrt(u[:, 0])
    p = mesh.vertices[mesh.triangles[tri]]
    pos = (1 - r)[:, None] * p[:, 0] + (r * (1 - u[:, 1]))[:, None] * p[:, 1] + (r * u[:, 1])[:, None] * p[:, 2]
    return SiteSet(pos, mesh.total_mass / n)


def check_mass_balance(mu: DensityMesh, nu: DensityMesh, rtol=1e-9):
    """Warn when two measures carry different total mass; returns the ratio gap."""
    gap = abs(mu.total_mass - nu.total_mass) / mu.total_mass
    if gap > rtol:
        logger.warning("total masses differ by %.3g (relative); interpolation assumes equal totals", gap)
    return gap


# mesh builders used by the benchmarks and tests


def square_mesh(x0=0.0, y0=0.0, size=1.0, density=1.0, subdivisions=1):
    """Axis-aligned square split into ``2 * subdivisions**2`` triangles.

    ``density`` may be a scalar or a callable of an ``(n, 2)`` array.
    """
    k = subdivisions
    g = np.linspace(0.0, size, k + 1)
    xx, yy = np.meshgrid(g + x0, g + y0, indexing="xy")
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for j in range(k):
        for i in range(k):
            a = j * (k + 1) + i
            b, c, d = a + 1, a + k + 2, a + k + 1
            tris += [(a, b, c), (a, c, d)]
    return DensityMesh(verts, _density_values(verts, density), np.array(tris))


def disk_mesh(center=(0.0, 0.0), radius=1.0, boundary_points=64, rings=None, density=1.0):
    """Polygonal disk: concentric rings triangulated by Delaunay."""
    if rings is None:
        rings = max(2, boundary_points // 8)
    c = np.asarray(center, dtype=float)
    pts = [c[None, :]]
    for r_idx in range(1, rings + 1):
        rr = radius * r_idx / rings
        m = max(6, int(round(boundary_points * r_idx / rings)))
        ang = 2 * np.pi * (np.arange(m) + 0.5 * (r_idx % 2)) / m
        pts.append(c + rr * np.column_stack([np.cos(ang), np.sin(ang)]))
    verts = np.concatenate(pts)
    tri = Delaunay(verts).simplices.astype(np.int64)
    p = verts[tri]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    tri[cross < 0] = tri[cross < 0][:, [0, 2, 1]]
    keep = np.abs(cross) > 1e-12 * radius**2
    return DensityMesh(verts, _density_values(verts, density), tri[keep])


def merge_meshes(*meshes):
    verts, dens, tris = [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        dens.append(m.densities)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return DensityMesh(np.concatenate(verts), np.concatenate(dens), np.concatenate(tris))


def normalized(mesh: DensityMesh, mass=1.0):
    """Copy of ``mesh`` with densities rescaled to the given total mass."""
    return DensityMesh(mesh.vertices, mesh.densities * (mass / mesh.total_mass), mesh.triangles)


def _density_values(verts, density):
    if callable(density):
        return np.asarray(density(verts), dtype=float).reshape(-1)
    return np.full(len(verts), float(density))
