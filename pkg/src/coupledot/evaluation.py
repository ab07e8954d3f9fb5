"""Hausdorff distances between interpolated shapes and the benchmark table."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .density_mesh import disk_mesh, make_rng, merge_meshes, normalized, sample_sites
from .morph import FrameCell, MorphFrame, coupled_morph
from .sdot import solve_weights
from .symmetrizer import run

logger = logging.getLogger(__name__)

DEFAULT_TS = (0.0, 0.25, 0.5, 0.75, 1.0)

# solver settings of every benchmark solve
BENCH_SOLVER = {"method": "newton"}

# Table 1 of the reference study (3-d meshes, 10k samples against 100k),
# kept only to compare orders of magnitude.
REFERENCE_VALUES = {
    "two_disks_to_two_disks": {"baseline": (0.025, 0.033, 0.025, 0.021, 0.016),
                               "symmetrized": (0.0086, 0.017, 0.0098, 0.0094, 0.0072)},
    "one_disk_to_two_disks": {"baseline": (0.022, 0.022, 0.025, 0.026, 0.016),
                              "symmetrized": (0.0098, 0.0089, 0.0017, 0.0092, 0.0064)},
}


class EmptyFrameError(ValueError):
    pass


def frame_geometry(frame: MorphFrame):
    """Union of every cell polygon of the frame (a shapely geometry)."""
    polys = [shapely.make_valid(shapely.Polygon(p)) for p in frame.polygons()]
    polys = [g for g in polys if not g.is_empty and g.area > 0]
    if not polys:
        raise EmptyFrameError("frame has no area")
    return shapely.union_all(polys)


def sample_frame(frame: MorphFrame, count: int, seed=0):
    """``count`` points uniformly distributed over the frame's covered region."""
    geom = frame_geometry(frame)
    tris = shapely.get_parts(shapely.constrained_delaunay_triangles(geom))
    coords = np.array([np.asarray(t.exterior.coords)[:3] for t in tris if t.area > 0])
    if not len(coords):
        raise EmptyFrameError("frame has no area")
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    rng = make_rng(seed)
    pick = rng.choice(len(area), size=count, p=area / area.sum())
    u = rng.random((count, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    return coords[pick, 0] + u[:, :1] * e1[pick] + u[:, 1:] * e2[pick]


def hausdorff_points(pa, pb):
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(max(da.max(), db.max()))


def hausdorff(a: MorphFrame, b: MorphFrame, samples_per_shape=20000, seed=0):
    """Symmetric Hausdorff distance between area samplings of two frames.

    Both frames are sampled with the same seed; the estimate approaches the
    true distance from below as the sample count grows.
    """
    if samples_per_shape < 100:
        raise ValueError("samples_per_shape must be >= 100")
    if a.is_empty or b.is_empty:
        raise EmptyFrameError("cannot measure an empty frame")
    return hausdorff_points(sample_frame(a, samples_per_shape, seed), sample_frame(b, samples_per_shape, seed))


# ---------------------------------------------------------------- baseline


@dataclass
class BaselineMorph:
    """One-sided interpolation: each mu-cell translates toward its sampled site."""

    rpd: object
    report: object

    def frame(self, t):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        rpd = self.rpd
        bary = rpd.barycenters()
        shift = t * (rpd.sites - bary)
        cells = []
        for i, plist in enumerate(rpd.pieces_by_site):
            loops = [rpd.vertices[rpd.piece_start[p] : rpd.piece_start[p + 1]] + shift[i] for p in plist]
            area = float(sum(rpd.piece(p).area() for p in plist))
            mass = float(rpd.masses[i])
            cells.append(FrameCell(i, loops, area, mass / area if area > 0 else math.inf))
        return MorphFrame(float(t), cells)


def baseline_morph(mu, nu, n, seed=0, tol=1e-6, max_iter=1000, mode="area", rng=None, method="newton"):
    """Sample ``nu`` once, transport ``mu`` onto the samples, interpolate rigidly per cell."""
    x = sample_sites(nu, n, rng=rng if rng is not None else make_rng(seed, 2), mode=mode).positions
    # cold solve: start near the answer
    _, rep = solve_weights(mu, x, tol=tol, max_iter=max_iter, init="multiscale", method=method)
    if not rep.converged:
        logger.warning("baseline solve did not converge (N=%d)", n)
    return BaselineMorph(rep.diagram, rep)


# ---------------------------------------------------------------- scenarios


@dataclass
class Scenario:
    name: str
    mu: object
    nu: object
    n: int = 200
    n_ref: int = 5000
    seeds: tuple = (0, 1, 2)
    ts: tuple = DEFAULT_TS
    outer_iters: int = 100
    samples: int = 20000
    disconnected: bool = False


def _unit_scale(mu, nu):
    """Common similarity putting both supports in a box of unit diameter."""
    v = np.concatenate([mu.vertices, nu.vertices])
    lo, hi = v.min(axis=0), v.max(axis=0)
    s = 1.0 / float(np.hypot(*(hi - lo)))
    return normalized(mu.transformed(s, lo)), normalized(nu.transformed(s, lo))


def builtin_scenarios(n=200, n_ref=5000, seeds=(0, 1, 2), outer_iters=100, samples=20000):
    r = 0.2 / math.sqrt(2.0)
    one = disk_mesh((0.5, 0.5), 0.2, 64)
    horiz = merge_meshes(disk_mesh((0.35, 0.5), r, 64), disk_mesh((0.65, 0.5), r, 64))
    vert = merge_meshes(disk_mesh((0.5, 0.35), r, 64), disk_mesh((0.5, 0.65), r, 64))
    moved = disk_mesh((0.8, 0.5), 0.2, 64)
    common = {"n": n, "n_ref": n_ref, "seeds": tuple(seeds), "outer_iters": outer_iters, "samples": samples}
    out = []
    for name, mu, nu, disc in (
        ("one_disk_to_two_disks", one, horiz, True),
        ("two_disks_to_two_disks", horiz, vert, True),
        ("disk_translation", one, moved, False),
    ):
        a, b = _unit_scale(mu, nu)
        out.append(Scenario(name, a, b, disconnected=disc, **common))
    return out


@dataclass
class BenchmarkRow:
    scenario: str
    seed: int
    ours: list
    baseline: list
    ts: tuple
    stats: dict = field(default_factory=dict)
    error: str = ""
    seconds: float = 0.0

    @property
    def wins(self):
        return sum(o < b for o, b in zip(self.ours, self.baseline))


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "seed", "method", "t", "hausdorff"])
        for r in self.rows:
            if r.error:
                w.writerow([r.scenario, r.seed, "error", "", r.error])
                continue
            for method, vals in (("symmetrized", r.ours), ("baseline", r.baseline)):
                for t, v in zip(r.ts, vals):
                    w.writerow([r.scenario, r.seed, method, t, repr(float(v))])
        return buf.getvalue()

    def to_text(self):
        """Table with one row per (scenario, seed, method) and one column per t."""
        if not self.rows:
            return "(no scenarios)\n"
        ts = self.rows[0].ts
        head = f"{'shape':<26}{'seed':>5}  {'algorithm':<12}" + "".join(f"{t:>9g}" for t in ts)
        lines = ["Hausdorff distance to the dense one-sided reference (unit-diameter domain)", head, "-" * len(head)]
        for r in self.rows:
            if r.error:
                lines.append(f"{r.scenario:<26}{r.seed:>5}  error: {r.error}")
                continue
            lines.append(f"{r.scenario:<26}{r.seed:>5}  {'baseline':<12}" + "".join(f"{v:9.4f}" for v in r.baseline))
            lines.append(f"{'':<26}{'':>5}  {'symmetrized':<12}" + "".join(f"{v:9.4f}" for v in r.ours)
                         + f"   wins {r.wins}/{len(ts)}")
        ref = [k for k in REFERENCE_VALUES if any(r.scenario == k for r in self.rows)]
        if ref:
            lines.append("")
            lines.append("reference scale (published 3-d table, not comparable in absolute terms)")
            for k in ref:
                for method in ("baseline", "symmetrized"):
                    lines.append(f"{k:<26}{'':>5}  {method:<12}" + "".join(f"{v:9.4f}" for v in REFERENCE_VALUES[k][method]))
        return "\n".join(lines) + "\n"


def run_scenario(sc: Scenario, reference_seed=0, tol=1e-6, max_iter=1000, reference=None, progress=None):
    """All seeds of one scenario; the dense reference is shared across seeds."""
    if reference is None:
        reference = baseline_morph(sc.mu, sc.nu, sc.n_ref, rng=make_rng(reference_seed, 3), tol=tol,
                                   max_iter=max(max_iter, 5000))
    truth = {t: reference.frame(t) for t in sc.ts}
    rows = []
    for seed in sc.seeds:
        t0 = time.perf_counter()
        try:
            state, hist = run(sc.mu, sc.nu, sc.n, outer_iters=sc.outer_iters, seed=seed, tol=tol, max_iter=max_iter,
                              **BENCH_SOLVER)
            morph = coupled_morph(state.rpd_mu, state.rpd_nu)
            base = baseline_morph(sc.mu, sc.nu, sc.n, seed=seed, tol=tol, max_iter=max_iter)
            ours = [hausdorff(morph.frame(t), truth[t], sc.samples, seed) for t in sc.ts]
            theirs = [hausdorff(base.frame(t), truth[t], sc.samples, seed) for t in sc.ts]
            stats = morph.stats()
            stats["outer_iterations"] = state.iteration
            stats["final_site_displacement"] = hist[-1].site_displacement
            row = BenchmarkRow(sc.name, seed, ours, theirs, tuple(sc.ts), stats)
        except Exception as exc:  # recorded per row, the run continues
            logger.exception("scenario %s seed %d failed", sc.name, seed)
            row = BenchmarkRow(sc.name, seed, [], [], tuple(sc.ts), error=f"{type(exc).__name__}: {exc}")
        row.seconds = time.perf_counter() - t0
        if progress is not None:
            progress(row)
        rows.append(row)
    return rows


def run_benchmark(scenarios, reference_seed=0, tol=1e-6, max_iter=1000, progress=None) -> BenchmarkReport:
    report = BenchmarkReport()
    for sc in scenarios:
        try:
            report.rows.extend(run_scenario(sc, reference_seed, tol, max_iter, progress=progress))
        except Exception as exc:
            logger.exception("scenario %s failed", sc.name)
            report.rows.append(BenchmarkRow(sc.name, -1, [], [], tuple(sc.ts), error=f"{type(exc).__name__}: {exc}"))
    return report
