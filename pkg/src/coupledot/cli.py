"""Command-line front end.

Exit status: 0 success, 2 usage error, 3 unreadable or unwritable file,
4 invalid input data, 5 solver non-convergence.  Failures print one JSON
object ``{"error": <class>, "message": ..., "exit_code": ...}`` on stderr.

Randomness derives from ``--seed`` only: stream ``(seed, 0)`` samples the
x-sites on the target, ``(seed, 1)`` the y-sites on the source, ``(seed, 2)``
the baseline sites and ``(seed, 3)`` the dense benchmark reference.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .density_mesh import MeshFormatError, format_mesh, parse_mesh
from .evaluation import REFERENCE_VALUES, EmptyFrameError, Scenario, builtin_scenarios, hausdorff, run_benchmark
from .morph import FrameCell, MorphFrame, coupled_morph, frame_to_svg, split_summary
from .power_diagram import DuplicateSitesError, EmptyCellError, build_rpd, dump_diagram
from .sdot import SolverError, solve_weights
from .symmetrizer import CouplingError, diagnostics, run, state_from_sites

FORMAT_VERSION = 1

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code, kind, message):
        self.code = code
        self.kind = kind
        super().__init__(message)


@dataclass
class RunConfig:
    subcommand: str
    inputs: list
    n_sites: int = 200
    outer_iters: int = 100
    seed: int = 0
    tol: float = 1e-6
    frames: int = 5
    output: str = ""
    mode: str = "area"
    samples: int = 20000
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self):
        for name in ("n_sites", "outer_iters", "frames", "threads"):
            if getattr(self, name) < 1:
                raise CliError(EXIT_USAGE, "UsageError", f"--{name.replace('_', '-')} must be >= 1")
        if not self.tol > 0:
            raise CliError(EXIT_USAGE, "UsageError", "--tol must be positive")


# ---------------------------------------------------------------- io helpers


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(EXIT_IO, "IOError", f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_DATA, "FormatError", f"{path}: invalid JSON ({exc})") from exc


def _write(path, text):
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, "IOError", f"cannot write {path}: {exc.strerror or exc}") from exc


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def _emit(cfg, path, payload):
    """Write ``payload`` (plus config and version) to ``path``, or stdout if empty."""
    doc = {"format_version": FORMAT_VERSION, "config": asdict(cfg), **payload}
    text = _dumps(doc)
    if path:
        _write(path, text)
    else:
        sys.stdout.write(text)


def _load_mesh(path):
    try:
        return parse_mesh(_read_text(path))
    except MeshFormatError as exc:
        raise CliError(EXIT_DATA, "MeshFormatError", f"{path}: {exc}") from exc


def _load_sites(path):
    """Sites file: one ``x y`` (optionally ``x y mass``) per line, ``#`` comments."""
    rows = []
    for lineno, raw in enumerate(_read_text(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(s) for s in line.split()]
        except ValueError:
            raise CliError(EXIT_DATA, "FormatError", f"{path}: line {lineno}: malformed number") from None
        if len(vals) not in (2, 3):
            raise CliError(EXIT_DATA, "FormatError", f"{path}: line {lineno}: expected 'x y [mass]'")
        rows.append(vals)
    if not rows:
        raise CliError(EXIT_DATA, "FormatError", f"{path}: no sites")
    if len({len(r) for r in rows}) != 1:
        raise CliError(EXIT_DATA, "FormatError", f"{path}: mixed column counts")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise CliError(EXIT_DATA, "FormatError", f"{path}: non-finite value")
    return arr[:, :2], (arr[:, 2] if arr.shape[1] == 3 else None)


# ---------------------------------------------------------------- unit scaling


@dataclass
class Similarity:
    """``p -> (p - shift) * scale`` taking the inputs to unit diameter."""

    scale: float
    shift: np.ndarray

    @classmethod
    def for_meshes(cls, *meshes):
        v = np.concatenate([m.vertices for m in meshes])
        lo, hi = v.min(axis=0), v.max(axis=0)
        return cls(1.0 / float(np.hypot(*(hi - lo))), lo)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), np.array(d["shift"], dtype=float))

    def as_dict(self):
        return {"scale": self.scale, "shift": self.shift.tolist()}

    def mesh(self, m):
        return m.transformed(self.scale, self.shift)

    def fwd(self, p):
        return (np.asarray(p) - self.shift) * self.scale

    def back(self, p):
        return np.asarray(p) / self.scale + self.shift

    def back_weights(self, w):
        return np.asarray(w) / self.scale**2

    def fwd_weights(self, w):
        return np.asarray(w) * self.scale**2

    def back_frame(self, frame):
        s2 = self.scale**2
        cells = [FrameCell(c.index, [self.back(l) for l in c.loops], c.area / s2, c.density * s2) for c in frame.cells]
        return MorphFrame(frame.t, cells)


def _dump(rpd, sim):
    d = dump_diagram(rpd, transform=sim.back)
    for cell in d["cells"]:
        cell["weight"] = float(sim.back_weights(cell["weight"]))
    return d


# ---------------------------------------------------------------- subcommands


def cmd_solve(cfg, args):
    mesh = _load_mesh(args.mesh)
    sites, masses = _load_sites(args.sites)
    sim = Similarity.for_meshes(mesh)
    try:
        w, rep = solve_weights(sim.mesh(mesh), sim.fwd(sites), target_masses=masses, tol=cfg.tol,
                               max_iter=args.max_iter, method=args.solver)
    except DuplicateSitesError as exc:
        raise CliError(EXIT_DATA, "DuplicateSitesError", str(exc)) from exc
    except SolverError as exc:
        raise CliError(EXIT_CONVERGENCE, "SolverError", str(exc)) from exc
    payload = {"normalization": sim.as_dict(), "weights": sim.back_weights(w).tolist(), "report": rep.as_dict()}
    if args.diagram:
        payload["diagram"] = _dump(rep.diagram, sim)
    _emit(cfg, cfg.output, payload)
    if not rep.converged:
        raise CliError(EXIT_CONVERGENCE, "NonConvergence",
                       f"solver stopped after {rep.iterations} iterations "
                       f"(max relative mass error {rep.max_relative_mass_error:.3g})")


def _checkpoint(cfg, sim, mu, nu, state, history, failure=None):
    doc = {
        "kind": "checkpoint",
        "normalization": sim.as_dict(),
        "mu_mesh": format_mesh(mu),
        "nu_mesh": format_mesh(nu),
        "iteration": state.iteration,
        # normalized coordinates, used to rebuild the coupled pair exactly
        "state": {
            "x": state.x.tolist(), "phi": state.phi.tolist(), "y": state.y.tolist(), "psi": state.psi.tolist(),
            "pair_mu_sites": state.rpd_mu.sites.tolist(), "pair_mu_weights": state.rpd_mu.weights.tolist(),
            "pair_nu_sites": state.rpd_nu.sites.tolist(), "pair_nu_weights": state.rpd_nu.weights.tolist(),
        },
        "sites": {
            "x": sim.back(state.x).tolist(), "phi": sim.back_weights(state.phi).tolist(),
            "y": sim.back(state.y).tolist(), "psi": sim.back_weights(state.psi).tolist(),
        },
        "diagnostics": [_scaled_diag(h.as_dict(), sim) for h in history],
    }
    if failure:
        doc["failure"] = failure
    return doc


def _scaled_diag(d, sim):
    for k in ("barycenter_residual_x", "barycenter_residual_y", "site_displacement"):
        v = d[k] / sim.scale
        d[k] = v if math.isfinite(v) else None
    return d


def cmd_symmetrize(cfg, args):
    mu0, nu0 = _load_mesh(args.mu), _load_mesh(args.nu)
    gap = abs(mu0.total_mass - nu0.total_mass) / mu0.total_mass
    if gap > 1e-9:
        raise CliError(EXIT_DATA, "MassMismatch", f"total masses differ by {gap:.3g} (relative)")
    sim = Similarity.for_meshes(mu0, nu0)
    mu, nu = sim.mesh(mu0), sim.mesh(nu0)
    out = cfg.output or "."
    failure = None
    try:
        state, history = run(mu, nu, cfg.n_sites, outer_iters=cfg.outer_iters, seed=cfg.seed, tol=cfg.tol,
                             max_iter=args.max_iter, mode=cfg.mode, method=args.solver)
    except CouplingError as exc:
        if exc.state is None or exc.state.iteration == 0:
            raise CliError(EXIT_CONVERGENCE, "CouplingError", str(exc)) from exc
        state, history = exc.state, []
        failure = {"iteration": exc.iteration, "message": str(exc)}
    if not history:
        history = [diagnostics(state)]
    _emit(cfg, os.path.join(out, "checkpoint.json"), _checkpoint(cfg, sim, mu0, nu0, state, history, failure))
    _emit(cfg, os.path.join(out, "diagram_mu.json"), {"kind": "diagram", "diagram": _dump(state.rpd_mu, sim)})
    _emit(cfg, os.path.join(out, "diagram_nu.json"), {"kind": "diagram", "diagram": _dump(state.rpd_nu, sim)})
    log = "".join(json.dumps(_scaled_diag(h.as_dict(), sim), sort_keys=True) + "\n" for h in history)
    _write(os.path.join(out, "diagnostics.jsonl"), log)
    if failure:
        raise CliError(EXIT_CONVERGENCE, "CouplingError", failure["message"])


def load_checkpoint(path):
    """Rebuild ``(similarity, rpd_mu, rpd_nu)`` from a checkpoint file."""
    doc = _read_json(path)
    try:
        if doc.get("format_version") != FORMAT_VERSION or doc.get("kind") != "checkpoint":
            raise CliError(EXIT_DATA, "FormatError", f"{path}: not a version {FORMAT_VERSION} checkpoint")
        sim = Similarity.from_dict(doc["normalization"])
        mu = sim.mesh(parse_mesh(doc["mu_mesh"]))
        nu = sim.mesh(parse_mesh(doc["nu_mesh"]))
        st = doc["state"]
        rpd_mu = build_rpd(mu, np.array(st["pair_mu_sites"]), np.array(st["pair_mu_weights"]))
        rpd_nu = build_rpd(nu, np.array(st["pair_nu_sites"]), np.array(st["pair_nu_weights"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError(EXIT_DATA, "FormatError", f"{path}: malformed checkpoint ({exc})") from exc
    return sim, rpd_mu, rpd_nu


def cmd_morph(cfg, args):
    sim, rpd_mu, rpd_nu = load_checkpoint(args.checkpoint)
    try:
        cm = coupled_morph(rpd_mu, rpd_nu)
    except EmptyCellError as exc:
        raise CliError(EXIT_DATA, "EmptyCellError", str(exc)) from exc
    out = cfg.output or "."
    k = cfg.frames
    ts = [0.0] if k == 1 else [i / (k - 1) for i in range(k)]
    frames = [sim.back_frame(cm.frame(t)) for t in ts]
    dens = [c.density for f in frames for c in f.cells if math.isfinite(c.density)]
    bounds = np.concatenate([np.concatenate(f.polygons()) for f in frames if f.polygons()])
    style = {"density_scale": max(dens) if dens else 1.0,
             "bounds": (bounds.min(axis=0).tolist(), bounds.max(axis=0).tolist())}
    splits = [
        {**s, "position": sim.back(s["position"]).tolist()}
        for s in split_summary(cm.corr, cm.A, cm.B)
    ]
    for i, f in enumerate(frames):
        _write(os.path.join(out, f"frame_{i}.svg"), _svg_with_config(frame_to_svg(f, style), cfg))
        _emit(cfg, os.path.join(out, f"frame_{i}.json"), {"kind": "frame", **f.metadata(splits)})
    _emit(cfg, os.path.join(out, "morph.json"), {"kind": "morph", "ts": ts, "stats": cm.stats(), "splits": splits})


def _svg_with_config(svg, cfg):
    note = json.dumps({"format_version": FORMAT_VERSION, "config": asdict(cfg)}, sort_keys=True)
    note = note.replace("--", "-\\u002d")
    head, rest = svg.split("\n", 1)
    return f"{head}\n<!-- {note} -->\n{rest}"


def _frame_from_metadata(path):
    doc = _read_json(path)
    try:
        cells = [
            FrameCell(c["index"], [np.array(l, dtype=float).reshape(-1, 2) for l in c["loops"]], c["area"],
                      math.inf if c["density"] is None else c["density"])
            for c in doc["cells"]
        ]
        return MorphFrame(float(doc["t"]), cells)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, "FormatError", f"{path}: malformed frame metadata ({exc})") from exc


def cmd_hausdorff(cfg, args):
    a, b = _frame_from_metadata(args.a), _frame_from_metadata(args.b)
    try:
        d = hausdorff(a, b, cfg.samples, cfg.seed)
    except (EmptyFrameError, ValueError) as exc:
        raise CliError(EXIT_DATA, type(exc).__name__, str(exc)) from exc
    _emit(cfg, cfg.output, {"kind": "hausdorff", "distance": d})


def _scenarios_from_file(path, cfg):
    """Scenario file: JSON ``{"scenarios": [...]}``; each entry names a builtin or two mesh paths."""
    doc = _read_json(path) if path else {"scenarios": [{"builtin": "one_disk_to_two_disks"},
                                                      {"builtin": "two_disks_to_two_disks"}]}
    entries = doc.get("scenarios") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise CliError(EXIT_DATA, "FormatError", "scenario file needs a 'scenarios' list")
    base = os.path.dirname(path) if path else "."
    out = []
    for e in entries:
        try:
            common = {"n": int(e.get("n", cfg.n_sites)), "n_ref": int(e.get("n_ref", 5000)),
                      "seeds": tuple(int(s) for s in e.get("seeds", (cfg.seed,))),
                      "outer_iters": int(e.get("outer_iters", cfg.outer_iters)),
                      "samples": int(e.get("samples", cfg.samples))}
            if "builtin" in e:
                known = {s.name: s for s in builtin_scenarios(**common)}
                if e["builtin"] not in known:
                    raise CliError(EXIT_DATA, "FormatError", f"unknown builtin scenario {e['builtin']!r}")
                out.append(known[e["builtin"]])
            else:
                mu0 = _load_mesh(os.path.join(base, e["mu"]))
                nu0 = _load_mesh(os.path.join(base, e["nu"]))
                sim = Similarity.for_meshes(mu0, nu0)
                out.append(Scenario(e.get("name", f"{e['mu']}->{e['nu']}"), sim.mesh(mu0), sim.mesh(nu0),
                                    disconnected=bool(e.get("disconnected", False)), **common))
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            if isinstance(exc, CliError):
                raise
            raise CliError(EXIT_DATA, "FormatError", f"bad scenario entry {e!r}: {exc}") from exc
    return out


def cmd_bench(cfg, args):
    scenarios = _scenarios_from_file(args.scenarios, cfg)
    report = run_benchmark(scenarios, reference_seed=cfg.seed, tol=cfg.tol)
    head = "# " + json.dumps({"format_version": FORMAT_VERSION, "config": asdict(cfg),
                              "units": "raw distances in the unit-diameter normalized domain",
                              "reference_scale": REFERENCE_VALUES}, sort_keys=True) + "\n"
    csv_text = head + report.to_csv()
    if cfg.output:
        _write(cfg.output, csv_text)
        base = os.path.splitext(cfg.output)[0]
        _write(base + ".txt", report.to_text())
    else:
        sys.stdout.write(csv_text)
    sys.stderr.write(report.to_text())


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "UsageError", message)


def build_parser():
    p = _Parser(prog="coupledot", description="Symmetrized semi-discrete optimal transport on 2-d meshes.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol", type=float, default=1e-6)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", default="", help="output file or directory")

    def solver(sp):
        sp.add_argument("--solver", choices=("lbfgs", "newton"), default="lbfgs", help="weight solver")

    s = sub.add_parser("solve", help="mesh + sites -> weights JSON")
    s.add_argument("mesh")
    s.add_argument("sites")
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--diagram", action="store_true", help="include the diagram dump")
    solver(s)
    common(s)

    s = sub.add_parser("symmetrize", help="two meshes -> checkpoint and diagram dumps")
    s.add_argument("mu")
    s.add_argument("nu")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--mode", choices=("area", "mass"), default="area")
    s.add_argument("--max-iter", type=int, default=1000)
    solver(s)
    common(s)

    s = sub.add_parser("morph", help="checkpoint -> SVG frames and metadata")
    s.add_argument("checkpoint")
    s.add_argument("--frames", type=int, default=5)
    common(s)

    s = sub.add_parser("hausdorff", help="distance between two frame metadata files")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--samples", type=int, default=20000)
    common(s)

    s = sub.add_parser("bench", help="scenario file -> CSV table")
    s.add_argument("scenarios", nargs="?", default=None)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--samples", type=int, default=20000)
    common(s)
    return p


def _config(args):
    names = {"solve": ("mesh", "sites"), "symmetrize": ("mu", "nu"), "morph": ("checkpoint",),
             "hausdorff": ("a", "b"), "bench": ("scenarios",)}[args.subcommand]
    cfg = RunConfig(
        subcommand=args.subcommand,
        inputs=[getattr(args, k) for k in names if getattr(args, k) is not None],
        n_sites=getattr(args, "n", 200),
        outer_iters=getattr(args, "iters", 100),
        seed=args.seed,
        tol=args.tol,
        frames=getattr(args, "frames", 5),
        output=args.out,
        mode=getattr(args, "mode", "area"),
        samples=getattr(args, "samples", 20000),
        threads=args.threads,
    )
    if hasattr(args, "max_iter"):
        cfg.extra["max_iter"] = args.max_iter
        cfg.extra["solver"] = args.solver
        if args.max_iter < 1:
            raise CliError(EXIT_USAGE, "UsageError", "--max-iter must be >= 1")
    cfg.validate()
    return cfg


def _set_threads(n):
    try:
        import numba

        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


COMMANDS = {"solve": cmd_solve, "symmetrize": cmd_symmetrize, "morph": cmd_morph, "hausdorff": cmd_hausdorff,
            "bench": cmd_bench}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        _set_threads(cfg.threads)
        COMMANDS[args.subcommand](cfg, args)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc), "exit_code": exc.code}) + "\n")
        return exc.code
    except MeshFormatError as exc:
        sys.stderr.write(json.dumps({"error": "MeshFormatError", "message": str(exc), "exit_code": EXIT_DATA}) + "\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
