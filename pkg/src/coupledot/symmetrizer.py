"""Alternating fixed point coupling two semi-discrete transport maps.

Sites ``x`` live on the support of ``nu`` and own power cells on ``mu``;
sites ``y`` live on ``mu`` and own cells on ``nu``.  One iteration solves the
weights for ``mu -> x``, moves ``y`` to the mu-barycenters of those cells,
solves ``nu -> y`` and moves ``x`` to the nu-barycenters.  Cell ``i`` of the
two diagrams then carries the same mass and, at the fixed point, the same
shape up to transport.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .density_mesh import DensityMesh, SiteSet, check_mass_balance, make_rng, sample_sites
from .power_diagram import EmptyCellError, build_rpd
from .sdot import solve_weights

logger = logging.getLogger(__name__)


@dataclass
class CoupledState:
    """Sites and weights of both maps plus the last solved pair of diagrams.

    ``rpd_mu`` holds the mu-cells of the sites ``x`` had *before* the last
    update; ``rpd_nu`` holds the nu-cells of the current ``y``.  Together they
    form the coupled pair used for interpolation.
    """

    mu: DensityMesh
    nu: DensityMesh
    x: np.ndarray
    phi: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    rpd_mu: object
    rpd_nu: object
    iteration: int = 0
    # solve reports of the last iteration (mu, nu)
    reports: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return len(self.x)

    @property
    def x_sites(self):
        return SiteSet(self.x, self.mu.total_mass / self.n)

    @property
    def y_sites(self):
        return SiteSet(self.y, self.nu.total_mass / self.n)


@dataclass
class CouplingDiagnostics:
    iteration: int
    barycenter_residual_x: float
    barycenter_residual_y: float
    site_displacement: float
    overlap_suspects: list

    def as_dict(self):
        return {
            "iteration": self.iteration,
            "barycenter_residual_x": self.barycenter_residual_x,
            "barycenter_residual_y": self.barycenter_residual_y,
            "site_displacement": self.site_displacement,
            "overlap_suspects": [int(i) for i in self.overlap_suspects],
        }


class CouplingError(RuntimeError):
    """An embedded solve failed; ``state`` is the last consistent state."""

    def __init__(self, message, state, report=None, iteration=None):
        self.state = state
        self.report = report
        self.iteration = iteration
        super().__init__(message)


def init_coupling(mu, nu, n, seed=0, mode="area"):
    """Random sites on both supports (independent sub-seeds), zero weights."""
    if n < 1:
        raise ValueError("n must be >= 1")
    check_mass_balance(mu, nu)
    x = sample_sites(nu, n, rng=make_rng(seed, 0), mode=mode).positions
    y = sample_sites(mu, n, rng=make_rng(seed, 1), mode=mode).positions
    return state_from_sites(mu, nu, x, y)


def state_from_sites(mu, nu, x, y, phi=None, psi=None, iteration=0):
    x = np.array(x, dtype=float).reshape(-1, 2)
    y = np.array(y, dtype=float).reshape(-1, 2)
    if len(x) != len(y):
        raise ValueError("x and y must have the same number of sites")
    phi = np.zeros(len(x)) if phi is None else np.array(phi, dtype=float)
    psi = np.zeros(len(y)) if psi is None else np.array(psi, dtype=float)
    return CoupledState(mu, nu, x, phi, y, psi, build_rpd(mu, x, phi), build_rpd(nu, y, psi), iteration)


def _solve(mesh, sites, init, state, label, **solver):
    w, rep = solve_weights(mesh, sites, init=init, **solver)
    if not rep.converged:
        raise CouplingError(
            f"{label} solve did not converge at iteration {state.iteration + 1} "
            f"(max relative mass error {rep.max_relative_mass_error:.3g})",
            state,
            rep,
            state.iteration + 1,
        )
    return w, rep


def _barycenters(rpd, state, label):
    try:
        return rpd.barycenters()
    except EmptyCellError as exc:
        raise CouplingError(f"{label} cell {exc.index} is empty at iteration {state.iteration + 1}", state, None,
                            state.iteration + 1) from exc


def iterate(state: CoupledState, tol=1e-6, max_iter=1000, **solver_options) -> CoupledState:
    """One outer step; warm-starts both solves from the state's weights.

    Extra keyword arguments go to :func:`solve_weights`.  Raises
    :class:`CouplingError` (carrying the unchanged input state) if a solve
    fails or a cell empties.
    """
    solver = {"tol": tol, "max_iter": max_iter, **solver_options}
    phi, rep_mu = _solve(state.mu, state.x, state.phi, state, "mu", **solver)
    y = _barycenters(rep_mu.diagram, state, "mu")
    psi, rep_nu = _solve(state.nu, y, state.psi, state, "nu", **solver)
    x = _barycenters(rep_nu.diagram, state, "nu")
    return replace(state, x=x, phi=phi, y=y, psi=psi, rpd_mu=rep_mu.diagram, rpd_nu=rep_nu.diagram,
                   iteration=state.iteration + 1, reports=[rep_mu, rep_nu])


def diagnostics(state: CoupledState, previous: CoupledState | None = None) -> CouplingDiagnostics:
    """Residuals of both barycenter constraints on the stored diagram pair."""
    a, b = state.rpd_mu, state.rpd_nu
    res_y = _max_dist(b.sites, a.first_moments, a.masses)
    res_x = _max_dist(a.sites, b.first_moments, b.masses)
    if previous is None:
        disp = 0.0
    else:
        disp = float(max(_max_norm(state.x - previous.x), _max_norm(state.y - previous.y)))
    suspects = sorted(set(overlap_suspects(a)) | set(overlap_suspects(b)))
    return CouplingDiagnostics(state.iteration, res_x, res_y, disp, suspects)


def _max_norm(d):
    return float(np.hypot(d[:, 0], d[:, 1]).max()) if len(d) else 0.0


def _max_dist(sites, first, mass):
    ok = mass > 0
    if not ok.all():
        return float("inf")
    return _max_norm(sites - first / mass[:, None])


def overlap_suspects(rpd):
    """Cells whose pieces do not form one edge-connected patch of the mesh."""
    n_p = rpd.n_pieces
    if n_p == 0:
        return []
    owner = np.repeat(np.arange(n_p), np.diff(rpd.piece_start))
    lab = rpd.labels
    on_edge = lab < -1
    edge = -lab[on_edge] - 2
    p = owner[on_edge]
    site = rpd.piece_site[p]
    # pieces of one cell touching the same mesh edge are glued across it
    key = edge * len(rpd.sites) + site
    order = np.lexsort((p, key))
    key, p = key[order], p[order]
    same = key[1:] == key[:-1]
    rows, cols = p[:-1][same], p[1:][same]
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_p, n_p))
    _, comp = connected_components(g, directed=False)
    pairs = np.unique(np.column_stack([rpd.piece_site, comp]), axis=0)
    n_comp = np.bincount(pairs[:, 0], minlength=len(rpd.sites))
    return np.flatnonzero(n_comp > 1).tolist()


def run(mu, nu, n, outer_iters=100, seed=0, tol=1e-6, max_iter=1000, mode="area", state=None, callback=None,
        **solver_options):
    """Iterate from a random start; returns ``(state, diagnostics_history)``.

    Stops early once no site moves more than ``1e-10`` times the larger
    domain diameter.
    """
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    if state is None:
        state = init_coupling(mu, nu, n, seed, mode)
    stop = 1e-10 * max(mu.diameter, nu.diameter)
    history = []
    for _ in range(outer_iters):
        prev = state
        state = iterate(prev, tol=tol, max_iter=max_iter, **solver_options)
        diag = diagnostics(state, prev)
        history.append(diag)
        logger.debug("iteration %d: residual x %.3g, displacement %.3g", state.iteration,
                     diag.barycenter_residual_x, diag.site_displacement)
        if callback is not None:
            callback(state, diag)
        if diag.site_displacement < stop:
            break
    return state, history
