"""Weights of a semi-discrete transport map from a density mesh to point sites.

The weights are the stationary point of the concave Kantorovich functional

    Phi(w) = sum_i  int_{cell_i(w)} (|x - x_i|^2 - w_i) drho  +  sum_i p_i w_i

whose gradient is ``p_i - mass(cell_i)``.  We run L-BFGS on ``-Phi``.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, diags
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .power_diagram import build_rpd

logger = logging.getLogger(__name__)


@dataclass
class SolveReport:
    iterations: int
    final_gradient_norm: float
    max_relative_mass_error: float
    empty_cell_indices: list
    converged: bool
    evaluations: int = 0
    history: list = field(default_factory=list, repr=False)
    # accepted step length per iteration and trials rejected for emptying a cell
    steps: list = field(default_factory=list, repr=False)
    empty_rejections: int = 0

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_gradient_norm": self.final_gradient_norm,
            "max_relative_mass_error": self.max_relative_mass_error,
            "empty_cell_indices": [int(i) for i in self.empty_cell_indices],
            "converged": self.converged,
            "evaluations": self.evaluations,
        }


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


def _targets(mesh, sites, target_masses):
    n = len(sites)
    if target_masses is None:
        return np.full(n, mesh.total_mass / n)
    p = np.asarray(target_masses, dtype=float).reshape(-1)
    if np.isscalar(target_masses) or p.size == 1:
        p = np.full(n, float(p[0]))
    return p


def evaluate_functional(mesh, sites, weights, target_masses=None, rpd=None):
    """Value and gradient of the Kantorovich functional (squared-distance cost)."""
    if rpd is None:
        rpd = build_rpd(mesh, sites, weights)
    w = rpd.weights
    p = _targets(mesh, rpd.sites, target_masses)
    value = float(rpd.costs.sum() - w @ rpd.masses + p @ w)
    return value, p - rpd.masses


def solve_weights(
    mesh,
    sites,
    target_masses=None,
    init=None,
    tol=1e-6,
    max_iter=1000,
    memory=10,
    max_halvings=30,
    armijo=1e-4,
    method="lbfgs",
):
    """Find weights whose restricted power cells carry ``target_masses``.

    Stops once ``max|mass_i - p_i| <= tol * min(p)``.  Returns the weights
    (zero mean) and a :class:`SolveReport`; the final diagram is attached to
    the report as ``report.diagram``.

    ``init`` is a weight vector, ``None`` (zero weights, i.e. the Voronoi
    diagram), ``"moments"`` (see :func:`moment_matched_weights`) or
    ``"multiscale"`` (see :func:`multiscale_weights`).
    ``method="lbfgs"`` runs L-BFGS whose initial inverse Hessian is the
    inverse diagonal of the Hessian of the current diagram.
    ``method="newton"`` drops the memory and applies the inverse of the whole
    sparse Hessian instead, i.e. damped Newton steps under the same line
    search; far fewer iterations, each costing a sparse factorization.
    """
    if method not in _PRECONDITIONERS:
        raise ValueError(f"unknown method {method!r}")
    make_scale = _PRECONDITIONERS[method]
    if method == "newton":
        memory = 0
    p = _targets(mesh, np.asarray(getattr(sites, "positions", sites)).reshape(-1, 2), target_masses)
    n = len(p)
    if np.any(p <= 0):
        raise ValueError("target masses must be positive")
    total = mesh.total_mass
    if abs(p.sum() - total) > 1e-9 * total:
        raise ValueError(f"target masses sum to {p.sum():.12g}, mesh mass is {total:.12g}")
    if isinstance(init, str):
        if init == "moments":
            init = moment_matched_weights(mesh, sites, p)
        elif init == "multiscale":
            init = multiscale_weights(mesh, sites, p, method=method, max_iter=max_iter)
        else:
            raise ValueError(f"unknown init {init!r}")
    w = np.zeros(n) if init is None else np.array(init, dtype=float).reshape(-1)
    if len(w) != n:
        raise ValueError("init has the wrong length")

    gtol = tol * p.min()
    # -Phi is minimized, so its gradient is mass - target
    rpd = build_rpd(mesh, sites, w)
    f, g = _neg_phi(rpd, p)
    evals = 1
    s_hist = deque(maxlen=memory)
    y_hist = deque(maxlen=memory)
    # fallback curvature: cell masses move about 2*rho per unit weight
    gamma0 = 0.5 * float(mesh.areas.sum()) / total
    scale = make_scale(rpd, gamma0)
    history = [-f]
    it = 0
    empty_now = set(np.flatnonzero(rpd.masses <= 0).tolist())
    steps = []
    n_empty_rej = 0
    # cap on the largest weight change of a first trial, adapted per iteration
    radius = float(mesh.areas.sum()) / n
    while np.abs(g).max() > gtol and it < max_iter:
        d = -_two_loop(g, s_hist, y_hist, scale)
        slope = g @ d
        if s_hist and slope < 0:
            # pairs gathered while cells were empty can blow the direction up
            d0 = -_two_loop(g, (), (), scale)
            if np.abs(d).max() > 100.0 * np.abs(d0).max():
                s_hist.clear()
                y_hist.clear()
                d, slope = d0, g @ d0
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -_two_loop(g, (), (), scale)
            slope = g @ d
        dmax = float(np.abs(d).max())
        logger.debug("iteration %d: |d| %.3g, radius %.3g, memory %d, |g| %.3g", it, dmax, radius, len(s_hist),
                     float(np.abs(g).max()))
        alpha = min(1.0, radius / dmax) if dmax > 0 else 1.0
        alpha0 = alpha
        accepted = None
        best = None
        halvings = 0
        armijo_failed = False
        while halvings <= max_halvings:
            w_try = w + alpha * d
            rpd_try = build_rpd(mesh, sites, w_try, check=False)
            evals += 1
            f_try, g_try = _neg_phi(rpd_try, p)
            newly_empty = set(np.flatnonzero(rpd_try.masses <= 0).tolist()) - empty_now
            df = _decrease(f, f_try, g, g_try, alpha * d)
            if not newly_empty:
                if df <= armijo * alpha * slope:
                    accepted = (w_try, rpd_try, f_try, g_try, alpha)
                    break
                armijo_failed = True
                if df < 0 and (best is None or f_try < best[2]):
                    best = (w_try, rpd_try, f_try, g_try, alpha)
            else:
                n_empty_rej += 1
            alpha *= 0.5
            halvings += 1
        if accepted is None:
            accepted = best
        if accepted is None:
            if s_hist:
                # stale curvature pairs: restart from the preconditioned gradient
                logger.debug("line search failed at iteration %d, resetting memory", it)
                s_hist.clear()
                y_hist.clear()
                continue
            logger.debug("line search failed at iteration %d", it)
            break
        w_new, rpd, f_new, g_new, step = accepted
        steps.append(step)
        s = w_new - w
        moved = float(np.abs(s).max())
        # only a failed decrease shrinks the radius; steps cut short to keep
        # cells alive say nothing about how far the model can be trusted
        if step == alpha0:
            radius = max(radius, 2.0 * moved)
        elif armijo_failed:
            radius = max(moved, 1e-300)
        yv = g_new - g
        sy = s @ yv
        if step < alpha0 * 2.0**-10:
            # a heavily shortened step says little about curvature and the
            # stored pairs are steering badly: start the memory afresh
            s_hist.clear()
            y_hist.clear()
        elif sy > 1e-300:
            s_hist.append(s)
            y_hist.append(yv)
        scale = make_scale(rpd, gamma0)
        w, f, g = w_new, f_new, g_new
        empty_now = set(np.flatnonzero(rpd.masses <= 0).tolist())
        history.append(-f)
        it += 1

    w_out = w - w.mean()
    err = np.abs(rpd.masses - p) / p
    empty = np.flatnonzero(rpd.masses <= 0).tolist()
    converged = bool(np.abs(g).max() <= gtol) and not empty
    report = SolveReport(
        iterations=it,
        final_gradient_norm=float(np.abs(g).max()),
        max_relative_mass_error=float(err.max()),
        empty_cell_indices=empty,
        converged=converged,
        evaluations=evals,
        history=history,
        steps=steps,
        empty_rejections=n_empty_rej,
    )
    # gauge shift leaves every cell unchanged
    rpd.weights = w_out
    report.diagram = rpd
    if not converged:
        logger.warning(
            "weight solve stopped after %d iterations, max relative mass error %.3g", it, report.max_relative_mass_error
        )
    return w_out, report


def moment_matched_weights(mesh, sites, target_masses=None):
    """Weights whose power diagram is the Voronoi diagram of ``a * x_i + b``.

    ``a`` and ``b`` match the mean and spread of the sites to those of the
    mesh measure, so that few cells start empty.
    """
    x = np.asarray(getattr(sites, "positions", sites), dtype=float).reshape(-1, 2)
    p = _targets(mesh, x, target_masses)
    m = mesh.total_mass
    one = build_rpd(mesh, x[:1], np.zeros(1))
    mean_mu = one.first_moments[0] / m
    spread_mu = np.sqrt(max(one.costs[0] / m - float(np.sum((x[0] - mean_mu) ** 2)), 0.0))
    mean_x = p @ x / p.sum()
    spread_x = np.sqrt(p @ np.sum((x - mean_x) ** 2, axis=1) / p.sum())
    if not spread_x > 0 or not spread_mu > 0:
        return np.zeros(len(x))
    a = spread_mu / spread_x
    b = mean_mu - a * mean_x
    # |x - x_i|^2 - w_i differs from |x - (a x_i + b)|^2 / a by a term free of i
    return (1.0 - a) * np.sum(x * x, axis=1) - 2.0 * x @ b


def multiscale_weights(mesh, sites, target_masses=None, ratio=4, base=100, coarse_tol=1e-3, **solver):
    """Coarse-to-fine starting weights.

    The first ``n // ratio`` sites are solved for the masses of their nearest
    neighbour clusters (recursively, down to ``base`` sites started from
    :func:`moment_matched_weights`), and every site inherits the weight of
    its cluster, tilted by the coarse displacement.  Unlike the moment start this keeps cells populated when
    the site cloud and the mesh support have different shapes.
    """
    x = np.asarray(getattr(sites, "positions", sites), dtype=float).reshape(-1, 2)
    p = _targets(mesh, x, target_masses)
    if len(x) <= base:
        return moment_matched_weights(mesh, x, p)
    coarse = x[: max(len(x) // ratio, 1)]
    owner = cKDTree(coarse).query(x)[1]
    pc = np.bincount(owner, weights=p, minlength=len(coarse))
    init = "multiscale" if len(coarse) > base else "moments"
    wc, rep = solve_weights(mesh, coarse, pc, init=init, tol=coarse_tol, **solver)
    # first-order correction: a cluster's members split its cell like the
    # Voronoi diagram of the members translated onto the cell barycenter
    rpd = rep.diagram
    moved = np.where(rpd.masses[:, None] > 0, rpd.first_moments / np.maximum(rpd.masses, 1e-300)[:, None] - coarse, 0.0)
    t = moved[owner]
    return wc[owner] - 2.0 * np.sum((x - coarse[owner]) * t, axis=1)


def _neg_phi(rpd, p):
    w = rpd.weights
    return -float(rpd.costs.sum() - w @ rpd.masses + p @ w), rpd.masses - p


def _decrease(f0, f1, g0, g1, step):
    """``f1 - f0``, falling back to the trapezoid estimate below rounding noise."""
    direct = f1 - f0
    noise = 4096 * np.finfo(float).eps * max(abs(f0), abs(f1))
    if abs(direct) > noise:
        return direct
    return 0.5 * float((g0 + g1) @ step)


def _fluxes(rpd):
    """``(i, j, flux)`` per bisector edge: boundary length times density over 2|x_i - x_j|."""
    v = rpd.vertices
    lab = rpd.labels
    nxt = np.arange(1, len(v) + 1)
    nxt[rpd.piece_start[1:] - 1] = rpd.piece_start[:-1]
    counts = np.diff(rpd.piece_start)
    owner = np.repeat(rpd.piece_site, counts)
    tri = np.repeat(rpd.piece_tri, counts)
    sel = lab >= 0
    a = v[sel]
    b = v[nxt[sel]]
    grad, off = rpd.mesh.density_coefficients
    t = tri[sel]
    rho_mid = np.einsum("ij,ij->i", 0.5 * (a + b), grad[t]) + off[t]
    i = owner[sel]
    j = lab[sel]
    dist = np.hypot(*(rpd.sites[i] - rpd.sites[j]).T)
    return i, j, np.hypot(*(b - a).T) * rho_mid / (2.0 * dist)


def hessian_diagonal(rpd):
    """Diagonal of the Hessian of -Phi."""
    i, _, flux = _fluxes(rpd)
    return np.bincount(i, flux, minlength=len(rpd.sites))


def hessian(rpd):
    """Sparse Hessian of -Phi, a weighted graph Laplacian over adjacent cells."""
    n = len(rpd.sites)
    i, j, flux = _fluxes(rpd)
    off = coo_matrix((-flux, (i, j)), shape=(n, n)).tocsr()
    return off + diags(np.bincount(i, flux, minlength=n))


def _inverse_diagonal(rpd, fallback):
    h = hessian_diagonal(rpd)
    out = np.full(len(h), fallback)
    ok = h > 0
    out[ok] = 1.0 / h[ok]
    return out


def _inverse_hessian(rpd, fallback, floor=0.25):
    """Solver for the regularized Hessian.

    Diagonal entries are raised to at least ``floor / fallback`` so that
    nearly empty cells do not receive huge weight changes.
    """
    h = hessian(rpd).tocsc()
    d = h.diagonal()
    reg = np.maximum(floor / fallback - d, 0.0)
    # pins the constant null space (the gauge) without touching real curvature
    reg += 1e-6 * max(float(d.mean()), 1.0 / fallback)
    return splu((h + diags(reg)).tocsc()).solve


_PRECONDITIONERS = {"newton": _inverse_hessian, "lbfgs": _inverse_diagonal}


def _two_loop(g, s_hist, y_hist, gamma):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    r = gamma(q) if callable(gamma) else gamma * q
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ r)
        r += s * (a - b)
    return r
