"""scikit-learn style wrappers around the transport solvers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .density_mesh import DensityMesh, SiteSet
from .morph import coupled_morph
from .sdot import solve_weights
from .symmetrizer import diagnostics, run


def check_mesh(mesh, name="mesh"):
    if not isinstance(mesh, DensityMesh):
        raise TypeError(f"{name} must be a DensityMesh, got {type(mesh).__name__}")
    return mesh


def check_sites(sites):
    """Validate an (n, 2) array of finite site positions."""
    if isinstance(sites, SiteSet):
        sites = sites.positions
    arr = check_array(sites, dtype=np.float64, ensure_min_samples=1)
    if arr.shape[1] != 2:
        raise ValueError(f"sites must have 2 columns, got {arr.shape[1]}")
    return arr


def check_points(points):
    arr = check_array(points, dtype=np.float64)
    if arr.shape[1] != 2:
        raise ValueError(f"points must have 2 columns, got {arr.shape[1]}")
    return arr


class SemiDiscreteTransport(BaseEstimator):
    """Optimal transport from a mesh density onto a point set.

    ``fit(mesh, sites)`` finds the power-diagram weights; ``predict(points)``
    returns the index of the site each point is sent to (``-1`` outside the
    mesh).
    """

    def __init__(self, tol=1e-6, max_iter=1000, memory=10):
        self.tol = tol
        self.max_iter = max_iter
        self.memory = memory

    def fit(self, mesh, sites, target_masses=None, init=None):
        check_mesh(mesh)
        x = check_sites(sites)
        self.weights_, self.report_ = solve_weights(
            mesh, x, target_masses=target_masses, init=init, tol=self.tol, max_iter=self.max_iter, memory=self.memory
        )
        self.diagram_ = self.report_.diagram
        self.sites_ = x
        self.n_sites_ = len(x)
        return self

    def predict(self, points):
        check_is_fitted(self, "diagram_")
        return self.diagram_.locate(check_points(points))

    @property
    def barycenters_(self):
        check_is_fitted(self, "diagram_")
        return self.diagram_.barycenters()


class SymmetrizedTransport(BaseEstimator, TransformerMixin):
    """Coupled transport between two mesh densities.

    ``fit(mu, nu)`` runs the alternating fixed point; ``transform(t)`` returns
    the interpolated frame(s) at ``t`` (a scalar or a sequence).
    """

    def __init__(self, n_sites=200, outer_iters=100, seed=0, tol=1e-6, max_iter=1000, mode="area"):
        self.n_sites = n_sites
        self.outer_iters = outer_iters
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter
        self.mode = mode

    def fit(self, mu, nu=None):
        check_mesh(mu, "mu")
        check_mesh(nu, "nu")
        if int(self.n_sites) < 1 or int(self.outer_iters) < 1:
            raise ValueError("n_sites and outer_iters must be >= 1")
        self.state_, self.history_ = run(
            mu, nu, int(self.n_sites), outer_iters=int(self.outer_iters), seed=self.seed,
            tol=self.tol, max_iter=self.max_iter, mode=self.mode,
        )
        self.morph_ = coupled_morph(self.state_.rpd_mu, self.state_.rpd_nu)
        self.diagnostics_ = diagnostics(self.state_)
        return self

    def transform(self, t):
        check_is_fitted(self, "morph_")
        if np.ndim(t) == 0:
            return self.morph_.frame(float(t))
        return [self.morph_.frame(float(s)) for s in np.asarray(t, dtype=float).ravel()]

    def fit_transform(self, mu, nu=None, t=0.5):
        return self.fit(mu, nu).transform(t)
