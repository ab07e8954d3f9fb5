import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from coupledot.density_mesh import disk_mesh, normalized, square_mesh
from coupledot.estimators import SemiDiscreteTransport, SymmetrizedTransport, check_sites
from coupledot.morph import MorphFrame

TWO = np.array([[0.25, 0.5], [0.75, 0.5]])


def test_get_params_and_clone():
    est = SemiDiscreteTransport(tol=1e-8, max_iter=50)
    assert est.get_params() == {"tol": 1e-8, "max_iter": 50, "memory": 10}
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est
    assert SymmetrizedTransport(n_sites=7).get_params()["n_sites"] == 7


def test_transport_fit_predict():
    est = SemiDiscreteTransport().fit(square_mesh(), TWO, target_masses=[0.75, 0.25])
    assert est.report_.converged
    assert est.weights_[0] - est.weights_[1] == pytest.approx(0.25, abs=1e-6)
    labels = est.predict([[0.7, 0.5], [0.8, 0.5], [3.0, 3.0]])
    assert labels.tolist() == [0, 1, -1]
    np.testing.assert_allclose(est.barycenters_[0], [0.375, 0.5], rtol=1e-6)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SemiDiscreteTransport().predict([[0.5, 0.5]])
    with pytest.raises(NotFittedError):
        SymmetrizedTransport().transform(0.5)


def test_validation():
    with pytest.raises(ValueError):
        check_sites(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        check_sites([[0.0, np.nan]])
    with pytest.raises(TypeError):
        SemiDiscreteTransport().fit("mesh", TWO)
    with pytest.raises(ValueError):
        SymmetrizedTransport(n_sites=0).fit(square_mesh(), square_mesh())


def test_symmetrized_transform():
    mu = normalized(disk_mesh((0.3, 0.5), 0.2, 24))
    nu = normalized(disk_mesh((0.7, 0.5), 0.2, 24))
    est = SymmetrizedTransport(n_sites=10, outer_iters=5).fit(mu, nu)
    f = est.transform(0.5)
    assert isinstance(f, MorphFrame) and f.t == 0.5
    frames = est.transform([0.0, 1.0])
    assert [g.t for g in frames] == [0.0, 1.0]
    assert est.diagnostics_.iteration == est.state_.iteration
