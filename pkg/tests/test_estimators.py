import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from carpetks.carpet import level_cells
from carpetks.estimators import CellAverager, PHarmonicSolver, RhoBetaEstimator
from carpetks.functions import coordinate_function
from carpetks.graph import build_level_graph
from carpetks.penergy import capacity_boundary, p_capacity


def test_params_and_clone():
    est = PHarmonicSolver(p=3.0, method="damped-newton")
    assert est.get_params()["p"] == 3.0
    other = clone(est).set_params(p=4.0)
    assert other.p == 4.0 and est.p == 3.0
    assert clone(RhoBetaEstimator(levels=(2, 3))).levels == (2, 3)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PHarmonicSolver().predict()
    with pytest.raises(NotFittedError):
        CellAverager().transform(None)


def test_solver_matches_function(carpet):
    g = build_level_graph(carpet, 3)
    b = capacity_boundary(carpet, 3)
    est = PHarmonicSolver(p=3.0).fit(g, b)
    ref = p_capacity(carpet, 3, 3.0)
    np.testing.assert_allclose(est.predict(), ref.solution.values, atol=1e-12)
    assert est.energy_ == pytest.approx(ref.capacity, rel=1e-12)
    assert est.converged_
    assert est.predict([0, 1]).shape == (2,)


def test_rho_estimator(carpet):
    est = RhoBetaEstimator(levels=(2, 3, 4)).fit(carpet)
    assert est.supercritical_ and est.k_ == 4
    assert len(est.capacities_) == 3 and all(est.converged_)
    assert est.beta_hat_ > carpet.alpha


def test_cell_averager(carpet):
    q = 3
    m = CellAverager(level=2, quad_depth=q).fit(carpet).transform(coordinate_function(carpet, 1))
    assert m.level == 2
    # descendant anchors are symmetric about the cell centre minus half a node spacing
    cells = level_cells(carpet, 2)
    np.testing.assert_allclose(m.values, (cells[:, 0] + 0.5) / 9 - 0.5 / (9 * 3**q), atol=1e-13)
