"""scikit-learn style wrappers around the solver and the scaling estimate."""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .functions import CellFunction
from .penergy import SolverConfig, cell_average, estimate_rho_beta, min_k, p_harmonic_solve


class PHarmonicSolver(BaseEstimator):
    """p-harmonic extension of boundary data on a graph.

    ``fit(graph, boundary)`` solves; ``predict(indices)`` reads values back.
    """

    def __init__(self, p=2.0, tol=1e-12, grad_tol=1e-8, max_iter=200, method="irls", on_failure="raise"):
        self.p = p
        self.tol = tol
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.method = method
        self.on_failure = on_failure

    def _config(self) -> SolverConfig:
        return SolverConfig(
            p=self.p, tol=self.tol, grad_tol=self.grad_tol, max_iter=self.max_iter, method=self.method, on_failure=self.on_failure
        )

    def fit(self, graph, boundary):
        res = p_harmonic_solve(graph, boundary, self._config())
        self.result_ = res
        self.values_ = res.values
        self.energy_ = res.energy
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        return self

    def predict(self, indices=None):
        check_is_fitted(self, "values_")
        return self.values_ if indices is None else self.values_[indices]


class RhoBetaEstimator(BaseEstimator):
    """Capacity-ratio estimate of the rescaling factor and walk exponent.

    ``fit(spec)`` sets ``rho_hat_``, ``beta_hat_``, ``capacities_``,
    ``ratios_``, ``supercritical_`` and ``k_`` (the minimal series index).
    """

    def __init__(self, p=2.0, levels=(3, 4, 5), tol=1e-12, max_iter=200, on_failure="raise"):
        self.p = p
        self.levels = levels
        self.tol = tol
        self.max_iter = max_iter
        self.on_failure = on_failure

    def fit(self, spec, y=None):
        cfg = SolverConfig(p=self.p, tol=self.tol, max_iter=self.max_iter, on_failure=self.on_failure)
        est = estimate_rho_beta(spec, self.p, self.levels, cfg)
        self.estimate_ = est
        self.rho_hat_ = est.rho_hat
        self.beta_hat_ = est.beta_hat
        self.capacities_ = est.capacities
        self.ratios_ = est.ratios
        self.supercritical_ = est.supercritical
        self.converged_ = est.converged
        self.k_ = min_k(self.p, spec.a, spec.alpha, est.beta_hat) if est.beta_hat > spec.alpha else None
        return self


class CellAverager(BaseEstimator, TransformerMixin):
    """``f -> M_n f``; point functions use anchor quadrature ``quad_depth`` levels down."""

    def __init__(self, level=1, quad_depth=3):
        self.level = level
        self.quad_depth = quad_depth

    def fit(self, spec, y=None):
        self.spec_ = spec
        return self

    def transform(self, f) -> CellFunction:
        check_is_fitted(self, "spec_")
        depth = None if isinstance(f, CellFunction) else self.quad_depth
        return cell_average(f, self.level, spec=self.spec_, quad_depth=depth)
