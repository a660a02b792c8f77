"""Estimator-style wrappers around the planners.

``fit`` takes a :class:`ProblemInstance` rather than a data matrix; the
hyper-parameters follow scikit-learn conventions so ``get_params`` /
``set_params`` / ``clone`` work.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ProblemInstance, Tolerances
from .relax import SIMPLIFIED, VARIANTS
from .scp import ScpConfig, solve_scp
from .sequential import SequentialConfig, solve_sequential
from .validation import InvalidInstanceError


def _check_instance(instance):
    if not isinstance(instance, ProblemInstance):
        raise InvalidInstanceError(f"expected a ProblemInstance, got {type(instance).__name__}")
    return instance


class _Planner(BaseEstimator):
    def _store(self, report):
        self.report_ = report
        self.solution_ = report.final
        self.n_iter_ = report.num_iterations
        self.feasible_ = report.feasible
        self.termination_ = report.termination
        return self

    def fit_predict(self, instance, seed=None):
        return self.fit(instance, seed).solution_

    def score(self, instance=None):
        """Negative fuel cost of the fitted solution (higher is better)."""
        check_is_fitted(self, "solution_")
        return -self.solution_.objective if self.solution_ is not None else float("-inf")


class ParabolicPlanner(_Planner):
    """Sequential penalized relaxation."""

    def __init__(self, eta=50.0, rel_obj_tol=1e-4, max_iters=200, variant=SIMPLIFIED,
                 backend="clarabel", fix_obstacle_y=True, exempt_endpoints=True):
        self.eta = eta
        self.rel_obj_tol = rel_obj_tol
        self.max_iters = max_iters
        self.variant = variant
        self.backend = backend
        self.fix_obstacle_y = fix_obstacle_y
        self.exempt_endpoints = exempt_endpoints

    def fit(self, instance, seed=None):
        _check_instance(instance)
        if self.variant not in VARIANTS:
            raise InvalidInstanceError(f"unknown variant {self.variant!r}")
        config = SequentialConfig(eta=self.eta, rel_obj_tol=self.rel_obj_tol,
                                  max_iters=self.max_iters, variant=self.variant,
                                  tolerances=Tolerances(), fix_obstacle_y=self.fix_obstacle_y,
                                  exempt_endpoints=self.exempt_endpoints)
        return self._store(solve_sequential(instance, seed, config, self.backend))


class ScpPlanner(_Planner):
    """Linearized-collision baseline."""

    def __init__(self, rel_obj_tol=1e-4, max_iters=200, trust_region=None, backend="clarabel"):
        self.rel_obj_tol = rel_obj_tol
        self.max_iters = max_iters
        self.trust_region = trust_region
        self.backend = backend

    def fit(self, instance, seed=None):
        _check_instance(instance)
        config = ScpConfig(rel_obj_tol=self.rel_obj_tol, max_iters=self.max_iters,
                           trust_region=self.trust_region)
        return self._store(solve_scp(instance, seed, config, self.backend))
