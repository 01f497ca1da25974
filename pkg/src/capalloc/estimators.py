"""scikit-learn style wrappers around the allocation solvers.

A loss table ``X`` of shape ``(n_samples, n_lines)`` plays the role of the
training data; fitting finds the allocation of ``capital`` that minimises the
empirical indicator on it. ``transform`` returns the per-line reserves
``u_k - X_k`` of new scenarios, and ``score`` is the negated indicator so that
larger is better, as scikit-learn model selection expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from . import optimizer
from .indicators import PenaltyFn, check_kind, estimate_indicator
from .optimizer import OptimizerConfig

__all__ = ["OptimalAllocation", "ProportionalAllocation"]


def _check_capital(capital) -> float:
    capital = float(capital)
    if not capital >= 0 or not np.isfinite(capital):
        raise ValueError(f"capital must be finite and >= 0, got {capital}")
    return capital


def _check_losses(X) -> None:
    if X.shape[0] < 2:
        raise ValueError("at least two loss scenarios are required")


class _AllocationBase(TransformerMixin, BaseEstimator):
    def transform(self, X):
        """Reserves ``u_k - X_k`` per scenario and line."""
        check_is_fitted(self, "allocation_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.allocation_ - X

    def _penalty(self) -> PenaltyFn:
        return PenaltyFn("absolute") if self.penalty == "absolute" else PenaltyFn("power", self.power)

    def score(self, X, y=None) -> float:
        """Negated empirical indicator of the fitted allocation on ``X``."""
        check_is_fitted(self, "allocation_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return -estimate_indicator(self.kind, X, self.result_alloc_, self._penalty()).value


class OptimalAllocation(_AllocationBase):
    """Allocation of ``capital`` minimising the indicator on a loss table.

    Parameters
    ----------
    capital : float
        Total capital ``u``.
    kind : {"I", "J"}
        ``I`` penalises line ruin while the group is solvent, ``J`` while it is not.
    penalty : {"absolute", "power"}
    power : float
        Exponent of the power penalty (ignored for ``absolute``).
    solver : str
        A key of ``capalloc.optimizer.SOLVERS``.
    iterations, step_a, step_alpha : stochastic solver schedule.
    resolution : float, optional
        Grid oracle step as a fraction of ``capital``.
    random_state : int
        Seed of the stochastic solvers.

    Attributes
    ----------
    allocation_ : ndarray of shape (n_features_in_,)
    fractions_ : ndarray of shape (n_features_in_,)
    indicator_ : float
        Empirical indicator at ``allocation_`` on the training table.
    result_ : AllocationResult
    """

    def __init__(self, capital=1.0, kind="I", penalty="absolute", power=2.0, solver="mirror_kw",
                 iterations=4000, step_a=0.5, step_alpha=0.75, resolution=None, random_state=0):
        self.capital = capital
        self.kind = kind
        self.penalty = penalty
        self.power = power
        self.solver = solver
        self.iterations = iterations
        self.step_a = step_a
        self.step_alpha = step_alpha
        self.resolution = resolution
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        _check_losses(X)
        u = _check_capital(self.capital)
        check_kind(self.kind)
        if self.solver not in optimizer.SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        penalty = self._penalty()
        if self.solver in ("mirror_kw", "projected_sgd"):
            config = OptimizerConfig(iterations=self.iterations, step_a=self.step_a,
                                     step_alpha=self.step_alpha)
            result = optimizer.SOLVERS[self.solver](X, u, self.kind, penalty, config,
                                                    seed=int(self.random_state))
        elif self.solver == "grid_oracle":
            res = None if self.resolution is None else self.resolution * u
            result = optimizer.grid_search_oracle(X, u, self.kind, penalty, resolution=res)
        else:
            result = optimizer.solve_bivariate(X, u, self.kind)
        self.result_ = result
        self.result_alloc_ = result.alloc
        self.allocation_ = np.array(result.alloc.parts)
        self.fractions_ = self.allocation_ / u if u > 0 else np.full(X.shape[1], np.nan)
        self.indicator_ = result.indicator.value
        return self


class ProportionalAllocation(_AllocationBase):
    """Baseline: capital split in proportion to the mean loss of each line."""

    def __init__(self, capital=1.0, kind="I", penalty="absolute", power=2.0):
        self.capital = capital
        self.kind = kind
        self.penalty = penalty
        self.power = power

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64)
        _check_losses(X)
        u = _check_capital(self.capital)
        check_kind(self.kind)
        alloc = optimizer.proportional_baseline(X, u)
        self.result_alloc_ = alloc
        self.allocation_ = np.array(alloc.parts)
        self.fractions_ = self.allocation_ / u if u > 0 else np.full(X.shape[1], np.nan)
        self.indicator_ = estimate_indicator(self.kind, X, alloc, self._penalty()).value
        return self
