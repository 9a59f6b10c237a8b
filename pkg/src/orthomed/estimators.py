"""scikit-learn style front ends for the functional core.

All estimators take a plain design matrix ``X``.  The inference estimators
need to know which column is the treatment; the remaining columns are the
controls, and an intercept column is appended when ``fit_intercept`` is set.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import RngStream, Sample, column_loadings
from .lasso import iterated_lasso, solve_lasso
from .multi import (bootstrap_stream, fit_all_targets, marginal_bands, multiplier_bootstrap,
                    simultaneous_bands)
from .ortho import Algorithm, OrthoConfig, run_algorithm
from .qr_l1 import pivotal_penalty_median, solve_l1_median


def _with_intercept(X, fit_intercept):
    if not fit_intercept:
        return X
    return np.column_stack([X, np.ones(X.shape[0])])


def _split_treatment(X, treatment):
    p = X.shape[1]
    if not -p <= treatment < p:
        raise ValueError(f"treatment index {treatment} out of range for {p} columns")
    j = treatment % p
    return X[:, j], np.delete(X, j, axis=1)


class L1MedianRegressor(RegressorMixin, BaseEstimator):
    """l1-penalized least absolute deviation regression.

    Parameters
    ----------
    alpha : float or "pivotal"
        Penalty level ``lambda`` of ``E_n|y - X b| + (lambda/n) ||Psi b||_1``.
        ``"pivotal"`` simulates the pivotal rule.
    fit_intercept : bool
        Add an intercept.  It is penalized unless ``penalize_intercept`` is
        False.
    """

    def __init__(self, alpha="pivotal", fit_intercept=True, penalize_intercept=True,
                 gamma=None, c0=1.1, n_sim=1000, tol=1e-8, max_iter=200, random_state=0):
        self.alpha = alpha
        self.fit_intercept = fit_intercept
        self.penalize_intercept = penalize_intercept
        self.gamma = gamma
        self.c0 = c0
        self.n_sim = n_sim
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        Z = _with_intercept(X, self.fit_intercept)
        sample = Sample(y, Z[:, 0], Z[:, 1:])
        w = column_loadings(sample)
        if self.fit_intercept and not self.penalize_intercept:
            psi = w.psi.copy()
            psi[-1] = 0.0
            w = type(w)(psi)
        if isinstance(self.alpha, str):
            if self.alpha != "pivotal":
                raise ValueError("alpha must be a number or 'pivotal'")
            gamma = self.gamma if self.gamma is not None else "default"
            lam = pivotal_penalty_median(sample, gamma, self.c0, self.n_sim,
                                         RngStream(self.random_state, 0), w)
        else:
            lam = float(self.alpha)
        fit = solve_l1_median(sample, lam, w, tol=self.tol, max_iter=self.max_iter)
        coef = fit.coef
        if self.fit_intercept:
            self.intercept_ = float(coef[-1])
            self.coef_ = coef[:-1].copy()
        else:
            self.intercept_ = 0.0
            self.coef_ = coef.copy()
        self.lambda_ = lam
        self.support_ = np.flatnonzero(self.coef_ != 0)
        self.fit_ = fit
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


class HeteroscedasticLasso(RegressorMixin, BaseEstimator):
    """Lasso with data-driven penalty loadings.

    ``alpha=None`` uses ``lambda = 2 c sqrt(n) Phi^{-1}(1 - gamma/(2p))``.
    The intercept, when fitted, is an ordinary penalized column of ones.
    """

    def __init__(self, alpha=None, fit_intercept=True, gamma=None, c=1.1, max_rounds=2):
        self.alpha = alpha
        self.fit_intercept = fit_intercept
        self.gamma = gamma
        self.c = c
        self.max_rounds = max_rounds

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        Z = _with_intercept(X, self.fit_intercept)
        sample = Sample(y, y, Z)
        fit = iterated_lasso(sample, self.gamma, self.c, self.max_rounds, lam=self.alpha)
        theta = fit.theta
        self.intercept_ = float(theta[-1]) if self.fit_intercept else 0.0
        self.coef_ = theta[:-1].copy() if self.fit_intercept else theta.copy()
        self.lambda_ = fit.lam
        self.loadings_ = fit.loadings
        self.support_ = np.flatnonzero(self.coef_ != 0)
        self.fit_ = fit
        return self

    def refit(self, X, y, loadings, alpha):
        """One solve at fixed loadings and penalty level."""
        X, y = check_X_y(X, y, y_numeric=True)
        Z = _with_intercept(X, self.fit_intercept)
        return solve_lasso(Sample(y, y, Z), alpha, loadings)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_


class _InferenceParams:
    def _config(self) -> OrthoConfig:
        return OrthoConfig(algorithm=Algorithm(self.algorithm), gamma=self.gamma, c0=self.c0,
                           c=self.c, xi=self.xi, n_sim=self.n_sim,
                           lasso_rounds=self.lasso_rounds,
                           penalize_intercept=self.penalize_intercept, c_h=self.c_h,
                           bandwidth=self.bandwidth, j_method=self.j_method,
                           seed=self.random_state)


class OrthogonalMedianRegression(_InferenceParams, BaseEstimator):
    """Inference on the coefficient of one treatment column in a median regression.

    Parameters
    ----------
    treatment : int
        Column of ``X`` holding the treatment; every other column is a control.
    algorithm : {"alg1", "alg2", "double", "onestep"}
    bandwidth : {"koenker", "scaled-sd"}
        Kernel bandwidth rule for the density terms; ``c_h`` scales the
        ``"scaled-sd"`` rule only.
    j_method : {"product", "pointwise"}
        Estimator of the score derivative ``J``.

    Attributes
    ----------
    coef_ : float
        Estimate of the treatment coefficient.
    stderr_ : float
        ``sigma_hat / sqrt(n)``.
    conf_int_ : tuple
        Wald interval at level ``1 - xi``.
    score_region_ : list of tuple
        Pieces of the score-statistic confidence region.
    result_ : InferenceResult
    """

    def __init__(self, treatment=0, algorithm="alg1", fit_intercept=True,
                 penalize_intercept=True, gamma=None, c0=1.1, c=1.1, xi=0.05, n_sim=1000,
                 lasso_rounds=2, c_h=1.0, bandwidth="koenker",
                 j_method="product", random_state=0):
        self.treatment = treatment
        self.algorithm = algorithm
        self.fit_intercept = fit_intercept
        self.penalize_intercept = penalize_intercept
        self.gamma = gamma
        self.c0 = c0
        self.c = c
        self.xi = xi
        self.n_sim = n_sim
        self.lasso_rounds = lasso_rounds
        self.c_h = c_h
        self.bandwidth = bandwidth
        self.j_method = j_method
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        d, controls = _split_treatment(X, self.treatment)
        # intercept first so it is x1 in reports
        if self.fit_intercept:
            controls = np.column_stack([np.ones(X.shape[0]), controls])
        sample = Sample(y, d, controls)
        res = run_algorithm(sample, self._config(), RngStream(self.random_state, 0))
        self.result_ = res
        self.coef_ = res.alpha_check
        self.stderr_ = res.sigma_hat / np.sqrt(sample.n)
        self.conf_int_ = res.wald_ci
        self.score_region_ = list(res.score_region.pieces)
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "result_")
        return self.result_.to_dict()


class ManyTargetMedianInference(_InferenceParams, BaseEstimator):
    """Simultaneous inference on several treatment columns.

    Parameters
    ----------
    targets : sequence of int
        Columns of ``X`` treated as targets; the rest are controls.
    n_draws : int
        Multiplier bootstrap draws.
    """

    def __init__(self, targets=(0,), n_draws=2000, algorithm="alg1", fit_intercept=True,
                 penalize_intercept=True, gamma=None, c0=1.1, c=1.1, xi=0.05, n_sim=1000,
                 lasso_rounds=2, c_h=1.0, bandwidth="koenker",
                 j_method="product", random_state=0, n_jobs=None):
        self.targets = targets
        self.n_draws = n_draws
        self.algorithm = algorithm
        self.fit_intercept = fit_intercept
        self.penalize_intercept = penalize_intercept
        self.gamma = gamma
        self.c0 = c0
        self.c = c
        self.xi = xi
        self.n_sim = n_sim
        self.lasso_rounds = lasso_rounds
        self.c_h = c_h
        self.bandwidth = bandwidth
        self.j_method = j_method
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        idx = np.asarray(self.targets, dtype=int) % X.shape[1]
        if idx.size == 0 or np.unique(idx).size != idx.size:
            raise ValueError("targets must be a non-empty list of distinct columns")
        D = X[:, idx]
        U = np.delete(X, idx, axis=1)
        if self.fit_intercept:
            U = np.column_stack([np.ones(X.shape[0]), U])
        est, infl = fit_all_targets(y, D, U, self._config(), seed=self.random_state,
                                    threads=self.n_jobs)
        c_hat, _ = multiplier_bootstrap(infl, self.n_draws,
                                        bootstrap_stream(self.random_state),
                                        self.xi)
        self.estimates_ = est
        self.influence_ = infl
        self.coef_ = est.alpha
        self.sigma_ = est.sigma
        self.critical_value_ = c_hat
        self.bands_ = simultaneous_bands(est, c_hat)
        self.marginal_bands_ = marginal_bands(est, self.xi)
        return self
