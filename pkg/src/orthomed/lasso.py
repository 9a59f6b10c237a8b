"""Heteroscedastic lasso of the treatment on the controls, and post-lasso.

Solves ``E_n (d - x'theta)^2 + (lambda/n) sum_j g_j |theta_j|`` by cyclic
coordinate descent over the cached Gram matrix.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy.stats import norm

from .data import Sample
from .exceptions import DegenerateColumn, RankDeficientWarning

MAX_SWEEPS = 100_000
# rounds preset: initial loadings, then one refinement
DEFAULT_ROUNDS = 2
CONVERGE_ROUNDS = 15


@dataclass(frozen=True)
class LassoFit:
    theta: np.ndarray
    support: np.ndarray
    lam: float
    loadings: np.ndarray
    iterations_of_loadings: int = 1
    sweeps: int = 0
    converged: bool = True

    def residuals(self, sample: Sample) -> np.ndarray:
        return sample.d - sample.x @ self.theta

    def to_dict(self) -> dict:
        return {
            "theta": [float(t) for t in self.theta],
            "support": [int(j) for j in self.support],
            "lambda": float(self.lam),
            "loadings": [float(g) for g in self.loadings],
            "iterations_of_loadings": int(self.iterations_of_loadings),
            "status": "Optimal" if self.converged else "IterationLimit",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def lasso_penalty_level(n: int, p: int, gamma: float, c: float = 1.1) -> float:
    """``2 c sqrt(n) Phi^{-1}(1 - gamma / (2p))``."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if c <= 1:
        raise ValueError("c must exceed 1")
    return float(2.0 * c * np.sqrt(n) * norm.isf(gamma / (2.0 * p)))


def _loadings(x, resid):
    g = np.sqrt(np.mean((x * x) * (resid * resid)[:, None], axis=0))
    zero = np.flatnonzero(g == 0)
    if zero.size:
        raise DegenerateColumn(f"x{int(zero[0]) + 1}")
    return g


def initial_loadings(sample: Sample) -> np.ndarray:
    """``sqrt(E_n[x_j^2 (d - dbar)^2])``."""
    return _loadings(sample.x, sample.d - sample.d.mean())


def refined_loadings(sample: Sample, vhat) -> np.ndarray:
    """``sqrt(E_n[x_j^2 vhat^2])``."""
    vhat = np.asarray(vhat, dtype=float)
    if vhat.shape != (sample.n,):
        raise ValueError("vhat must have length n")
    return _loadings(sample.x, vhat)


@numba.njit(cache=True)
def _cd(G, c, thresh, theta, tol, max_sweeps, yy, debug):
    p = c.shape[0]
    grad = c - G @ theta
    prev = np.inf
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = theta[j]
            z = grad[j] + gjj * old
            if z > thresh[j]:
                new = (z - thresh[j]) / gjj
            elif z < -thresh[j]:
                new = (z + thresh[j]) / gjj
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                theta[j] = new
                for k in range(p):
                    grad[k] -= G[k, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if debug:
            obj = yy - 2.0 * (c @ theta) + theta @ (G @ theta)
            for j in range(p):
                obj += 2.0 * thresh[j] * abs(theta[j])
            if obj > prev + 1e-12 * (1.0 + abs(prev)):
                raise AssertionError("coordinate descent increased the objective")
            prev = obj
        if max_change < tol:
            return sweep, True
    return max_sweeps, False


def solve_lasso(sample: Sample, lam: float, loadings, tol: float = 1e-10,
                max_sweeps: int = MAX_SWEEPS, theta0=None, debug: bool = False) -> LassoFit:
    """Weighted lasso; ``support = {j : theta_j != 0}``."""
    loadings = np.asarray(loadings, dtype=float)
    if loadings.shape != (sample.p,):
        raise ValueError("loadings must have length p")
    if np.any(loadings <= 0):
        raise ValueError("loadings must be strictly positive")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n = sample.n
    x = np.ascontiguousarray(sample.x)
    G = x.T @ x / n
    c = x.T @ sample.d / n
    thresh = lam * loadings / (2.0 * n)
    theta = np.zeros(sample.p) if theta0 is None else np.array(theta0, dtype=float)
    yy = float(sample.d @ sample.d / n)
    sweeps, ok = _cd(G, c, thresh, theta, tol, max_sweeps, yy, debug)
    return LassoFit(theta=theta, support=np.flatnonzero(theta != 0), lam=float(lam),
                    loadings=loadings, sweeps=int(sweeps), converged=bool(ok))


def post_lasso(sample: Sample, support) -> np.ndarray:
    """Least squares of ``d`` on ``x[:, support]``; zeros elsewhere."""
    support = np.unique(np.asarray(support, dtype=int))
    theta = np.zeros(sample.p)
    if support.size == 0:
        return theta
    if support.size >= sample.n:
        raise ValueError("post-lasso needs |support| < n")
    xs = sample.x[:, support]
    coef, _, rank, _ = np.linalg.lstsq(xs, sample.d, rcond=None)
    if rank < support.size:
        warnings.warn("post-lasso design is rank deficient; using the pseudo-inverse",
                      RankDeficientWarning, stacklevel=2)
    theta[support] = coef
    return theta


def iterated_lasso(sample: Sample, gamma=None, c: float = 1.1,
                   max_rounds: int = DEFAULT_ROUNDS, lam: float | None = None,
                   tol_loadings: float = 1e-6) -> LassoFit:
    """Lasso with initial loadings, then loadings refined from lasso residuals.

    Stops when the loadings move by less than ``tol_loadings`` or after
    ``max_rounds`` solves.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    if gamma is None:
        gamma = 0.1 / np.log(sample.n)
    if lam is None:
        lam = lasso_penalty_level(sample.n, sample.p, gamma, c)
    g = initial_loadings(sample)
    fit = solve_lasso(sample, lam, g)
    rounds = 1
    while rounds < max_rounds:
        g_new = refined_loadings(sample, fit.residuals(sample))
        change = float(np.max(np.abs(g_new - g)))
        g = g_new
        fit = solve_lasso(sample, lam, g, theta0=fit.theta)
        rounds += 1
        if change < tol_loadings:
            break
    return LassoFit(theta=fit.theta, support=fit.support, lam=fit.lam, loadings=g,
                    iterations_of_loadings=rounds, sweeps=fit.sweeps, converged=fit.converged)
