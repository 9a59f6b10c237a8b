"""l1-penalized median regression, post-selection LAD refits and penalty rules.

The penalized objective

    E_n|y - d a - x'b| + (lambda / n) * sum_j psi_j |(a, b)_j|

equals (1/n) times the unpenalized absolute loss on a design augmented with
one pseudo-observation ``lambda * psi_j * e_j`` (response 0) per coefficient.
That augmented LAD problem is solved as a bounded linear program with a
Frisch-Newton primal-dual interior-point method (Mehrotra predictor-corrector).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import linalg

from .data import PenaltyWeights, RngStream, Sample, column_loadings, support_of
from .exceptions import RankDeficientWarning, UnboundedObjective

_STEP = 0.99995


class SolverStatus(str, Enum):
    OPTIMAL = "Optimal"
    ITERATION_LIMIT = "IterationLimit"


@dataclass(frozen=True)
class LadFit:
    """Result of a (penalized) LAD fit of ``y`` on ``(d, x)``."""

    alpha: float
    beta: np.ndarray
    support: np.ndarray
    objective: float
    lam: float
    solver_status: SolverStatus = SolverStatus.OPTIMAL
    psi: np.ndarray | None = None
    iterations: int = 0
    gap: float = 0.0
    dual: np.ndarray | None = field(default=None, repr=False)

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.alpha], self.beta])

    def fitted_controls(self, sample: Sample) -> np.ndarray:
        """``x_i' beta`` for every observation."""
        return sample.x @ self.beta

    def to_dict(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "beta": [float(b) for b in self.beta],
            "support": [int(j) for j in self.support],
            "objective": float(self.objective),
            "lambda": float(self.lam),
            "status": self.solver_status.value,
            "iterations": int(self.iterations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _bound(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1e20
    return float(np.min(-v[neg] / dv[neg]))


def frisch_newton(X, y, pen=None, tol=1e-8, max_iter=200):
    """Median regression of ``y`` on ``X`` with optional diagonal augmentation.

    Minimizes ``sum_i |y_i - X_i b| + sum_j pen_j |b_j|``.  Returns
    ``(coef, dual, gap, iterations, converged)`` where ``dual`` holds the
    LP dual weights in ``[0, 1]`` of every (augmented) row and ``gap`` is the
    final duality gap on the ``sum |r| / 2`` scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if pen is None:
        pen = np.zeros(0)
        idx = np.zeros(0, dtype=int)
    else:
        pen = np.asarray(pen, dtype=float)
        idx = np.flatnonzero(pen > 0)
        pen = pen[idx]
    m = idx.size
    N = n + m

    # A = [X' , E' diag(pen)] (k x N);  c = -(y, 0);  b = A 1/2;  0 <= a <= 1
    def A_dot(v):
        out = X.T @ v[:n]
        if m:
            out[idx] += pen * v[n:]
        return out

    def At_dot(u):
        out = np.empty(N)
        out[:n] = X @ u
        out[n:] = pen * u[idx]
        return out

    def normal_matrix(q):
        Q = (X.T * q[:n]) @ X
        if m:
            Q[idx, idx] += pen * pen * q[n:]
        return Q

    c = -np.concatenate([y, np.zeros(m)])
    u = np.ones(N)
    a = np.full(N, 0.5)
    b = A_dot(a)
    s = u - a

    Q0 = normal_matrix(np.ones(N))
    try:
        yy = linalg.solve(Q0, A_dot(c), assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        yy = linalg.lstsq(Q0, A_dot(c))[0]
    r = c - At_dot(yy)
    small = 1e-6
    z = np.where(np.abs(r) < small, np.maximum(r, 0) + small, np.maximum(r, 0))
    w = z - r
    gap = float(c @ a - yy @ b + w @ u)
    it = 0

    def factor(Q):
        try:
            cf = linalg.cho_factor(Q, check_finite=False)
            return lambda v: linalg.cho_solve(cf, v, check_finite=False)
        except (linalg.LinAlgError, ValueError):
            pinv = linalg.pinvh(Q)
            return lambda v: pinv @ v

    def converged(gap, coef):
        # mean-scale gap against 1 + mean-scale objective
        loss = 0.5 * (np.sum(np.abs(y - X @ coef)) + np.sum(pen * np.abs(coef[idx])))
        return 2.0 * gap / n <= tol * (1.0 + 2.0 * loss / n)

    while not converged(gap, -yy) and it < max_iter:
        it += 1
        q = 1.0 / (z / a + w / s)
        r = z - w
        Q = normal_matrix(q)
        fac = factor(Q)
        rhs = A_dot(q * r)
        dy = fac(rhs)
        da = q * (At_dot(dy) - r)
        ds = -da
        dz = -z * (da / a + 1.0)
        dw = -w * (ds / s + 1.0)
        fp = min(_STEP * min(_bound(a, da), _bound(s, ds)), 1.0)
        fd = min(_STEP * min(_bound(w, dw), _bound(z, dz)), 1.0)
        if min(fp, fd) < 1.0:
            mu = z @ a + w @ s
            g = (z + fd * dz) @ (a + fp * da) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2.0 * N)
            dadz = da * dz
            dsdw = ds * dw
            ainv = 1.0 / a
            sinv = 1.0 / s
            xi = mu * (ainv - sinv)
            rhs = rhs + A_dot(q * (dadz - dsdw - xi))
            dy = fac(rhs)
            da = q * (At_dot(dy) + xi - r - dadz + dsdw)
            ds = -da
            dz = mu * ainv - z - ainv * z * da - dadz
            dw = mu * sinv - w - sinv * w * ds - dsdw
            fp = min(_STEP * min(_bound(a, da), _bound(s, ds)), 1.0)
            fd = min(_STEP * min(_bound(w, dw), _bound(z, dz)), 1.0)
        a = a + fp * da
        s = s + fp * ds
        yy = yy + fd * dy
        w = w + fd * dw
        z = z + fd * dz
        gap = float(c @ a - yy @ b + w @ u)
        if not np.isfinite(gap):
            raise UnboundedObjective("interior-point iterates diverged")
    coef = -yy
    return coef, a, gap, it, converged(gap, coef)


def _data_loss(sample: Sample, alpha, beta) -> float:
    return float(np.mean(np.abs(sample.y - sample.d * alpha - sample.x @ beta)))


def penalized_objective(sample: Sample, alpha, beta, lam, weights: PenaltyWeights) -> float:
    """``E_n|y - d a - x'b| + (lam/n) ||Psi (a, b)||_1``."""
    coef = np.concatenate([[alpha], beta])
    return _data_loss(sample, alpha, beta) + lam / sample.n * float(np.sum(weights.psi * np.abs(coef)))


def solve_l1_median(sample: Sample, lam: float, weights: PenaltyWeights | None = None,
                    tol: float = 1e-8, max_iter: int = 200) -> LadFit:
    """l1-penalized median regression of ``y`` on ``(d, x)``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if weights is None:
        weights = column_loadings(sample)
    if len(weights) != sample.p + 1:
        raise ValueError(f"weights must have length p+1={sample.p + 1}")
    pen = lam * weights.psi if lam > 0 else None
    coef, dual, gap, it, ok = frisch_newton(sample.xtilde, sample.y, pen, tol, max_iter)
    alpha, beta = float(coef[0]), coef[1:]
    status = SolverStatus.OPTIMAL if ok else SolverStatus.ITERATION_LIMIT
    return LadFit(
        alpha=alpha,
        beta=beta,
        support=support_of(beta),
        objective=penalized_objective(sample, alpha, beta, lam, weights),
        lam=float(lam),
        solver_status=status,
        psi=weights.psi,
        iterations=it,
        gap=2.0 * gap / sample.n,
        dual=dual,
    )


def independent_columns(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    basis = np.zeros((M.shape[0], 0))
    for j in range(M.shape[1]):
        col = M[:, j]
        norm = np.linalg.norm(col)
        if norm == 0:
            continue
        resid = col - basis @ (basis.T @ col)
        resid = resid - basis @ (basis.T @ resid)
        rn = np.linalg.norm(resid)
        if rn > tol * norm:
            keep.append(j)
            basis = np.column_stack([basis, resid / rn])
    return np.array(keep, dtype=int)


def lad_refit(sample: Sample, support, include_d: bool = True,
              tol: float = 1e-8, max_iter: int = 200) -> LadFit:
    """Unpenalized LAD of ``y`` on ``d`` (optionally) and ``x[:, support]``.

    Collinear columns are dropped, later indices first, with a
    :class:`RankDeficientWarning`.
    """
    support = np.unique(np.asarray(support, dtype=int))
    cols = [sample.d[:, None]] if include_d else []
    cols.append(sample.x[:, support])
    M = np.column_stack(cols) if cols else np.zeros((sample.n, 0))
    if M.shape[1] + 1 > sample.n:
        raise ValueError("refit is not determined: |support| + 1 >= n")
    keep = independent_columns(M)
    if keep.size < M.shape[1]:
        warnings.warn(f"dropped {M.shape[1] - keep.size} collinear column(s) from the refit",
                      RankDeficientWarning, stacklevel=2)
    alpha = 0.0
    beta = np.zeros(sample.p)
    it, gap, ok, dual = 0, 0.0, True, None
    if keep.size:
        coef, dual, gap, it, ok = frisch_newton(M[:, keep], sample.y, None, tol, max_iter)
        full = np.zeros(M.shape[1])
        full[keep] = coef
        if include_d:
            alpha, beta[support] = float(full[0]), full[1:]
        else:
            beta[support] = full
    return LadFit(
        alpha=alpha,
        beta=beta,
        support=support_of(beta),
        objective=_data_loss(sample, alpha, beta),
        lam=0.0,
        solver_status=SolverStatus.OPTIMAL if ok else SolverStatus.ITERATION_LIMIT,
        iterations=it,
        gap=2.0 * gap / sample.n,
        dual=dual,
    )


def default_gamma(n: int) -> float:
    """``0.1 / log n``."""
    return 0.1 / np.log(n)


def pivotal_penalty_median(sample: Sample, gamma="default", c0="default",
                           n_sim: int = 1000, rng: RngStream | np.random.Generator | None = None,
                           weights: PenaltyWeights | None = None) -> float:
    """Simulated pivotal penalty ``c0 * n * Q(1 - gamma, 2 ||Psi^-1 E_n[(1/2 - 1{U <= 1/2}) xt]||_inf)``.

    ``gamma="default"`` means ``0.1 / log n`` and ``c0="default"`` means 1.1.
    """
    if n_sim < 100:
        raise ValueError("n_sim must be at least 100")
    n = sample.n
    for name, val in (("gamma", gamma), ("c0", c0)):
        if isinstance(val, str) and val != "default":
            raise ValueError(f"{name} must be a number or 'default'")
    if isinstance(gamma, str):
        gamma = default_gamma(n)
    if isinstance(c0, str):
        c0 = 1.1
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if c0 <= 1:
        raise ValueError("c0 must exceed 1")
    if weights is None:
        weights = column_loadings(sample)
    gen = rng.generator() if isinstance(rng, RngStream) else (rng or np.random.default_rng(0))
    xt = sample.xtilde
    psi = np.where(weights.psi > 0, weights.psi, np.inf)
    U = gen.uniform(size=(n_sim, n))
    signs = 0.5 - (U <= 0.5)
    stats = 2.0 * np.max(np.abs(signs @ xt / n) / psi, axis=1)
    return float(c0 * n * np.quantile(stats, 1.0 - gamma))


def truncate_coefficients(fit: LadFit, m: int) -> LadFit:
    """Keep the ``m`` largest ``|beta_j|`` (ties to the lower index)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    beta = np.asarray(fit.beta, dtype=float)
    nz = np.flatnonzero(beta != 0)
    if nz.size <= m:
        return fit
    order = np.lexsort((np.arange(beta.size), -np.abs(beta)))
    kept = np.sort(order[:m])
    out = np.zeros_like(beta)
    out[kept] = beta[kept]
    return replace(fit, beta=out, support=np.flatnonzero(out != 0))
