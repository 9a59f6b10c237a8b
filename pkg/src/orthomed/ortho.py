"""Orthogonal instrumental median regression for a single target coefficient.

The statistic

    L_n(a) = 4 |E_n[phi(y - x'b - d a) v]|^2 / E_n(v^2),   phi(t) = 1/2 - 1{t <= 0}

is piecewise constant in ``a`` with breakpoints ``(y_i - x_i'b) / d_i``.
:class:`ScoreProfile` evaluates it exactly on every plateau and breakpoint of
the search interval, which gives the exact minimizer and exact level sets.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np
from scipy.stats import chi2

from . import __version__
from .data import PenaltyWeights, RngStream, Sample, column_loadings, sign_score
from .exceptions import InstrumentDegenerate, StageError, UnionTooLarge
from .lasso import DEFAULT_ROUNDS, LassoFit, iterated_lasso, post_lasso
from .qr_l1 import LadFit, default_gamma, lad_refit, pivotal_penalty_median, solve_l1_median
from .variance import (BANDWIDTH_RULES, J_METHODS, VarianceEstimate, density_at_zero,
                       estimate_variance, select_bandwidth, wald_ci)

INSTRUMENT_TOL = 1e-12


class Algorithm(str, Enum):
    ALG1 = "alg1"
    ALG2 = "alg2"
    ALG3 = "double"
    ONESTEP = "onestep"


@dataclass(frozen=True)
class SearchInterval:
    lo: float
    hi: float
    b: float = float("nan")

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("search interval needs lo < hi")

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass
class ScoreRegion:
    """Level set ``{a in A : n L_n(a) <= q}``.

    ``pieces`` is the exact union as a list of closed-hull intervals of the
    maximal connected runs; ``hull`` is their convex hull.
    """

    pieces: list
    threshold: float
    argmin: float
    min_stat: float

    @property
    def empty(self) -> bool:
        return not self.pieces

    @property
    def hull(self):
        if self.empty:
            return None
        return (self.pieces[0][0], self.pieces[-1][1])

    @property
    def disconnected(self) -> bool:
        return len(self.pieces) > 1

    def to_dict(self) -> dict:
        return {
            "pieces": [list(p) for p in self.pieces],
            "hull": list(self.hull) if self.hull else None,
            "disconnected": self.disconnected,
            "empty": self.empty,
            "threshold": self.threshold,
            "argmin": self.argmin,
            "min_stat": self.min_stat,
        }


def build_instruments(sample: Sample, theta) -> np.ndarray:
    """Residuals ``d - x'theta`` of the treatment equation."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (sample.p,):
        raise ValueError("theta must have length p")
    vhat = sample.d - sample.x @ theta
    if np.mean(vhat * vhat) < INSTRUMENT_TOL:
        raise InstrumentDegenerate("instrument has zero second moment; d is fit perfectly by x")
    return vhat


def param_interval(alpha_hat: float, sample: Sample, const: float = 10.0) -> SearchInterval:
    """``[alpha_hat -/+ const / b]`` with ``b = sqrt(E_n d^2) log n``."""
    n = sample.n
    if n < 3:
        raise ValueError("need n >= 3")
    b = float(np.sqrt(np.mean(sample.d ** 2)) * np.log(n))
    return SearchInterval(alpha_hat - const / b, alpha_hat + const / b, b)


def score_statistic(alpha, y, d, gfit, vhat) -> float:
    """``L_n(alpha)`` by direct evaluation."""
    vhat = np.asarray(vhat, dtype=float)
    ev2 = float(np.mean(vhat * vhat))
    if ev2 < INSTRUMENT_TOL:
        raise InstrumentDegenerate("instrument has zero second moment")
    t = np.asarray(y) - np.asarray(gfit) - np.asarray(d) * alpha
    m = float(np.mean(sign_score(t) * vhat))
    return 4.0 * m * m / ev2


class ScoreProfile:
    """Exact piecewise-constant representation of ``L_n`` over an interval."""

    def __init__(self, y, d, gfit, vhat, interval: SearchInterval):
        y = np.asarray(y, dtype=float)
        d = np.asarray(d, dtype=float)
        vhat = np.asarray(vhat, dtype=float)
        self.n = y.size
        self.ev2 = float(np.mean(vhat * vhat))
        if self.ev2 < INSTRUMENT_TOL:
            raise InstrumentDegenerate("instrument has zero second moment")
        self.interval = interval
        # rounding slack for sums of instruments
        self._mtol = 1e-12 * float(np.sum(np.abs(vhat))) / self.n
        r = y - np.asarray(gfit, dtype=float)
        pos, neg, zero = d > 0, d < 0, d == 0
        self._const = float(np.sum(sign_score(r[zero]) * vhat[zero]))
        bp = r[pos] / d[pos]
        order = np.argsort(bp, kind="stable")
        self._bpos = bp[order]
        self._cpos = np.concatenate([[0.0], np.cumsum(vhat[pos][order])])
        bn = r[neg] / d[neg]
        order = np.argsort(bn, kind="stable")
        self._bneg = bn[order]
        self._cneg = np.concatenate([[0.0], np.cumsum(vhat[neg][order])])
        allbp = np.concatenate([self._bpos, self._bneg])
        inside = np.unique(allbp[(allbp > interval.lo) & (allbp < interval.hi)])
        self.edges = np.concatenate([[interval.lo], inside, [interval.hi]])
        self.mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.plateau_stats = self.stat(self.mids)
        self.edge_stats = self.stat(self.edges)

    def moment(self, alpha) -> np.ndarray:
        """``E_n[phi(r - d a) v]`` at each ``a``; breakpoints compared in ``a``-space."""
        a = np.atleast_1d(np.asarray(alpha, dtype=float))
        # d > 0: phi = -1/2 iff a >= breakpoint
        kp = np.searchsorted(self._bpos, a, side="right")
        spos = 0.5 * self._cpos[-1] - self._cpos[kp]
        # d < 0: phi = -1/2 iff a <= breakpoint
        kn = np.searchsorted(self._bneg, a, side="left")
        sneg = 0.5 * self._cneg[-1] - (self._cneg[-1] - self._cneg[kn])
        return (self._const + spos + sneg) / self.n

    def stat(self, alpha) -> np.ndarray:
        m = self.moment(alpha)
        return 4.0 * m * m / self.ev2

    def minimize(self) -> tuple[float, float]:
        """Plateau midpoint of minimal ``L_n`` closest to the interval center.

        An isolated breakpoint is returned only when its value is strictly
        below every plateau.
        """
        center = self.interval.center
        pm = np.abs(self.moment(self.mids))
        em = np.abs(self.moment(self.edges))
        if em.min() < pm.min() - self._mtol:
            cand, vals = self.edges, em
        else:
            cand, vals = self.mids, pm
        pts = cand[vals <= vals.min() + self._mtol]
        dist = np.abs(pts - center)
        k = int(np.flatnonzero(dist == dist.min())[0])
        a = float(pts[k])
        return a, float(self.stat(a)[0])

    def region(self, threshold_n: float):
        """Maximal runs of pieces with ``n L_n <= threshold_n`` as hull intervals."""
        ok_edge = self.n * self.edge_stats <= threshold_n
        ok_mid = self.n * self.plateau_stats <= threshold_n
        seq = []
        K = self.mids.size
        for k in range(K + 1):
            seq.append((ok_edge[k], self.edges[k], self.edges[k]))
            if k < K:
                seq.append((ok_mid[k], self.edges[k], self.edges[k + 1]))
        pieces, start, end = [], None, None
        for ok, lo, hi in seq:
            if ok:
                start = lo if start is None else start
                end = hi
            elif start is not None:
                pieces.append((float(start), float(end)))
                start = None
        if start is not None:
            pieces.append((float(start), float(end)))
        return pieces

    def trace(self) -> np.ndarray:
        """``(alpha, n L_n(alpha))`` at all edges and plateau midpoints, sorted."""
        a = np.sort(np.concatenate([self.edges, self.mids]))
        return np.column_stack([a, self.n * self.stat(a)])


def minimize_score(y, d, gfit, vhat, interval: SearchInterval) -> tuple[float, float]:
    """Exact global minimizer of ``L_n`` over the interval and the minimum."""
    return ScoreProfile(y, d, gfit, vhat, interval).minimize()


def chi2_threshold(xi: float) -> float:
    """``(1 - xi)``-quantile of chi-square with one degree of freedom."""
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    return float(chi2.ppf(1.0 - xi, df=1))


def score_region(y, d, gfit, vhat, interval: SearchInterval, xi: float = 0.05) -> ScoreRegion:
    prof = ScoreProfile(y, d, gfit, vhat, interval)
    q = chi2_threshold(xi)
    amin, lmin = prof.minimize()
    return ScoreRegion(prof.region(q), q, amin, prof.n * lmin)


def one_step(alpha_hat: float, y, d, gfit, vhat, f_eps0: float) -> float:
    """Newton step from ``alpha_hat`` along the orthogonal score."""
    vhat = np.asarray(vhat, dtype=float)
    if f_eps0 <= 0:
        raise ValueError("f_eps0 must be positive")
    ev2 = float(np.mean(vhat * vhat))
    if ev2 <= 0:
        raise InstrumentDegenerate("instrument has zero second moment")
    t = np.asarray(y) - np.asarray(d) * alpha_hat - np.asarray(gfit)
    return float(alpha_hat + np.mean(sign_score(t) * vhat) / (f_eps0 * ev2))


@dataclass
class OrthoConfig:
    """Tuning of the three-step procedure; ``None`` means the default rule."""

    algorithm: Algorithm = Algorithm.ALG1
    gamma: float | None = None
    c0: float = 1.1
    c: float = 1.1
    xi: float = 0.05
    n_sim: int = 1000
    lasso_rounds: int = DEFAULT_ROUNDS
    interval_const: float = 10.0
    penalize_intercept: bool = True
    c_h: float = 1.0
    bandwidth: str = "koenker"
    j_method: str = "product"
    lambda_qr: float | None = None
    lambda_lasso: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.bandwidth not in BANDWIDTH_RULES:
            raise ValueError(f"bandwidth must be one of {BANDWIDTH_RULES}")
        if self.j_method not in J_METHODS:
            raise ValueError(f"j_method must be one of {J_METHODS}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["algorithm"] = self.algorithm.value
        return out


@dataclass
class InferenceResult:
    alpha_check: float
    sigma_hat: float
    wald_ci: tuple
    score_region: ScoreRegion
    interval: SearchInterval
    algorithm: Algorithm
    variance: VarianceEstimate
    n: int
    score_at_alpha: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)
    profile: ScoreProfile | None = field(repr=False, default=None)
    gfit: np.ndarray | None = field(repr=False, default=None)
    vhat: np.ndarray | None = field(repr=False, default=None)

    def scores(self, y, d) -> np.ndarray:
        """Score values ``phi(y - d alpha_check - gfit) * vhat`` per observation."""
        return sign_score(np.asarray(y) - np.asarray(d) * self.alpha_check - self.gfit) * self.vhat

    @property
    def sigma_homoscedastic(self) -> float:
        return float(np.sqrt(self.variance.sigma2_homoscedastic))

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "library_version": __version__,
            "algorithm": self.algorithm.value,
            "n": self.n,
            "alpha_check": self.alpha_check,
            "sigma_hat": self.sigma_hat,
            "sigma_hat_homoscedastic": self.sigma_homoscedastic,
            "wald_ci": list(self.wald_ci),
            "score_region": self.score_region.to_dict(),
            "search_interval": [self.interval.lo, self.interval.hi],
            "variance": self.variance.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def step_one(sample: Sample, cfg: OrthoConfig, rng: RngStream) -> tuple[LadFit, PenaltyWeights]:
    """l1-penalized median regression of ``y`` on ``(d, x)`` at the pivotal penalty."""
    weights = column_loadings(sample)
    if not cfg.penalize_intercept:
        weights = weights.without_intercept(sample)
    gamma = cfg.gamma if cfg.gamma is not None else default_gamma(sample.n)
    lam = cfg.lambda_qr
    if lam is None:
        lam = pivotal_penalty_median(sample, gamma, cfg.c0, cfg.n_sim, rng, weights)
    return solve_l1_median(sample, lam, weights), weights


def step_two(sample: Sample, cfg: OrthoConfig) -> LassoFit:
    return iterated_lasso(sample, cfg.gamma, cfg.c, cfg.lasso_rounds, lam=cfg.lambda_lasso)


def naive_post_selection(sample: Sample, refit: LadFit, c_h: float = 1.0,
                         bandwidth: str = "koenker") -> tuple[float, float]:
    """Refit coefficient on ``d`` with the LAD sandwich treating the model as fixed."""
    cols = np.concatenate([[0], 1 + np.asarray(refit.support, dtype=int)])
    X = sample.xtilde[:, cols]
    e = sample.y - sample.d * refit.alpha - sample.x @ refit.beta
    n = sample.n
    h = select_bandwidth(e, bandwidth, c_h)
    inside = np.abs(e) <= h
    J = (X[inside].T @ X[inside]) / (2.0 * h * n)
    Om = X.T @ X / (4.0 * n)
    Jinv = np.linalg.pinv(J)
    V = Jinv @ Om @ Jinv
    return float(refit.alpha), float(np.sqrt(max(V[0, 0], 0.0)))


def _finish(sample, cfg, alg, alpha_check, gfit, vhat, interval, diagnostics) -> InferenceResult:
    resid = sample.y - sample.d * alpha_check - gfit
    var = _stage("variance", estimate_variance, resid, sample.d, vhat, cfg.c_h,
                 cfg.bandwidth, cfg.j_method, cfg.xi)
    prof = _stage("score", ScoreProfile, sample.y, sample.d, gfit, vhat, interval)
    q = chi2_threshold(cfg.xi)
    amin, lmin = prof.minimize()
    region = ScoreRegion(prof.region(q), q, amin, prof.n * lmin)
    sigma = var.sigma if np.isfinite(var.sigma2) else float("nan")
    ci = wald_ci(alpha_check, sigma, sample.n, cfg.xi) if sigma > 0 else (float("nan"),) * 2
    diagnostics = dict(diagnostics)
    diagnostics["score_region_empty"] = region.empty
    diagnostics["n_score_at_alpha_check"] = float(prof.n * prof.stat(alpha_check)[0])
    diagnostics["variance_flags"] = list(var.flags)
    return InferenceResult(
        alpha_check=float(alpha_check), sigma_hat=sigma, wald_ci=ci, score_region=region,
        interval=interval, algorithm=alg, variance=var, n=sample.n,
        score_at_alpha=prof.trace(), diagnostics=diagnostics, profile=prof,
        gfit=np.asarray(gfit, dtype=float), vhat=np.asarray(vhat, dtype=float))


def _step_diag(fit: LadFit, lasso: LassoFit | None) -> dict:
    out = {
        "qr_lambda": fit.lam,
        "qr_support": [int(j) for j in fit.support],
        "qr_alpha_hat": fit.alpha,
        "qr_status": fit.solver_status.value,
    }
    if lasso is not None:
        out.update({
            "lasso_lambda": lasso.lam,
            "lasso_support": [int(j) for j in lasso.support],
            "lasso_loading_rounds": lasso.iterations_of_loadings,
            "lasso_converged": lasso.converged,
        })
    return out


class Stages:
    """Lazily computed first- and second-step fits shared between algorithms."""

    def __init__(self, sample: Sample, cfg: OrthoConfig, rng: RngStream):
        self.sample, self.cfg, self.rng = sample, cfg, rng

    @cached_property
    def fit(self) -> LadFit:
        return _stage("l1_median", step_one, self.sample, self.cfg, self.rng)[0]

    @cached_property
    def refit(self) -> LadFit:
        return _stage("refit", lad_refit, self.sample, self.fit.support, True)

    @cached_property
    def lasso(self) -> LassoFit:
        return _stage("lasso", step_two, self.sample, self.cfg)

    @cached_property
    def post_theta(self) -> np.ndarray:
        return _stage("post_lasso", post_lasso, self.sample, self.lasso.support)


def double_selection(sample: Sample, cfg: OrthoConfig | None = None,
                     rng: RngStream | None = None, stages: Stages | None = None) -> InferenceResult:
    """Median regression of ``y`` on ``d`` and the union of both selected sets."""
    cfg = cfg or OrthoConfig(algorithm=Algorithm.ALG3)
    stages = stages or Stages(sample, cfg, rng or RngStream(cfg.seed, 0))
    fit, lasso = stages.fit, stages.lasso
    union = np.union1d(fit.support, lasso.support).astype(int)
    if union.size + 1 >= sample.n / 2:
        raise StageError("refit", UnionTooLarge(
            f"|union| + 1 = {union.size + 1} >= n/2 = {sample.n / 2}"))
    refit = _stage("refit", lad_refit, sample, union, True)
    vhat = _stage("instrument", build_instruments, sample, stages.post_theta)
    gfit = sample.x @ refit.beta
    interval = param_interval(refit.alpha, sample, cfg.interval_const)
    diag = _step_diag(fit, lasso)
    diag["union_support"] = [int(j) for j in union]
    return _finish(sample, cfg, Algorithm.ALG3, refit.alpha, gfit, vhat, interval, diag)


def run_algorithm(sample: Sample, cfg: OrthoConfig | None = None,
                  rng: RngStream | None = None, stages: Stages | None = None) -> InferenceResult:
    """Run Algorithm 1 (post-selection), 2 (penalized), double selection or one-step.

    ``stages`` lets several algorithms share the step (i) and (ii) fits of one
    sample; it must have been built with the same tuning as ``cfg``.
    """
    cfg = cfg or OrthoConfig()
    alg = cfg.algorithm
    if sample.p == 0:
        refit = _stage("refit", lad_refit, sample, [], True)
        vhat = sample.d - sample.d.mean()
        if np.mean(vhat * vhat) < INSTRUMENT_TOL:
            raise StageError("instrument", InstrumentDegenerate("d is constant"))
        gfit = np.zeros(sample.n)
        interval = param_interval(refit.alpha, sample, cfg.interval_const)
        alpha_check, _ = ScoreProfile(sample.y, sample.d, gfit, vhat, interval).minimize()
        return _finish(sample, cfg, alg, alpha_check, gfit, vhat, interval,
                       {"no_controls": True, "lad_alpha": refit.alpha})

    stages = stages or Stages(sample, cfg, rng or RngStream(cfg.seed, 0))
    if alg is Algorithm.ALG3:
        return double_selection(sample, cfg, stages=stages)

    fit, lasso = stages.fit, stages.lasso
    diag = _step_diag(fit, lasso)
    if alg is Algorithm.ALG2:
        beta, center = fit.beta, fit.alpha
        theta = lasso.theta
    else:
        if alg is Algorithm.ALG1:
            beta, center = stages.refit.beta, stages.refit.alpha
            diag["refit_alpha"] = stages.refit.alpha
        else:
            beta, center = fit.beta, fit.alpha
        theta = stages.post_theta
    vhat = _stage("instrument", build_instruments, sample, theta)
    gfit = sample.x @ beta
    interval = param_interval(center, sample, cfg.interval_const)

    if alg is Algorithm.ONESTEP:
        e1 = sample.y - sample.d * fit.alpha - gfit
        f0 = density_at_zero(e1, select_bandwidth(e1, cfg.bandwidth, cfg.c_h, cfg.xi))
        if f0 <= 0:
            raise StageError("one_step", ZeroDivisionError("zero density estimate at 0"))
        alpha_check = one_step(fit.alpha, sample.y, sample.d, gfit, vhat, f0)
        diag["f_eps0_step1"] = f0
    else:
        alpha_check, _ = _stage("minimize_score", minimize_score,
                                sample.y, sample.d, gfit, vhat, interval)
    return _finish(sample, cfg, alg, alpha_check, gfit, vhat, interval, diag)
