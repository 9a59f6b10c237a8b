"""Monte Carlo designs and replication harness.

Design::

    y = d a0 + x'(c_y theta0) + eps,    d = x'(c_d theta0) + v,
    x = (1, z')',  z ~ N(0, Sigma),  Sigma_ij = rho^|i-j|,  eps, v ~ N(0, 1)

with ``theta0_j = 1/j^2`` (``j`` counts the intercept as 1) either for
``j <= 10`` only or for every ``j``.  ``c_y`` and ``c_d`` are set so that the
two equations have the requested R^2.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .data import RngStream, Sample
from .exceptions import OrthomedError
from .ortho import Algorithm, OrthoConfig, Stages, naive_post_selection, run_algorithm

Z975 = float(norm.ppf(0.975))
CHI2_95 = 3.841458820694124
DESK_GRID = (0.0, 0.3, 0.5, 0.7, 0.9)
FULL_GRID = tuple(round(0.1 * k, 1) for k in range(10))


class ThetaProfile(str, Enum):
    EXACT_SPARSE_10 = "ExactSparse10"
    POLY_DECAY_ALL = "PolyDecayAll"


class Method(str, Enum):
    NAIVE_POST = "NaivePost"
    ORTHO_ALG1 = "OrthoAlg1"
    ORTHO_ALG2 = "OrthoAlg2"
    DOUBLE_SEL = "DoubleSel"
    SCORE_TEST = "ScoreTest"


ALL_METHODS = tuple(Method)


@dataclass(frozen=True)
class DesignSpec:
    n: int = 250
    p: int = 300
    rho: float = 0.5
    r2y: float = 0.5
    r2d: float = 0.5
    alpha0: float = 0.5
    theta_profile: ThetaProfile = ThetaProfile.EXACT_SPARSE_10
    seed: int = 20140101

    def __post_init__(self):
        object.__setattr__(self, "theta_profile", ThetaProfile(self.theta_profile))
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if self.p < 2:
            raise ValueError("p must include the intercept and one covariate")
        if not (0 <= self.r2y < 1 and 0 <= self.r2d < 1):
            raise ValueError("R^2 values must lie in [0, 1)")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")

    def key(self) -> tuple:
        """Integer key used to derive replication streams."""
        prof = list(ThetaProfile).index(self.theta_profile)
        return (self.n, self.p, round(self.rho * 1000), round(self.r2y * 1000),
                round(self.r2d * 1000), round(self.alpha0 * 1000), prof)

    def theta0(self) -> np.ndarray:
        j = np.arange(1, self.p + 1, dtype=float)
        theta = 1.0 / j ** 2
        if self.theta_profile is ThetaProfile.EXACT_SPARSE_10:
            theta[10:] = 0.0
        return theta

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta_profile"] = self.theta_profile.value
        return out


@dataclass(frozen=True)
class ReplicationOutcome:
    method: Method
    alpha_est: float
    sigma_est: float
    reject05: bool
    covered95: bool
    design: DesignSpec | None = None
    rep: int = -1
    failed: bool = False
    error: str = ""


def toeplitz_cov(k: int, rho: float) -> np.ndarray:
    idx = np.arange(k)
    return rho ** np.abs(np.subtract.outer(idx, idx))


@lru_cache(maxsize=16)
def _toeplitz_chol(k: int, rho: float) -> np.ndarray:
    L = np.linalg.cholesky(toeplitz_cov(k, rho))
    L.setflags(write=False)
    return L


def toeplitz_cholesky(k: int, rho: float) -> np.ndarray:
    """Lower Cholesky factor of ``Sigma_ij = rho^|i-j|``."""
    return _toeplitz_chol(int(k), float(rho))


def scale_for_r2(theta_tail, Sigma, r2: float) -> float:
    """Scale ``c`` with ``c^2 q / (c^2 q + 1) = r2`` where ``q = theta' Sigma theta``."""
    if not 0 <= r2 < 1:
        raise ValueError("r2 must lie in [0, 1)")
    if r2 == 0:
        return 0.0
    theta_tail = np.asarray(theta_tail, dtype=float)
    q = float(theta_tail @ np.asarray(Sigma) @ theta_tail)
    if q <= 0:
        raise ValueError("theta' Sigma theta must be positive when r2 > 0")
    return float(np.sqrt(r2 / ((1.0 - r2) * q)))


def design_scales(design: DesignSpec) -> tuple[float, float]:
    Sigma = toeplitz_cov(design.p - 1, design.rho)
    tail = design.theta0()[1:]
    return scale_for_r2(tail, Sigma, design.r2y), scale_for_r2(tail, Sigma, design.r2d)


def generate(design: DesignSpec, rng: RngStream | np.random.Generator) -> Sample:
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n, p = design.n, design.p
    L = toeplitz_cholesky(p - 1, design.rho)
    z = gen.standard_normal((n, p - 1)) @ L.T
    x = np.column_stack([np.ones(n), z])
    theta = design.theta0()
    cy, cd = design_scales(design)
    v = gen.standard_normal(n)
    eps = gen.standard_normal(n)
    d = x @ (cd * theta) + v
    y = d * design.alpha0 + x @ (cy * theta) + eps
    return Sample(y, d, x)


def replication_stream(design: DesignSpec, rep: int) -> RngStream:
    return RngStream(design.seed, design.key() + (int(rep),))


def _wald(method, est, sigma, alpha0, n, design, rep):
    if not (np.isfinite(est) and np.isfinite(sigma) and sigma > 0):
        return ReplicationOutcome(method, est, sigma, False, False, design, rep, True,
                                  "non-finite estimate or standard error")
    t = abs(est - alpha0) * np.sqrt(n) / sigma
    return ReplicationOutcome(method, float(est), float(sigma), bool(t > Z975),
                              bool(t <= Z975), design, rep)


def replicate(design: DesignSpec, rep: int, methods=ALL_METHODS,
              cfg: OrthoConfig | None = None) -> list[ReplicationOutcome]:
    """All requested methods on one generated sample; a pure function of its inputs."""
    methods = [Method(m) for m in methods]
    stream = replication_stream(design, rep)
    sample = generate(design, stream.child(0))
    cfg = cfg or OrthoConfig()
    stages = Stages(sample, cfg, stream.child(1))
    out = []
    alg1 = None
    for m in methods:
        try:
            if m is Method.NAIVE_POST:
                est, sd = naive_post_selection(sample, stages.refit, cfg.c_h,
                                               cfg.bandwidth)
                out.append(_wald(m, est, sd, design.alpha0, design.n, design, rep))
            elif m in (Method.ORTHO_ALG1, Method.SCORE_TEST):
                if alg1 is None:
                    alg1 = run_algorithm(sample, replace(cfg, algorithm=Algorithm.ALG1),
                                         stages=stages)
                if m is Method.ORTHO_ALG1:
                    out.append(_wald(m, alg1.alpha_check, alg1.sigma_hat,
                                     design.alpha0, design.n, design, rep))
                else:
                    stat = float(design.n * alg1.profile.stat(design.alpha0)[0])
                    rej = stat > CHI2_95
                    out.append(ReplicationOutcome(m, alg1.alpha_check, alg1.sigma_hat,
                                                  rej, not rej, design, rep))
            else:
                alg = Algorithm.ALG2 if m is Method.ORTHO_ALG2 else Algorithm.ALG3
                res = run_algorithm(sample, replace(cfg, algorithm=alg), stages=stages)
                out.append(_wald(m, res.alpha_check, res.sigma_hat,
                                 design.alpha0, design.n, design, rep))
        except (OrthomedError, np.linalg.LinAlgError, ValueError, ZeroDivisionError) as exc:
            out.append(ReplicationOutcome(m, float("nan"), float("nan"), False, False,
                                          design, rep, True, f"{type(exc).__name__}: {exc}"))
    return out


def _task(args):
    design, rep, methods, cfg = args
    return replicate(design, rep, methods, cfg)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("ORTHOMED_THREADS", "1"))
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def run_replications(designs, reps: int, methods=ALL_METHODS, threads: int | None = None,
                     cfg: OrthoConfig | None = None) -> list[ReplicationOutcome]:
    """Every (design, rep) pair; output order is independent of ``threads``."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    threads = resolve_threads(threads)
    methods = tuple(Method(m) for m in methods)
    tasks = [(d, r, methods, cfg) for d in designs for r in range(reps)]
    if threads == 1:
        chunks = map(_task, tasks)
        return [o for chunk in chunks for o in chunk]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        chunks = ex.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * threads)))
        return [o for chunk in chunks for o in chunk]


@dataclass(frozen=True)
class MetricsRow:
    r2y: float
    r2d: float
    method: str
    reps_ok: int
    failures: int
    rejection_rate: float
    coverage: float
    mean_bias: float
    sd: float
    rmse: float
    theta_profile: str = ThetaProfile.EXACT_SPARSE_10.value


def summarize(outcomes, alpha0: float | None = None) -> list[MetricsRow]:
    """Rejection rate, mean bias, standard deviation and RMSE per (design, method).

    SD uses the ``1/R`` divisor so that ``RMSE^2 = bias^2 + SD^2``.
    """
    groups: dict = {}
    for o in outcomes:
        groups.setdefault((o.design, o.method), []).append(o)
    rows = []
    for (design, method), items in groups.items():
        ok = [o for o in items if not o.failed]
        a0 = design.alpha0 if design is not None else alpha0
        est = np.array([o.alpha_est for o in ok], dtype=float)
        if est.size:
            err = est - a0
            bias = float(np.mean(err))
            sd = float(np.sqrt(np.mean((est - est.mean()) ** 2)))
            rmse = float(np.sqrt(np.mean(err ** 2)))
            rej = float(np.mean([o.reject05 for o in ok]))
            cov = float(np.mean([o.covered95 for o in ok]))
        else:
            bias = sd = rmse = rej = cov = float("nan")
        rows.append(MetricsRow(
            r2y=design.r2y if design else float("nan"),
            r2d=design.r2d if design else float("nan"),
            method=Method(method).value, reps_ok=len(ok), failures=len(items) - len(ok),
            rejection_rate=rej, coverage=cov, mean_bias=bias, sd=sd, rmse=rmse,
            theta_profile=design.theta_profile.value if design else ""))
    return rows


def grid_designs(values=DESK_GRID, base: DesignSpec | None = None) -> list[DesignSpec]:
    base = base or DesignSpec()
    return [replace(base, r2y=ry, r2d=rd) for ry in values for rd in values]


def run_grid(designs, reps: int, methods=ALL_METHODS, threads: int | None = None,
             cfg: OrthoConfig | None = None) -> list[MetricsRow]:
    return summarize(run_replications(designs, reps, methods, threads, cfg))


_METRICS = ("rejection_rate", "coverage", "mean_bias", "sd", "rmse", "reps_ok", "failures")


def rows_to_long_csv(rows) -> str:
    """Long format ``r2y,r2d,theta_profile,method,metric,value`` (gnuplot friendly)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r2y", "r2d", "theta_profile", "method", "metric", "value"])
    for r in rows:
        for m in _METRICS:
            w.writerow([repr(r.r2y), repr(r.r2d), r.theta_profile, r.method, m,
                        repr(float(getattr(r, m)))])
    return buf.getvalue()


def rows_to_json(rows) -> list[dict]:
    return [asdict(r) for r in rows]


def write_tables(rows, out_dir: str | Path, stem: str = "grid") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    json_path = out_dir / f"{stem}.json"
    csv_path.write_text(rows_to_long_csv(rows))
    json_path.write_text(json.dumps(rows_to_json(rows), indent=2, sort_keys=True))
    return csv_path, json_path


@dataclass(frozen=True)
class ManyTargetDesign:
    """``y = D a + U b + eps`` with independent N(0, 1) target columns.

    ``U = (1, z)`` with Toeplitz-correlated ``z``; ``b_j = 1/j^2`` on the first
    ``s_u`` columns of ``U``.  Targets ``j < p1 // 2`` have ``a_j = 0.5``, the
    rest ``a_j = 0``.
    """

    n: int = 250
    p1: int = 20
    pu: int = 20
    s_u: int = 5
    rho: float = 0.5
    seed: int = 20140102

    def alpha(self) -> np.ndarray:
        a = np.zeros(self.p1)
        a[: self.p1 // 2] = 0.5
        return a

    def beta(self) -> np.ndarray:
        b = np.zeros(self.pu)
        k = min(self.s_u, self.pu)
        b[:k] = 1.0 / np.arange(1, k + 1) ** 2
        return b

    def generate(self, rep: int):
        gen = RngStream(self.seed, (self.n, self.p1, self.pu, int(rep))).generator()
        D = gen.standard_normal((self.n, self.p1))
        z = gen.standard_normal((self.n, self.pu - 1)) @ toeplitz_cholesky(self.pu - 1, self.rho).T
        U = np.column_stack([np.ones(self.n), z])
        y = D @ self.alpha() + U @ self.beta() + gen.standard_normal(self.n)
        return y, D, U
