"""Inference on many target coefficients at once.

Each column ``D[:, j]`` is treated in turn as the treatment, with the other
columns of ``D`` and all of ``U`` as controls.  The studentized influence
values

    phi_j(w_i) = psi_j(w_i) / (sigma_j J_j),   psi_j = phi(y - d_j a_j - g_j) (d_j - m_j)

feed a Gaussian multiplier bootstrap for the sup-t critical value.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import RngStream, Sample
from .exceptions import OrthomedError
from .ortho import Algorithm, OrthoConfig, run_algorithm

BLOCK = 256
DEFAULT_DRAWS = 2000


@dataclass(frozen=True)
class TargetEstimates:
    """Per-target estimates; failed targets carry NaN and an error message."""

    alpha: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    n: int
    errors: tuple = ()
    diagnostics: tuple = field(default=(), repr=False)

    @property
    def ok(self) -> np.ndarray:
        return np.array([e == "" for e in self.errors], dtype=bool)

    @property
    def p1(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class InfluenceMatrix:
    """``n x k`` studentized influence values for the ``k`` usable targets."""

    phi: np.ndarray
    targets: np.ndarray

    def second_moments(self) -> np.ndarray:
        return np.mean(self.phi ** 2, axis=0)


def target_sample(y, D, U, j: int) -> Sample:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.shape[0] != np.size(y):
        D = D.T
    U = np.asarray(U, dtype=float).reshape(D.shape[0], -1)
    others = np.delete(D, j, axis=1)
    return Sample(y, D[:, j], np.column_stack([others, U]))


def _fit_one(args):
    y, D, U, j, cfg, rng = args
    try:
        s = target_sample(y, D, U, j)
        res = run_algorithm(s, cfg, rng)
        if not (np.isfinite(res.sigma_hat) and res.sigma_hat > 0):
            raise OrthomedError("variance estimate is degenerate: "
                                + ",".join(res.variance.flags))
        # Gamma_j = d/da E[psi] = -J_j
        gamma = -res.variance.j_hat
        psi = res.scores(s.y, s.d)
        phi = -psi / (res.sigma_hat * gamma)
        diag = {"target": j, **res.diagnostics}
        return res.alpha_check, res.sigma_hat, gamma, phi, "", diag
    except (OrthomedError, np.linalg.LinAlgError, ValueError, ZeroDivisionError) as exc:
        return (float("nan"), float("nan"), float("nan"), None,
                f"{type(exc).__name__}: {exc}", {"target": j})


def fit_all_targets(y, D, U, config: OrthoConfig | None = None, seed: int = 0,
                    threads: int | None = None) -> tuple[TargetEstimates, InfluenceMatrix]:
    """Run the single-target pipeline for every column of ``D``.

    Target ``j`` uses random stream ``(seed, (0, j))`` so results do not depend on
    ``threads``.  Failures are recorded per target and the target is left out
    of the influence matrix.
    """
    y = np.asarray(y, dtype=float)
    D = np.asarray(D, dtype=float).reshape(y.size, -1)
    if D.shape[1] < 1:
        raise ValueError("D needs at least one column")
    U = np.zeros((y.size, 0)) if U is None else np.asarray(U, dtype=float).reshape(y.size, -1)
    cfg = config or OrthoConfig(algorithm=Algorithm.ALG1)
    if threads is None:
        threads = int(os.environ.get("ORTHOMED_THREADS", "1"))
    tasks = [(y, D, U, j, cfg, RngStream(seed, (0, j))) for j in range(D.shape[1])]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(_fit_one, tasks))
    else:
        out = [_fit_one(t) for t in tasks]
    alpha, sigma, gamma, phis, errors, diags = zip(*out)
    ok = [j for j, e in enumerate(errors) if e == ""]
    phi = (np.column_stack([phis[j] for j in ok]) if ok else np.zeros((y.size, 0)))
    est = TargetEstimates(alpha=np.array(alpha, dtype=float), sigma=np.array(sigma, dtype=float),
                          gamma=np.array(gamma, dtype=float), n=y.size, errors=tuple(errors),
                          diagnostics=tuple(diags))
    return est, InfluenceMatrix(phi=phi, targets=np.array(ok, dtype=int))


def bootstrap_stream(seed: int) -> RngStream:
    """Stream for the multiplier draws, disjoint from the per-target streams."""
    return RngStream(seed, (1,))


def bootstrap_draws(phi, B: int, rng: RngStream) -> np.ndarray:
    """``max_j |n^{-1/2} sum_i xi_i phi_ij|`` for ``B`` multiplier draws.

    Draws are generated in blocks of :data:`BLOCK`, block ``k`` from stream
    ``rng.child(k)``, so any split of the blocks across workers gives the same
    numbers.
    """
    phi = phi.phi if isinstance(phi, InfluenceMatrix) else np.asarray(phi, dtype=float)
    if B < 1:
        raise ValueError("B must be positive")
    n, k = phi.shape
    if k == 0:
        return np.zeros(B)
    out = np.empty(B)
    for b, start in enumerate(range(0, B, BLOCK)):
        m = min(BLOCK, B - start)
        xi = rng.child(b).generator().standard_normal((m, n))
        out[start:start + m] = np.max(np.abs(xi @ phi), axis=1) / np.sqrt(n)
    return out


def multiplier_bootstrap(phi, B: int = DEFAULT_DRAWS, rng: RngStream | None = None,
                         xi: float = 0.05) -> tuple[float, np.ndarray]:
    """Critical value ``c_{1-xi}`` (type-7 quantile) and the ``B`` draws."""
    if B < 200:
        raise ValueError("B must be at least 200")
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    draws = bootstrap_draws(phi, B, rng or bootstrap_stream(0))
    return float(np.quantile(draws, 1.0 - xi)), draws


def simultaneous_bands(est: TargetEstimates, c_hat: float) -> np.ndarray:
    """``alpha_j -/+ c_hat sigma_j / sqrt(n)``; rows of failed targets are NaN."""
    if c_hat < 0:
        raise ValueError("c_hat must be non-negative")
    half = c_hat * est.sigma / np.sqrt(est.n)
    return np.column_stack([est.alpha - half, est.alpha + half])


def marginal_bands(est: TargetEstimates, xi: float = 0.05) -> np.ndarray:
    return simultaneous_bands(est, float(norm.ppf(1.0 - xi / 2.0)))


def bands_csv(est: TargetEstimates, bands, truth=None) -> str:
    """CSV with ``target,alpha_hat,sigma_hat,lo,hi[,covered]``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["target", "alpha_hat", "sigma_hat", "lo", "hi"]
    if truth is not None:
        head.append("covered")
        truth = np.asarray(truth, dtype=float)
    w.writerow(head)
    for j in range(est.p1):
        lo, hi = bands[j]
        row = [j, repr(float(est.alpha[j])), repr(float(est.sigma[j])),
               repr(float(lo)), repr(float(hi))]
        if truth is not None:
            row.append(int(bool(lo <= truth[j] <= hi)))
        w.writerow(row)
    return buf.getvalue()


def joint_coverage(bands, truth, usable=None) -> bool:
    """Whether every usable band contains its true value."""
    bands = np.asarray(bands, dtype=float)
    truth = np.asarray(truth, dtype=float)
    usable = np.ones(len(truth), dtype=bool) if usable is None else np.asarray(usable)
    lo, hi = bands[usable, 0], bands[usable, 1]
    return bool(np.all((lo <= truth[usable]) & (truth[usable] <= hi)))

