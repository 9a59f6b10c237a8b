"""Plug-in variance components for the orthogonal median estimator.

The error density at zero is estimated with Powell's boxcar kernel,
``f_hat = (2 h n)^{-1} #{|e_i| <= h}``.  Two estimators of ``J = E(f d v)``
are available:

* ``"product"`` (default): ``f_hat * E_n(d vhat)``, valid when the error is
  independent of ``(d, x)``;
* ``"pointwise"``: ``(2 h n)^{-1} sum_i 1{|e_i| <= h} d_i vhat_i``.

Bandwidths follow either Koenker's rule built on the Hall-Sheather rate
(``"koenker"``, default) or ``c_h * sd(e) * n^{-1/3}`` (``"scaled-sd"``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

BANDWIDTH_FLOOR = 1e-8
J_TOL = 1e-10
DENSITY_TOL = 1e-10


@dataclass(frozen=True)
class VarianceEstimate:
    omega: float
    j_hat: float
    sigma2: float
    f_eps0: float
    bandwidth: float
    sigma2_homoscedastic: float = float("nan")
    flags: tuple = ()

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "j_hat": self.j_hat,
            "sigma2_robust": self.sigma2,
            "sigma2_homoscedastic": self.sigma2_homoscedastic,
            "f_eps0": self.f_eps0,
            "bandwidth": self.bandwidth,
            "flags": list(self.flags),
        }


def omega_hat(vhat) -> float:
    """``E_n(vhat^2) / 4``."""
    vhat = np.asarray(vhat, dtype=float)
    if vhat.size == 0:
        raise ValueError("vhat must be non-empty")
    return float(np.mean(vhat * vhat) / 4.0)


BANDWIDTH_RULES = ("koenker", "scaled-sd")
J_METHODS = ("product", "pointwise")


def powell_bandwidth(residuals, c_h: float = 1.0) -> float:
    """``c_h * sd(e) * n^{-1/3}``, floored at ``1e-8``."""
    residuals = np.asarray(residuals, dtype=float)
    n = residuals.size
    if n < 10:
        raise ValueError("bandwidth rule needs n >= 10")
    h = c_h * float(np.std(residuals, ddof=1)) * n ** (-1.0 / 3.0)
    return max(h, BANDWIDTH_FLOOR)


def hall_sheather(n: int, xi: float = 0.05, tau: float = 0.5) -> float:
    """Hall-Sheather bandwidth on the probability scale."""
    z = norm.ppf(1.0 - xi / 2.0)
    q = norm.ppf(tau)
    return float(n ** (-1.0 / 3.0) * z ** (2.0 / 3.0)
                 * (1.5 * norm.pdf(q) ** 2 / (2.0 * q * q + 1.0)) ** (1.0 / 3.0))


def koenker_bandwidth(residuals, xi: float = 0.05) -> float:
    """``kappa * (Phi^{-1}(1/2 + h_n) - Phi^{-1}(1/2 - h_n))``.

    ``h_n`` is the Hall-Sheather bandwidth and ``kappa = min(sd, IQR / 1.34)``
    a robust residual scale.  Floored at ``1e-8``.
    """
    residuals = np.asarray(residuals, dtype=float)
    n = residuals.size
    if n < 10:
        raise ValueError("bandwidth rule needs n >= 10")
    hn = min(hall_sheather(n, xi), 0.49)
    q75, q25 = np.percentile(residuals, [75, 25])
    kappa = min(float(np.std(residuals, ddof=1)), float(q75 - q25) / 1.34)
    h = kappa * (norm.ppf(0.5 + hn) - norm.ppf(0.5 - hn))
    return max(float(h), BANDWIDTH_FLOOR)


def select_bandwidth(residuals, rule: str = "koenker", c_h: float = 1.0,
                     xi: float = 0.05) -> float:
    if rule == "koenker":
        return koenker_bandwidth(residuals, xi)
    if rule == "scaled-sd":
        return powell_bandwidth(residuals, c_h)
    raise ValueError(f"unknown bandwidth rule {rule!r}")


def powell_J(residuals, d, vhat, h: float) -> float:
    residuals = np.asarray(residuals, dtype=float)
    d = np.asarray(d, dtype=float)
    vhat = np.asarray(vhat, dtype=float)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    if not residuals.shape == d.shape == vhat.shape:
        raise ValueError("residuals, d and vhat must have equal length")
    inside = np.abs(residuals) <= h
    return float(np.sum(d[inside] * vhat[inside]) / (2.0 * h * residuals.size))


def product_J(residuals, d, vhat, h: float) -> float:
    """``f_hat(0) * E_n(d vhat)``."""
    d = np.asarray(d, dtype=float)
    vhat = np.asarray(vhat, dtype=float)
    if d.shape != vhat.shape:
        raise ValueError("d and vhat must have equal length")
    return density_at_zero(residuals, h) * float(np.mean(d * vhat))


def density_at_zero(residuals, h: float) -> float:
    residuals = np.asarray(residuals, dtype=float)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    return float(np.count_nonzero(np.abs(residuals) <= h) / (2.0 * h * residuals.size))


def sigma_robust(omega: float, j_hat: float) -> float:
    """Sandwich variance ``Omega / J^2``."""
    if j_hat == 0:
        raise ZeroDivisionError("J_hat is zero")
    return float(omega / (j_hat * j_hat))


def sigma_homoscedastic(f_eps0: float, vhat) -> float:
    """Efficiency-bound variance ``1 / (4 f^2 E_n vhat^2)``."""
    vhat = np.asarray(vhat, dtype=float)
    ev2 = float(np.mean(vhat * vhat))
    if f_eps0 <= 0 or ev2 <= 0:
        raise ZeroDivisionError("density and instrument variance must be positive")
    return float(1.0 / (4.0 * f_eps0 ** 2 * ev2))


def wald_ci(alpha_check: float, sigma: float, n: int, xi: float = 0.05) -> tuple[float, float]:
    """``alpha_check -/+ sigma n^{-1/2} Phi^{-1}(1 - xi/2)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0 < xi < 1:
        raise ValueError("xi must lie in (0, 1)")
    half = sigma / np.sqrt(n) * norm.ppf(1.0 - xi / 2.0)
    return (float(alpha_check - half), float(alpha_check + half))


def estimate_variance(residuals, d, vhat, c_h: float = 1.0, bandwidth: str = "koenker",
                      j_method: str = "product", xi: float = 0.05) -> VarianceEstimate:
    """All components at once; degeneracies are reported in ``flags``."""
    if j_method not in J_METHODS:
        raise ValueError(f"unknown J estimator {j_method!r}")
    h = select_bandwidth(residuals, bandwidth, c_h, xi)
    om = omega_hat(vhat)
    jfun = product_J if j_method == "product" else powell_J
    j = jfun(residuals, d, vhat, h)
    f = density_at_zero(residuals, h)
    flags = []
    if abs(j) < J_TOL:
        flags.append("JDegenerate")
        s2 = float("nan")
    else:
        s2 = sigma_robust(om, j)
    if f < DENSITY_TOL:
        flags.append("ZeroDensity")
        s2h = float("nan")
    else:
        s2h = sigma_homoscedastic(f, vhat)
    return VarianceEstimate(omega=om, j_hat=j, sigma2=s2, f_eps0=f, bandwidth=h,
                            sigma2_homoscedastic=s2h, flags=tuple(flags))
