import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from orthomed.variance import (density_at_zero, estimate_variance, hall_sheather,
                               koenker_bandwidth, omega_hat, powell_bandwidth, powell_J,
                               product_J, select_bandwidth, sigma_homoscedastic, sigma_robust,
                               wald_ci)


def test_omega():
    assert omega_hat([1, -1, 1, -1]) == 0.25
    assert omega_hat(np.zeros(5)) == 0.0
    v = np.random.default_rng(0).standard_normal(30)
    assert omega_hat(v) == pytest.approx(sum(t * t for t in v) / 30 / 4, abs=1e-12)


def test_powell_bandwidth():
    e = np.random.default_rng(1).standard_normal(1000)
    e = (e - e.mean()) / e.std(ddof=1)
    assert powell_bandwidth(e) == pytest.approx(0.1, rel=1e-12)
    assert powell_bandwidth(e, 2.0) == pytest.approx(0.2, rel=1e-12)
    assert powell_bandwidth(np.ones(50)) == 1e-8


def test_hall_sheather_value():
    # closed form at the median: n^{-1/3} z^{2/3} (1.5 phi(0)^2)^{1/3}
    z = norm.ppf(0.975)
    assert hall_sheather(1000) == pytest.approx(0.1 * z ** (2 / 3) * (1.5 * norm.pdf(0) ** 2) ** (1 / 3))


def test_koenker_bandwidth_scale_equivariant():
    e = np.random.default_rng(2).standard_normal(300)
    assert koenker_bandwidth(3 * e) == pytest.approx(3 * koenker_bandwidth(e))
    assert koenker_bandwidth(np.zeros(50)) == 1e-8
    assert select_bandwidth(e, "scaled-sd", 2.0) == powell_bandwidth(e, 2.0)
    with pytest.raises(ValueError):
        select_bandwidth(e, "silverman")


def test_powell_J_example():
    e, one = np.array([0.1, -0.2, 3.0]), np.ones(3)
    assert powell_J(e, one, one, 0.5) == pytest.approx(2 / 3)
    assert density_at_zero(e, 0.5) == pytest.approx(2 / 3)
    assert product_J(e, one, one, 0.5) == pytest.approx(2 / 3)


def test_powell_J_large_bandwidth_vanishes():
    e = np.array([0.1, -0.2, 3.0])
    assert abs(powell_J(e, np.ones(3), np.ones(3), 1e9)) < 1e-8


def test_density_monte_carlo():
    rng = np.random.default_rng(3)
    vals = []
    for _ in range(100):
        e = rng.standard_normal(5000)
        vals.append(density_at_zero(e, powell_bandwidth(e)))
    assert np.median(vals) == pytest.approx(norm.pdf(0), rel=0.10)


def test_powell_J_monte_carlo():
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(100):
        n = 2000
        v = rng.standard_normal(n)
        d = 0.5 + v
        e = rng.standard_normal(n)
        j = powell_J(e, d, v, powell_bandwidth(e))
        ratios.append(j / (norm.pdf(0) * np.mean(v * v)))
    assert np.median(ratios) == pytest.approx(1.0, abs=0.15)


def test_sigma_formulas():
    assert sigma_robust(0.25, 0.5) == pytest.approx(1.0)
    v = np.random.default_rng(5).standard_normal(50)
    f = 0.37
    j = f * np.mean(v * v)
    assert sigma_robust(omega_hat(v), j) == pytest.approx(sigma_homoscedastic(f, v), rel=1e-12)


def test_wald_ci():
    lo, hi = wald_ci(0.0, 1.0, 100, 0.05)
    assert hi == pytest.approx(0.19600, abs=1e-5) and lo == -hi
    lo, hi = wald_ci(1.0, 1.0, 100, 0.999999)
    assert hi - lo < 1e-5
    a = wald_ci(0.0, 1.0, 100)
    b = wald_ci(0.0, 3.0, 100)
    assert b[1] == pytest.approx(3 * a[1])


def test_estimate_variance_flags():
    e = np.full(20, 5.0) + np.arange(20)
    v = np.random.default_rng(6).standard_normal(20)
    out = estimate_variance(e, v, v, j_method="pointwise", bandwidth="scaled-sd")
    assert out.flags
    with pytest.raises(ValueError):
        estimate_variance(e, v, v, j_method="other")


def test_simulated_formulas_agree():
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(50):
        n = 500
        v = rng.standard_normal(n)
        e = rng.standard_normal(n)
        out = estimate_variance(e, v, v, j_method="pointwise")
        ratios.append(out.sigma2 / out.sigma2_homoscedastic)
    assert np.median(ratios) == pytest.approx(1.0, abs=0.2)


@given(st.lists(st.floats(-10, 10), min_size=10, max_size=60), st.floats(0.01, 5))
def test_density_nonnegative(e, h):
    assert density_at_zero(np.array(e), h) >= 0
