import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from orthomed.data import PenaltyWeights, RngStream, Sample, column_loadings
from orthomed.exceptions import RankDeficientWarning
from orthomed.qr_l1 import (LadFit, SolverStatus, lad_refit, pivotal_penalty_median,
                            solve_l1_median, truncate_coefficients)


def linprog_oracle(X, y, pen):
    """``min sum|y - Xb| / n + sum pen_j |b_j| / n`` as an LP solved by HiGHS."""
    n, k = X.shape
    # variables: b+, b-, u+, u-
    c = np.concatenate([pen, pen, np.ones(n), np.ones(n)]) / n
    A = np.hstack([X, -X, np.eye(n), -np.eye(n)])
    res = linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return res.fun


def vertex_oracle(X, y):
    n, p = X.shape
    best = np.inf
    for rows in itertools.combinations(range(n), p):
        A = X[list(rows)]
        if abs(np.linalg.det(A)) > 1e-12:
            b = np.linalg.solve(A, y[list(rows)])
            best = min(best, np.mean(np.abs(y - X @ b)))
    return best


def test_intercept_only_is_median():
    s = Sample([1.0, 2.0, 9.0], np.ones(3), np.zeros((3, 0)))
    fit = solve_l1_median(s, 0.0, PenaltyWeights([1.0]))
    assert fit.alpha == pytest.approx(2.0, abs=1e-7)


def test_perfect_fit():
    rng = np.random.default_rng(1)
    d = rng.standard_normal(10)
    fit = solve_l1_median(Sample(2 * d, d, np.ones((10, 1))), 0.0)
    assert fit.alpha == pytest.approx(2.0, abs=1e-7)
    assert abs(fit.beta[0]) < 1e-7 and fit.objective < 1e-7


@pytest.mark.parametrize("seed", range(5))
def test_unpenalized_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, p = 15 + seed, 1 + seed % 3
    X = rng.standard_normal((n, p))
    y = X @ rng.standard_normal(p) + rng.standard_t(2, n)
    fit = solve_l1_median(Sample(y, X[:, 0], X[:, 1:]), 0.0, PenaltyWeights(np.ones(p)))
    assert fit.objective == pytest.approx(vertex_oracle(X, y), abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_penalized_matches_lp(seed):
    rng = np.random.default_rng(100 + seed)
    n, p = 30, 3
    d = rng.standard_normal(n)
    x = rng.standard_normal((n, p))
    y = 0.5 * d + x[:, 0] + rng.standard_normal(n)
    s = Sample(y, d, x)
    w = column_loadings(s)
    fit = solve_l1_median(s, 5.0, w)
    assert fit.solver_status is SolverStatus.OPTIMAL
    assert fit.objective == pytest.approx(linprog_oracle(s.xtilde, y, 5.0 * w.psi), abs=1e-6)


def test_zero_penalty_loading_leaves_column_free():
    rng = np.random.default_rng(3)
    s = Sample(rng.standard_normal(41) + 5.0, rng.standard_normal(41), np.ones((41, 1)))
    w = PenaltyWeights([1.0, 0.0])
    fit = solve_l1_median(s, 1e4, w)
    assert fit.alpha == pytest.approx(0.0, abs=1e-6)
    assert fit.beta[0] == pytest.approx(np.median(s.y), abs=1e-6)


def test_huge_penalty_gives_zero():
    rng = np.random.default_rng(4)
    s = Sample(rng.standard_normal(30), rng.standard_normal(30), rng.standard_normal((30, 4)))
    fit = solve_l1_median(s, 1e6)
    assert np.all(np.abs(fit.coef) < 1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.one_of(st.just(0.0), st.floats(0.5, 40.0)))
def test_objective_not_above_lp(seed, lam):
    rng = np.random.default_rng(seed)
    n, p = 20, 4
    s = Sample(rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal((n, p)))
    w = column_loadings(s)
    fit = solve_l1_median(s, lam, w)
    assert fit.objective <= linprog_oracle(s.xtilde, s.y, lam * w.psi) + 1e-6


def test_refit_empty_support_is_lad_on_d():
    rng = np.random.default_rng(5)
    d = rng.standard_normal(25)
    y = 1.5 * d + rng.standard_normal(25)
    s = Sample(y, d, rng.standard_normal((25, 3)))
    fit = lad_refit(s, [])
    direct = solve_l1_median(Sample(y, d, np.zeros((25, 0))), 0.0, PenaltyWeights([1.0]))
    assert fit.alpha == pytest.approx(direct.alpha, abs=1e-7)
    assert fit.lam == 0.0 and np.all(fit.beta == 0)


def test_refit_full_support_equals_unpenalized():
    rng = np.random.default_rng(6)
    s = Sample(rng.standard_normal(30), rng.standard_normal(30), rng.standard_normal((30, 3)))
    a = lad_refit(s, [0, 1, 2])
    b = solve_l1_median(s, 0.0)
    assert np.allclose(a.coef, b.coef, atol=1e-6)


def test_refit_reduces_data_loss():
    rng = np.random.default_rng(7)
    n, p = 40, 5
    x = rng.standard_normal((n, p))
    d = rng.standard_normal(n)
    s = Sample(d + x[:, 0] + rng.standard_normal(n), d, x)
    pen = solve_l1_median(s, 10.0)
    ref = lad_refit(s, pen.support)
    loss = lambda f: np.mean(np.abs(s.y - s.d * f.alpha - s.x @ f.beta))
    assert loss(ref) <= loss(pen) + 1e-9


def test_refit_drops_collinear_columns():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((30, 2))
    x = np.column_stack([x, x[:, 0]])
    s = Sample(rng.standard_normal(30), rng.standard_normal(30), x)
    with pytest.warns(RankDeficientWarning):
        fit = lad_refit(s, [0, 1, 2])
    assert fit.beta[2] == 0.0


def test_pivotal_rademacher_oracle():
    n = 50
    s = Sample(np.zeros(n), np.ones(n), np.zeros((n, 0)))
    lam = pivotal_penalty_median(s, 0.5, 1.1, 20000, RngStream(1, 0))
    rng = np.random.default_rng(2)
    R = rng.choice([-1.0, 1.0], size=(20000, n))
    expected = np.median(np.abs(R.mean(axis=1)))
    assert lam / (1.1 * n) == pytest.approx(expected, abs=0.01)


def test_pivotal_monotone_in_gamma():
    rng = np.random.default_rng(9)
    s = Sample(rng.standard_normal(60), rng.standard_normal(60), rng.standard_normal((60, 10)))
    hi = pivotal_penalty_median(s, 0.01, 1.1, 2000, RngStream(3, 0))
    lo = pivotal_penalty_median(s, 0.999, 1.1, 2000, RngStream(3, 0))
    assert lo <= hi


def test_pivotal_default_sentinels():
    rng = np.random.default_rng(10)
    s = Sample(rng.standard_normal(60), rng.standard_normal(60), rng.standard_normal((60, 10)))
    a = pivotal_penalty_median(s, "default", "default", 500, RngStream(4, 0))
    b = pivotal_penalty_median(s, 0.1 / np.log(60), 1.1, 500, RngStream(4, 0))
    assert a == b


def _fit(beta):
    beta = np.asarray(beta, dtype=float)
    return LadFit(alpha=0.0, beta=beta, support=np.flatnonzero(beta), objective=0.0, lam=0.0)


def test_truncate():
    assert truncate_coefficients(_fit([3, -5, 1]), 2).beta.tolist() == [3, -5, 0]
    f = _fit([3, 0, 1])
    assert truncate_coefficients(f, 5) is f
    out = truncate_coefficients(_fit([1, -1, 1]), 1)
    assert out.beta.tolist() == [1, 0, 0] and out.support.tolist() == [0]
