import numpy as np
import pytest

from orthomed.data import Sample


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def make_sample(rng, n=60, p=5, alpha=0.5, noise="normal"):
    x = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))]) if p else np.zeros((n, 0))
    d = (x[:, 1] if p > 1 else 0.0) * 0.5 + rng.standard_normal(n)
    eps = rng.standard_normal(n) if noise == "normal" else rng.standard_t(3, n)
    beta = np.zeros(p)
    if p > 1:
        beta[1] = 1.0
    y = alpha * d + (x @ beta if p else 0.0) + eps
    return Sample(y, d, x)
