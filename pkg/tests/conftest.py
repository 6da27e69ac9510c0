import math

import numpy as np
import pytest

from qafel import quantizers as q


def contract_stats(spec, dim, n_draws, seed, undo_rescale=False):
    """Empirical mean and standard error of ||Q(x)-x||^2 / ||x||^2 over
    random float32 vectors."""
    x_rng = np.random.default_rng(seed)
    q_rng = np.random.default_rng(seed + 1)
    ratios = np.empty(n_draws)
    for i in range(n_draws):
        x = x_rng.standard_normal(dim).astype(np.float32)
        deq = q.dequantize(q.quantize(spec, x, q_rng)).astype(np.float64)
        if undo_rescale:
            deq *= spec.param / dim
        x64 = x.astype(np.float64)
        ratios[i] = float(np.sum((deq - x64) ** 2) / np.sum(x64**2))
    return float(ratios.mean()), float(ratios.std(ddof=1) / math.sqrt(n_draws))


def unbiasedness_violations(spec, x, n_draws, seed, se_budget=4.0):
    """Number of components whose Monte Carlo mean deviates from x by
    more than ``se_budget`` standard errors."""
    q_rng = np.random.default_rng(seed)
    total = np.zeros(x.size)
    total_sq = np.zeros(x.size)
    for _ in range(n_draws):
        deq = q.dequantize(q.quantize(spec, x, q_rng)).astype(np.float64)
        total += deq
        total_sq += deq**2
    mean = total / n_draws
    var = np.maximum(total_sq / n_draws - mean**2, 0.0)
    se = np.sqrt(var / n_draws) + 1e-12
    return int(np.sum(np.abs(mean - np.asarray(x, dtype=np.float64)) > se_budget * se))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
