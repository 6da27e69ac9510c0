"""Theory-side quantities: learning-rate schedule sums, the geometric
residual factor phi, the learning-rate condition, the convergence-rate
upper bound, the empirical ergodic rate R, and communication summaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import MetricsLog


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class TheoryParams:
    """Inputs to the learning-rate condition and the rate bound."""

    L: float
    sigma2: float
    G: float
    delta_c: float
    delta_s: float
    K: int
    P: int
    T: int
    tau_max: int
    eta_g: float
    eta_l: tuple[float, ...]
    F_star_gap: float
    server_quantizer_biased: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.delta_c <= 1.0 and 0.0 < self.delta_s <= 1.0):
            raise AnalysisError("delta_c, delta_s must be in (0, 1]")
        if min(self.K, self.P, self.T) < 1:
            raise AnalysisError("K, P, T must be >= 1")
        if len(self.eta_l) != self.P:
            raise AnalysisError("eta_l schedule length must equal P")
        if any(v < 0 for v in (self.L, self.sigma2, self.G, self.F_star_gap, self.tau_max)):
            raise AnalysisError("constants must be non-negative")


def alpha_beta(eta_l: tuple[float, ...]) -> tuple[float, float]:
    """Sum and sum of squares of the local learning-rate schedule."""
    if not eta_l:
        raise AnalysisError("schedule must be nonempty")
    return float(sum(eta_l)), float(sum(e * e for e in eta_l))


def phi(T: int, delta_s: float, biased: bool) -> tuple[float, float]:
    """Geometric accumulation factor of the server-quantization residual.

    Returns (exact finite sum, closed-form cap).  Unbiased:
    sum_{t=1}^{T-1} (1-d)^t, capped by 1/d.  Biased:
    (2/d) * sum_{t=0}^{T-1} (1-d/2)^t, capped by 4/d^2.
    """
    if T < 1:
        raise AnalysisError("T must be >= 1")
    if not 0.0 < delta_s <= 1.0:
        raise AnalysisError("delta_s must be in (0, 1]")
    if biased:
        cap = 4.0 / delta_s**2
        r = 1.0 - delta_s / 2.0
        total = (2.0 / delta_s) * _geometric_sum(r, 0, T - 1)
    else:
        cap = 1.0 / delta_s
        total = _geometric_sum(1.0 - delta_s, 1, T - 1)
    # The closed form can overshoot the cap by rounding error; clamp so the
    # cap is honored exactly.
    return min(total, cap), cap


def _geometric_sum(ratio: float, lo: int, hi: int) -> float:
    """sum_{t=lo}^{hi} ratio^t (0 when the range is empty)."""
    if hi < lo:
        return 0.0
    if ratio == 0.0:
        return 1.0 if lo == 0 else 0.0
    if ratio == 1.0:
        return float(hi - lo + 1)
    return (ratio**lo - ratio ** (hi + 1)) / (1.0 - ratio)


@dataclass(frozen=True)
class ConditionResult:
    satisfied: bool
    margin: float  # 1 - max_p LHS


def lr_condition(params: TheoryParams) -> ConditionResult:
    """Checks the step-size condition, with phi replaced by its cap
    (1/delta_s unbiased, 4/delta_s^2 biased)."""
    alpha_p, _ = alpha_beta(params.eta_l)
    _, phi_cap = phi(params.T, params.delta_s, params.server_quantizer_biased)
    front = alpha_p * 3.0 * params.L**2 * params.eta_g**2 * phi_cap + params.L * params.eta_g
    crowd = 1.0 + (1.0 - params.delta_c) / params.K
    worst = max(front * crowd * params.P * eta for eta in params.eta_l)
    return ConditionResult(satisfied=worst <= 1.0, margin=1.0 - worst)


def sufficient_rates(
    L: float, K: int, P: int, delta_c: float, delta_s: float, biased: bool = False
) -> tuple[float, float]:
    """The simple sufficient rule: caps on eta_g and eta_l that imply the
    exact condition."""
    eta_g_max = 1.0 / L
    cap = delta_s**2 / (12.0 * P) if biased else delta_s / (3.0 * P)
    eta_l_max = min(K / (2.0 * P * (K + 1.0 - delta_c)), cap)
    return eta_g_max, eta_l_max


@dataclass(frozen=True)
class BoundTerms:
    optimization: float
    drift: float          # staleness and local-drift term
    quantization: float   # server-residual and buffered-noise term
    total: float
    phi_value: float
    condition: ConditionResult


def theoretical_bound(params: TheoryParams, use_phi_cap: bool = False) -> BoundTerms:
    """Evaluates the three-term upper bound on the ergodic rate.

    ``use_phi_cap`` swaps the exact geometric sum for its closed-form cap.
    """
    alpha_p, beta_p = alpha_beta(params.eta_l)
    phi_exact, phi_cap = phi(params.T, params.delta_s, params.server_quantizer_biased)
    phi_val = phi_cap if use_phi_cap else phi_exact
    cond = lr_condition(params)

    term1 = 2.0 * params.F_star_gap / (params.eta_g * params.T * alpha_p)
    tau = float(params.tau_max)
    stale = params.eta_g**2 * (tau**2 + tau * (1.0 - params.delta_c) / params.K) + 1.0
    term2 = 3.0 * params.L**2 * beta_p * stale * (params.sigma2 + params.P * params.G)
    term3 = (
        (3.0 * params.L**2 * params.eta_g**2 * phi_val + params.L * params.eta_g / alpha_p)
        * ((2.0 - params.delta_c) / params.K)
        * beta_p
        * (params.sigma2 + 4.0 * params.G)
    )
    return BoundTerms(
        optimization=term1,
        drift=term2,
        quantization=term3,
        total=term1 + term2 + term3,
        phi_value=phi_val,
        condition=cond,
    )


def convergence_rate(logs: MetricsLog | list[MetricsLog], T: int) -> float:
    """Ergodic rate: mean squared gradient norm over server steps
    0..T-1, averaged across runs when several logs are given."""
    if isinstance(logs, MetricsLog):
        logs = [logs]
    if not logs:
        raise AnalysisError("need at least one log")
    values = []
    for log in logs:
        if len(log.rows) < T:
            raise AnalysisError(f"log has {len(log.rows)} rows, need {T}")
        values.append(float(np.mean([row.grad_norm_sq for row in log.rows[:T]])))
    return float(np.mean(values))


def comm_summary(log: MetricsLog) -> dict:
    """Totals and per-message averages from the exact bit accounting."""
    uploads = log.uploads_total
    broadcasts = log.n_flushes
    return {
        "uploads": uploads,
        "MB_uploaded": log.bytes_up_total / 1e6,
        "MB_broadcast": log.bytes_down_total / 1e6,
        "kB_per_upload": (log.bytes_up_total / uploads / 1e3) if uploads else 0.0,
        "kB_per_broadcast": (log.bytes_down_total / broadcasts / 1e3) if broadcasts else 0.0,
    }
