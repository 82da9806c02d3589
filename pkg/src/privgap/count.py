"""Per-query deciders for COUNT, their closed-form error profiles, and
effectiveness-threshold bounds.

All deciders answer the same question under epsilon-DP: does the private
answer lie strictly inside the acceptance window (synthetic - tau,
synthetic + tau)? The Laplace route perturbs the answer and tests the
window; the exponential-mechanism routes sample the yes/no outcome
directly from a score function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .primitives import (
    NoiseLedger,
    NoiseMode,
    PrivacyBudget,
    RandomSource,
    as_epsilon,
    laplace_cdf,
    laplace_sample,
    logistic,
    two_outcome_em,
)
from .relational import COUNT, AggregateQuery, QueryError, Table, answer

# ---------------------------------------------------------------------------
# distance bounds, windows, outcomes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsoluteTau:
    """Distance bound given directly."""

    value: float


@dataclass(frozen=True)
class PercentTau:
    """Distance bound as a percentage of the (public) synthetic answer."""

    percent: float


TauSpec = Union[AbsoluteTau, PercentTau, float, int]


def resolve_tau(tau: TauSpec, synthetic_answer: float) -> float:
    """Resolve a tau spec to a positive absolute bound.

    The synthetic answer is public, so resolving a percentage spends no
    privacy budget and happens before any randomness is drawn.
    """
    if isinstance(tau, PercentTau):
        resolved = abs(synthetic_answer) * tau.percent / 100.0
    elif isinstance(tau, AbsoluteTau):
        resolved = float(tau.value)
    else:
        resolved = float(tau)
    if not resolved > 0:
        raise ValueError(f"distance bound must resolve to a positive value, got {resolved}")
    return resolved


@dataclass(frozen=True)
class Interval:
    """Open acceptance window (l, r) of width 2*tau around the synthetic answer."""

    l: float
    r: float

    @classmethod
    def around(cls, center: float, tau: float) -> "Interval":
        return cls(center - tau, center + tau)

    def contains(self, x: float) -> bool:
        # Strict on both ends: a value landing exactly on l or r is outside.
        return self.l < x < self.r


SATISFIED_LABEL = "Distance bound satisfied"
UNMET_LABEL = "Distance bound unmet"


@dataclass(frozen=True)
class Outcome:
    o: int

    def __post_init__(self):
        if self.o not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.o}")

    @property
    def label(self) -> str:
        return SATISFIED_LABEL if self.o == 1 else UNMET_LABEL


SATISFIED = Outcome(1)
UNMET = Outcome(0)


@dataclass(frozen=True)
class ErrorReport:
    """Probability that a decider returns the wrong outcome.

    gap is |private - synthetic|; correct_outcome is 1 iff gap < tau. kind
    records how error_value was obtained: an exact closed form, an upper
    bound, or a Monte-Carlo estimate (with its trial count and seed).
    """

    gap: float
    correct_outcome: int
    error_value: float
    kind: str  # "closed-form" | "upper-bound" | "monte-carlo"
    trials: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.error_value <= 1.0:
            raise ValueError(f"error must be a probability, got {self.error_value}")


def correct_outcome_for(gap: float, tau: float) -> int:
    return 1 if gap < tau else 0


# ---------------------------------------------------------------------------
# the generic noisy-estimate decider
# ---------------------------------------------------------------------------

NoisyEstimator = Callable[[AggregateQuery, Table, float, RandomSource, NoiseMode], float]


def basic_decider(
    q: AggregateQuery,
    data: Table,
    synthetic: Table,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
    noisy_estimator: NoisyEstimator,
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> Outcome:
    """Estimate the private answer with a DP mechanism and test the window.

    Returns SATISFIED iff the noisy estimate lands strictly inside
    (synthetic - tau, synthetic + tau). Consumes the estimator's full budget.
    """
    eps_v = as_epsilon(eps)
    synthetic_answer = answer(q, synthetic)
    tau_abs = resolve_tau(tau, synthetic_answer)
    window = Interval.around(synthetic_answer, tau_abs)
    estimate = noisy_estimator(q, data, eps_v, rng, mode)
    return SATISFIED if window.contains(estimate) else UNMET


def _require_count(q: AggregateQuery) -> None:
    if q.kind != COUNT:
        raise QueryError(f"count decider applied to a {q.kind.upper()} query")


def lm_count_decide(
    q: AggregateQuery,
    data: Table,
    synthetic: Table,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
    *,
    ledger: Optional[NoiseLedger] = None,
) -> Outcome:
    """Laplace-mechanism count decider: noise scale 1/eps (count sensitivity 1)."""
    _require_count(q)

    def estimator(qq, table, eps_v, r, m):
        return answer(qq, table) + laplace_sample(1.0 / eps_v, r, m, ledger=ledger, tag="estimate")

    return basic_decider(q, data, synthetic, tau, eps, estimator, rng, mode)


# ---------------------------------------------------------------------------
# score functions for the direct (exponential-mechanism) deciders
# ---------------------------------------------------------------------------


def indicator_score(true_answer: float, synthetic_answer: float, tau: float, outcome: int) -> float:
    """All-or-nothing score: 1 for the correct outcome, 0 for the wrong one.

    Sensitivity 1, which is what makes the resulting decider's error
    1/(1 + e^(eps/2)) regardless of tau.
    """
    inside = abs(true_answer - synthetic_answer) < tau
    return 1.0 if (outcome == 1) == inside else 0.0


def ramp_score(true_answer: float, synthetic_answer: float, tau: float, outcome: int) -> float:
    """Piecewise-linear score in [0, 1] with sensitivity 1/(2*tau).

    Flat outside (l - tau, r + tau) where it scores (1, 0) for outcomes
    (0, 1); a linear ramp from l - tau up to the synthetic answer; a
    mirrored ramp back down to r + tau.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    x = true_answer - synthetic_answer
    if x <= -2.0 * tau or x >= 2.0 * tau:
        score_one = 0.0
    elif x <= 0:
        score_one = (x + 2.0 * tau) / (2.0 * tau)
    else:
        score_one = 1.0 - x / (2.0 * tau)
    return score_one if outcome == 1 else 1.0 - score_one


def em_count_naive_decide(
    q: AggregateQuery,
    data: Table,
    synthetic: Table,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> Outcome:
    """Two-outcome exponential mechanism with the all-or-nothing score."""
    _require_count(q)
    true_answer = answer(q, data)
    synthetic_answer = answer(q, synthetic)
    tau_abs = resolve_tau(tau, synthetic_answer)
    s0 = indicator_score(true_answer, synthetic_answer, tau_abs, 0)
    s1 = indicator_score(true_answer, synthetic_answer, tau_abs, 1)
    return Outcome(two_outcome_em(s0, s1, eps, 1.0, rng, mode))


def em_count_decide(
    q: AggregateQuery,
    data: Table,
    synthetic: Table,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> Outcome:
    """Two-outcome exponential mechanism with the ramp score (sens 1/(2*tau)).

    The budget/sensitivity ratio works out to eps * tau times the score
    difference, so at zero gap the wrong-outcome probability is
    1/(1 + e^(eps*tau)).
    """
    _require_count(q)
    true_answer = answer(q, data)
    synthetic_answer = answer(q, synthetic)
    tau_abs = resolve_tau(tau, synthetic_answer)
    s0 = ramp_score(true_answer, synthetic_answer, tau_abs, 0)
    s1 = ramp_score(true_answer, synthetic_answer, tau_abs, 1)
    return Outcome(two_outcome_em(s0, s1, eps, 1.0 / (2.0 * tau_abs), rng, mode))


# ---------------------------------------------------------------------------
# closed-form error profiles
# ---------------------------------------------------------------------------


def lm_count_error_profile(
    true_answer: float,
    synthetic_answer: float,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
    *,
    noise_scale: Optional[float] = None,
) -> ErrorReport:
    """Exact wrong-outcome probability of the Laplace-window decider.

    Inside the window the error is the two Laplace tails past l and r;
    outside it is the CDF mass the window captures. Both are exact (the
    stated case-1/2 bounds differ only on measure-zero boundaries), so the
    report kind is closed-form. noise_scale overrides the default 1/eps,
    which lets the same profile serve sum deciders via scale gs/eps.
    """
    eps_v = as_epsilon(eps)
    tau_abs = resolve_tau(tau, synthetic_answer)
    b = noise_scale if noise_scale is not None else 1.0 / eps_v
    window = Interval.around(synthetic_answer, tau_abs)
    gap = abs(true_answer - synthetic_answer)
    if window.contains(true_answer):
        error = (0.5 * math.exp(-(true_answer - window.l) / b)
                 + 0.5 * math.exp(-(window.r - true_answer) / b))
    else:
        error = laplace_cdf(window.r - true_answer, b) - laplace_cdf(window.l - true_answer, b)
    return ErrorReport(gap, correct_outcome_for(gap, tau_abs), error, "closed-form")


def em_count_error_profile(
    true_answer: float,
    synthetic_answer: float,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
) -> ErrorReport:
    """Exact wrong-outcome probability of the ramp-score decider."""
    eps_v = as_epsilon(eps)
    tau_abs = resolve_tau(tau, synthetic_answer)
    s0 = ramp_score(true_answer, synthetic_answer, tau_abs, 0)
    s1 = ramp_score(true_answer, synthetic_answer, tau_abs, 1)
    p_one = logistic(eps_v * tau_abs * (s1 - s0))
    gap = abs(true_answer - synthetic_answer)
    correct = correct_outcome_for(gap, tau_abs)
    error = (1.0 - p_one) if correct == 1 else p_one
    return ErrorReport(gap, correct, error, "closed-form")


def em_count_naive_error_profile(
    true_answer: float,
    synthetic_answer: float,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
) -> ErrorReport:
    """Wrong-outcome probability of the all-or-nothing decider: constant in tau."""
    eps_v = as_epsilon(eps)
    tau_abs = resolve_tau(tau, synthetic_answer)
    gap = abs(true_answer - synthetic_answer)
    error = 1.0 / (1.0 + math.exp(eps_v / 2.0))
    return ErrorReport(gap, correct_outcome_for(gap, tau_abs), error, "closed-form")


# ---------------------------------------------------------------------------
# effectiveness-threshold bounds
# ---------------------------------------------------------------------------


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")


def tau_min_lm_count(eps: Union[float, PrivacyBudget], delta: float) -> float:
    """Stated effectiveness-threshold bound ln(1/(2*delta)) / eps.

    The log goes nonpositive at delta >= 0.5; the bound is vacuous there and
    0 is returned since tau must be positive.
    """
    eps_v = as_epsilon(eps)
    _check_delta(delta)
    return max(0.0, math.log(1.0 / (2.0 * delta)) / eps_v)


def tau_min_em_count(eps: Union[float, PrivacyBudget], delta: float) -> float:
    """Effectiveness-threshold bound ln((1-delta)/delta) / eps for the ramp decider."""
    eps_v = as_epsilon(eps)
    _check_delta(delta)
    return max(0.0, math.log((1.0 - delta) / delta) / eps_v)
