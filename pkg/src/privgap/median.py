"""Per-query deciders for MEDIAN.

One route samples a noisy median from the exponential mechanism over the
attribute domain, scored by closeness of rank to the middle, and window-
tests the sample. The other skips estimation: it counts how much matching
mass sits at or below the lower endpoint and at or above the upper one,
and declares the bound unmet if either noisy count reaches a noisy
majority. The two endpoint counts touch disjoint rows, so they share one
half of the budget in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .count import (
    ErrorReport,
    Interval,
    Outcome,
    SATISFIED,
    TauSpec,
    UNMET,
    basic_decider,
    correct_outcome_for,
    resolve_tau,
)
from .primitives import (
    NoiseLedger,
    NoiseMode,
    PrivacyBudget,
    RandomSource,
    as_epsilon,
    em_over_domain,
    laplace_sample,
)
from .relational import (
    MEDIAN,
    AggregateQuery,
    EmptySupportError,
    QueryError,
    Table,
    aggregate_domain,
    answer,
)


def _require_median(q: AggregateQuery) -> None:
    if q.kind != MEDIAN:
        raise QueryError(f"median decider applied to a {q.kind.upper()} query")


@dataclass(frozen=True)
class MedianScoreTable:
    """Score -|rank(e) - n'/2| for every domain element e, where rank(e)
    counts matching rows strictly below e. Scores are <= 0, peak around the
    true median, and move by at most 1 between neighboring tables."""

    values: np.ndarray   # the full integer domain, ascending
    scores: np.ndarray
    matching_count: int


def median_score_table(q: AggregateQuery, data: Table) -> MedianScoreTable:
    """Materialize scores over the whole domain in one sorted pass."""
    _require_median(q)
    dom = aggregate_domain(q, data.schema)
    mask = q.predicate.mask(data)
    vals = data.column(q.attribute)[mask]
    n_match = int(vals.size)
    if n_match == 0:
        raise EmptySupportError("median scores need at least one matching row")
    counts = np.bincount(vals - dom.lo, minlength=dom.size)
    ranks = np.concatenate(([0], np.cumsum(counts)))[:-1]  # rank of value lo+i
    scores = -np.abs(ranks - n_match / 2.0)
    values = np.arange(dom.lo, dom.hi + 1, dtype=np.int64)
    return MedianScoreTable(values, scores, n_match)


def em_med_estimate(
    q: AggregateQuery,
    data: Table,
    eps: Union[float, PrivacyBudget],
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> int:
    """Noisy median: sample a domain element with weight exp(eps * score / 2)."""
    table = median_score_table(q, data)
    idx = em_over_domain(table.scores, eps, 1.0, rng, mode)
    return int(table.values[idx])


def em_med_decide(
    q: AggregateQuery,
    data: Table,
    synthetic: Table,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> Outcome:
    """Window test on the exponential-mechanism median estimate."""
    _require_median(q)

    def estimator(qq, table, eps_v, r, m):
        return float(em_med_estimate(qq, table, eps_v, r, m))

    return basic_decider(q, data, synthetic, tau, eps, estimator, rng, mode)


def em_med_error_profile(
    q: AggregateQuery,
    data: Table,
    synthetic_answer: float,
    tau: TauSpec,
    eps: Union[float, PrivacyBudget],
) -> ErrorReport:
    """Exact wrong-outcome probability of the estimate-and-test median decider.

    The sampling distribution partitions into in-window and out-of-window
    mass; the error is whichever side is wrong for the true answer. Both
    sides are evaluated in log space and sum to 1.
    """
    eps_v = as_epsilon(eps)
    tau_abs = resolve_tau(tau, synthetic_answer)
    window = Interval.around(synthetic_answer, tau_abs)
    table = median_score_table(q, data)
    logw = (eps_v / 2.0) * table.scores
    shift = logw.max()
    weights = np.exp(logw - shift)
    total = weights.sum()
    inside = (table.values > window.l) & (table.values < window.r)
    mass_in = float(weights[inside].sum() / total)
    true_answer = answer(q, data)
    correct = correct_outcome_for(abs(true_answer - synthetic_answer), tau_abs)
    error = (1.0 - mass_in) if correct == 1 else mass_in
    return ErrorReport(abs(true_answer - synthetic_answer), correct, error, "closed-form")


@dataclass(frozen=True)
class HistMedState:
    """Intermediate quantities of the endpoint-count decider: the noisy
    matching total, the two endpoint counts (disjoint row sets whenever
    tau > 0), and the majority threshold ceil(noisy_total / 2)."""

    noisy_total: float
    below_count: int
    above_count: int
    majority: float


def hist_med_decide(
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
    """Endpoint-count median decider.

    Counts matching rows with value <= lower endpoint and >= upper endpoint
    (closed comparisons, unlike the strict window test; the boundary
    asymmetry is deliberate and kept). Each noisy count is compared against
    ceil of half the noisy matching total; the ceiling is applied to the
    noisy real directly, with no clamp for negative totals. Empty support is
    fine here: both counts are 0.
    """
    _require_median(q)
    eps_v = as_epsilon(eps)
    aggregate_domain(q, data.schema)
    synthetic_answer = answer(q, synthetic)
    tau_abs = resolve_tau(tau, synthetic_answer)
    lo_edge = synthetic_answer - tau_abs
    hi_edge = synthetic_answer + tau_abs

    mask = q.predicate.mask(data)
    vals = data.column(q.attribute)[mask]
    scale = 2.0 / eps_v
    noisy_total = int(mask.sum()) + laplace_sample(scale, rng, mode, ledger=ledger, tag="total")
    majority = math.ceil(noisy_total / 2.0)
    below = int((vals <= lo_edge).sum())
    above = int((vals >= hi_edge).sum())
    state = HistMedState(noisy_total, below, above, majority)
    if state.below_count + laplace_sample(scale, rng, mode, ledger=ledger, tag="below") >= majority:
        return UNMET
    if state.above_count + laplace_sample(scale, rng, mode, ledger=ledger, tag="above") >= majority:
        return UNMET
    return SATISFIED
