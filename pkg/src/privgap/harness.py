"""Monte-Carlo experiment harness: trial plans, grid sweeps, synthetic
dataset-pair generation, and an empirical privacy-ratio check.

Everything is deterministic given the plan seeds. Trial i of a plan owns
the random stream with id i, so running trials serially or in parallel
produces identical aggregate results.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .count import (
    AbsoluteTau,
    Outcome,
    PercentTau,
    TauSpec,
    em_count_decide,
    em_count_naive_decide,
    lm_count_decide,
    resolve_tau,
)
from .median import em_med_decide, hist_med_decide
from .primitives import NoiseMode, RandomSource
from .relational import (
    COUNT,
    MEDIAN,
    SUM,
    AggregateQuery,
    Categorical,
    IntegerRange,
    Predicate,
    QueryError,
    Schema,
    Table,
    answer,
    downward_local_sensitivity,
)
from .sums import R2TConfig, SVTConfig, lm_sum_decide, r2t_sum_decide, svt_sum_decide


class PlanError(Exception):
    pass


class PairSpecError(Exception):
    pass


# ---------------------------------------------------------------------------
# decider registry
# ---------------------------------------------------------------------------

DeciderFn = Callable[..., Outcome]


def _lm_count(q, d, ds, tau, eps, rng, mode, cfg):
    return lm_count_decide(q, d, ds, tau, eps, rng, mode)


def _em_count(q, d, ds, tau, eps, rng, mode, cfg):
    return em_count_decide(q, d, ds, tau, eps, rng, mode)


def _em_count_naive(q, d, ds, tau, eps, rng, mode, cfg):
    return em_count_naive_decide(q, d, ds, tau, eps, rng, mode)


def _lm_sum(q, d, ds, tau, eps, rng, mode, cfg):
    return lm_sum_decide(q, d, ds, tau, eps, cfg.gs, rng, mode)


def _r2t_sum(q, d, ds, tau, eps, rng, mode, cfg):
    return r2t_sum_decide(q, d, ds, tau, eps, cfg.gs, cfg.r2t.beta, rng, mode)


def _svt_sum(q, d, ds, tau, eps, rng, mode, cfg):
    return svt_sum_decide(q, d, ds, tau, eps, cfg.gs, cfg.svt, rng, mode)


def _em_med(q, d, ds, tau, eps, rng, mode, cfg):
    return em_med_decide(q, d, ds, tau, eps, rng, mode)


def _hist_med(q, d, ds, tau, eps, rng, mode, cfg):
    return hist_med_decide(q, d, ds, tau, eps, rng, mode)


DECIDERS: dict[str, DeciderFn] = {
    "lm_count": _lm_count,
    "em_count": _em_count,
    "em_count_naive": _em_count_naive,
    "lm_sum": _lm_sum,
    "r2t_sum": _r2t_sum,
    "svt_sum": _svt_sum,
    "em_med": _em_med,
    "hist_med": _hist_med,
}

DECIDER_KIND: dict[str, str] = {
    "lm_count": COUNT,
    "em_count": COUNT,
    "em_count_naive": COUNT,
    "lm_sum": SUM,
    "r2t_sum": SUM,
    "svt_sum": SUM,
    "em_med": MEDIAN,
    "hist_med": MEDIAN,
}


@dataclass(frozen=True)
class DeciderConfig:
    """Knobs shared across trials: the sum sensitivity cap and the
    estimator configs. gs=None defaults to the aggregate domain max."""

    gs: Optional[int] = None
    r2t: R2TConfig = field(default_factory=R2TConfig)
    svt: SVTConfig = field(default_factory=SVTConfig)


def derive_seed(base: int, *indices: int) -> int:
    """Stable 64-bit sub-seed for nested experiment structure."""
    return int(np.random.SeedSequence((base, *indices)).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# trial plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialPlan:
    """One Monte-Carlo experiment: a decider on one query and dataset pair.

    Trial i uses RandomSource(seed, stream=i). trials defaults to 100, the
    error-measurement convention; tighten it for tolerance-critical runs.
    """

    decider: str
    query: AggregateQuery
    data: Table
    synthetic: Table
    tau: TauSpec
    epsilon: float
    trials: int = 100
    seed: int = 0
    mode: NoiseMode = NoiseMode.LIVE
    config: DeciderConfig = field(default_factory=DeciderConfig)
    query_id: str = "q"
    pair_id: str = "pair"

    def __post_init__(self):
        if self.trials < 1:
            raise PlanError(f"trials must be >= 1, got {self.trials}")
        if self.decider not in DECIDERS:
            raise PlanError(f"unknown decider {self.decider!r}")
        if DECIDER_KIND[self.decider] != self.query.kind:
            raise PlanError(
                f"decider {self.decider!r} expects a {DECIDER_KIND[self.decider].upper()} "
                f"query, got {self.query.kind.upper()}")


@dataclass(frozen=True)
class ResultRow:
    """Aggregated outcome of one trial plan. error == false_positive +
    false_negative always holds: only one of the two can be nonzero for a
    fixed (gap, tau)."""

    query_id: str
    decider: str
    tau_pct: Optional[float]
    tau_abs: float
    epsilon: float
    trials: int
    error: float
    false_positive: float
    false_negative: float
    correct_outcome: int
    wall_time_s: float
    seed: int
    first_inside_tau_pct: Optional[float] = None


def run_trials(plan: TrialPlan) -> ResultRow:
    """Run the plan and report the wrong-outcome fraction.

    The correct outcome is 1 iff the true gap is below the resolved bound;
    false positives are trials answering 1 when it is 0, false negatives
    the reverse. Deterministic given the plan seed.
    """
    decide = DECIDERS[plan.decider]
    true_answer = answer(plan.query, plan.data)
    synthetic_answer = answer(plan.query, plan.synthetic)
    tau_abs = resolve_tau(plan.tau, synthetic_answer)
    gap = abs(true_answer - synthetic_answer)
    correct = 1 if gap < tau_abs else 0

    started = time.perf_counter()
    fp = fn = 0
    for i in range(plan.trials):
        rng = RandomSource(plan.seed, i)
        o = decide(plan.query, plan.data, plan.synthetic, plan.tau,
                   plan.epsilon, rng, plan.mode, plan.config).o
        if o == 1 and correct == 0:
            fp += 1
        elif o == 0 and correct == 1:
            fn += 1
    elapsed = time.perf_counter() - started

    tau_pct = plan.tau.percent if isinstance(plan.tau, PercentTau) else None
    return ResultRow(
        query_id=plan.query_id,
        decider=plan.decider,
        tau_pct=tau_pct,
        tau_abs=tau_abs,
        epsilon=plan.epsilon,
        trials=plan.trials,
        error=(fp + fn) / plan.trials,
        false_positive=fp / plan.trials,
        false_negative=fn / plan.trials,
        correct_outcome=correct,
        wall_time_s=elapsed,
        seed=plan.seed,
    )


# ---------------------------------------------------------------------------
# grid sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    """Distance-bound percentages and privacy budgets to cross."""

    tau_percents: tuple[float, ...] = (0.2, 0.8, 3.2, 12.8, 51.2)
    epsilons: tuple[float, ...] = (0.0625, 0.125, 0.25, 0.5, 1.0)
    default_epsilon: float = 0.25
    default_tau_pct: float = 3.2

    def __post_init__(self):
        if any(t <= 0 for t in self.tau_percents) or any(e <= 0 for e in self.epsilons):
            raise ValueError("grid values must be positive")


def sweep(
    grid: SweepGrid,
    deciders: Sequence[str],
    queries: Sequence[tuple[str, AggregateQuery]],
    pair: tuple[Table, Table],
    trials: int = 100,
    seed: int = 0,
    config: DeciderConfig = DeciderConfig(),
    mode: NoiseMode = NoiseMode.LIVE,
) -> list[ResultRow]:
    """Full cross product query x decider x tau-percent x epsilon.

    Rows come out in that nesting order, each from its own derived seed.
    Every row carries the smallest grid tau-percent at which the query's
    true answer falls inside the window (the marker drawn as a dotted line
    in error-versus-tau plots), or None if it never does.
    """
    data, synthetic = pair
    rows: list[ResultRow] = []
    index = 0
    for query_id, query in queries:
        true_answer = answer(query, data)
        synthetic_answer = answer(query, synthetic)
        gap = abs(true_answer - synthetic_answer)
        first_inside = next(
            (p for p in sorted(grid.tau_percents)
             if gap < abs(synthetic_answer) * p / 100.0), None)
        for decider in deciders:
            for tau_pct in grid.tau_percents:
                for epsilon in grid.epsilons:
                    plan = TrialPlan(
                        decider=decider, query=query, data=data, synthetic=synthetic,
                        tau=PercentTau(tau_pct), epsilon=epsilon, trials=trials,
                        seed=derive_seed(seed, index), mode=mode, config=config,
                        query_id=query_id)
                    rows.append(replace(run_trials(plan), first_inside_tau_pct=first_inside))
                    index += 1
    return rows


# File columns are fixed; wall time is deliberately not written so that a
# fixed seed yields byte-identical files.
RESULT_COLUMNS = (
    "query_id", "decider", "tau_pct", "tau_abs", "epsilon", "trials",
    "error", "false_positive", "false_negative", "correct_outcome", "seed",
    "first_inside_tau_pct",
)


def _row_record(row: ResultRow) -> dict:
    return {c: getattr(row, c) for c in RESULT_COLUMNS}


def results_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        rec = _row_record(row)
        rec = {k: ("" if v is None else v) for k, v in rec.items()}
        writer.writerow(rec)
    return buf.getvalue()


def results_to_jsonl(rows: Sequence[ResultRow]) -> str:
    return "".join(json.dumps(_row_record(r), sort_keys=True) + "\n" for r in rows)


# ---------------------------------------------------------------------------
# synthetic dataset pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticPairSpec:
    """Recipe for a (private, synthetic) table pair with an exact answer gap.

    The generator stands in for an actual synthetic-data pipeline: decider
    error depends on the pair only through the answer gap, the matching
    mass, and the sensitivities, so those are controlled directly.
    target_gap is hit exactly for COUNT and SUM by construction; gap_sign
    +1 places the synthetic answer above the private one. target_ds pins
    the largest matching aggregate value of the private table.
    """

    rows: int
    schema: Schema
    query: AggregateQuery
    target_gap: int = 0
    gap_sign: int = 1
    target_ds: Optional[int] = None
    match_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1:
            raise PairSpecError(f"need at least one row, got {self.rows}")
        if self.target_gap < 0:
            raise PairSpecError(f"target gap must be nonnegative, got {self.target_gap}")
        if self.gap_sign not in (-1, 1):
            raise PairSpecError(f"gap sign must be +1 or -1, got {self.gap_sign}")
        if not 0.0 < self.match_fraction <= 1.0:
            raise PairSpecError(f"match fraction must be in (0, 1], got {self.match_fraction}")


def _satisfying_value(dom, atom_ops: list, rng: np.random.Generator):
    """Pick a domain value satisfying every (op, const) constraint, or None."""
    if isinstance(dom, Categorical):
        allowed = [v for v in dom.values
                   if all(op != "=" or v == const for op, const in atom_ops)]
        eq = [const for op, const in atom_ops if op == "="]
        if eq:
            allowed = [v for v in allowed if all(v == c for c in eq)]
        if not allowed:
            return None
        return allowed[int(rng.integers(len(allowed)))]
    lo, hi = dom.lo, dom.hi
    for op, const in atom_ops:
        if op == "=":
            lo = max(lo, int(const))
            hi = min(hi, int(const))
        elif op == "<":
            hi = min(hi, int(math.ceil(const)) - 1)
        elif op == "<=":
            hi = min(hi, int(math.floor(const)))
        elif op == ">=":
            lo = max(lo, int(math.ceil(const)))
        else:
            lo = max(lo, int(math.floor(const)) + 1)
    if lo > hi:
        return None
    return int(rng.integers(lo, hi + 1))


def _violating_value(dom, atom_ops: list, rng: np.random.Generator):
    """Pick a domain value violating at least one constraint, or None."""
    if isinstance(dom, Categorical):
        bad = [v for v in dom.values
               if any(op == "=" and v != const for op, const in atom_ops)]
        if not bad:
            return None
        return bad[int(rng.integers(len(bad)))]
    candidates = [v for v in range(dom.lo, dom.hi + 1)
                  if not all(_cmp(v, op, const) for op, const in atom_ops)]
    if not candidates:
        return None
    return int(candidates[int(rng.integers(len(candidates)))])


def _cmp(v, op, const) -> bool:
    if op == "=":
        return v == const
    if op == "<":
        return v < const
    if op == "<=":
        return v <= const
    if op == ">=":
        return v >= const
    return v > const


def _make_row(schema: Schema, query: AggregateQuery, matching: bool,
              rng: np.random.Generator, value_cap: Optional[int]) -> Optional[tuple]:
    by_attr: dict[str, list] = {}
    for atom in query.predicate.atoms:
        by_attr.setdefault(atom.attribute, []).append((atom.op, atom.constant))
    row = []
    violated = False
    attrs = list(schema.attributes)
    # violate the last constrained attribute so earlier picks stay satisfying
    violate_at = None
    if not matching:
        constrained = [n for n, _ in attrs if n in by_attr]
        if not constrained:
            return None  # match-all predicate: a non-matching row is impossible
        violate_at = constrained[-1]
    for name, dom in attrs:
        ops = by_attr.get(name, [])
        if name == violate_at:
            v = _violating_value(dom, ops, rng)
            if v is None:
                return None
            violated = True
        else:
            v = _satisfying_value(dom, ops, rng) if ops else _random_value(dom, rng)
            if v is None:
                return None
        if (matching and value_cap is not None and name == query.attribute
                and isinstance(dom, IntegerRange)):
            v = min(int(v), value_cap)
        row.append(v)
    if not matching and not violated:
        return None
    return tuple(row)


def _random_value(dom, rng: np.random.Generator):
    if isinstance(dom, Categorical):
        return dom.values[int(rng.integers(len(dom.values)))]
    return int(rng.integers(dom.lo, dom.hi + 1))


def gen_synthetic_pair(spec: SyntheticPairSpec,
                       rng: Optional[RandomSource] = None) -> tuple[Table, Table]:
    """Build the private table, then perturb a copy into the synthetic one.

    COUNT gaps are realized by flipping rows between matching and
    non-matching; SUM gaps by shifting matching aggregate values within the
    domain. Raises PairSpecError when the requested gap cannot be placed.
    """
    source = rng if rng is not None else RandomSource(spec.seed, 0)
    gen = source._gen
    schema, query = spec.schema, spec.query
    dom = None
    if query.kind != COUNT:
        from .relational import aggregate_domain

        dom = aggregate_domain(query, schema)
        if spec.target_ds is not None and not dom.contains(spec.target_ds):
            raise PairSpecError(f"target ds {spec.target_ds} outside the aggregate domain")

    n_match = max(1, round(spec.rows * spec.match_fraction))
    value_cap = spec.target_ds if query.kind != COUNT else None
    rows: list[tuple] = []
    for i in range(spec.rows):
        want_match = i < n_match
        row = _make_row(schema, query, want_match, gen, value_cap)
        if row is None:
            if want_match:
                raise PairSpecError("predicate is unsatisfiable within the schema domains")
            row = _make_row(schema, query, True, gen, value_cap)
            if row is None:
                raise PairSpecError("predicate is unsatisfiable within the schema domains")
        rows.append(row)

    if query.kind != COUNT and spec.target_ds is not None:
        # pin the max matching aggregate value exactly at the target
        agg_idx = list(schema.names).index(query.attribute)
        first = list(rows[0])
        first[agg_idx] = spec.target_ds
        rows[0] = tuple(first)

    data = Table(schema, rows)
    synthetic_rows = [list(r) for r in rows]

    if spec.target_gap > 0:
        if query.kind == COUNT:
            _shift_count(synthetic_rows, schema, query, spec, gen)
        elif query.kind == SUM:
            _shift_sum(synthetic_rows, schema, query, spec, dom)
        else:
            _shift_median(synthetic_rows, schema, query, spec, dom, data)
    synthetic = Table(schema, [tuple(r) for r in synthetic_rows])

    if query.kind in (COUNT, SUM):
        got = abs(answer(query, data) - answer(query, synthetic))
        if got != spec.target_gap:
            raise PairSpecError(f"constructed gap {got} != target {spec.target_gap}")
    return data, synthetic


def _shift_count(rows: list[list], schema: Schema, query: AggregateQuery,
                 spec: SyntheticPairSpec, gen: np.random.Generator) -> None:
    mask = [all(_cmp(row[list(schema.names).index(a.attribute)], a.op, a.constant)
                for a in query.predicate.atoms) for row in rows]
    if spec.gap_sign > 0:
        # synthetic count above private: flip non-matching rows to matching
        idxs = [i for i, m in enumerate(mask) if not m]
        if len(idxs) < spec.target_gap:
            raise PairSpecError("not enough non-matching rows to raise the synthetic count")
        make_match = True
    else:
        idxs = [i for i, m in enumerate(mask) if m]
        if len(idxs) < spec.target_gap:
            raise PairSpecError("not enough matching rows to lower the synthetic count")
        make_match = False
    for i in idxs[: spec.target_gap]:
        row = _make_row(schema, query, make_match, gen, None)
        if row is None:
            raise PairSpecError("cannot construct a flip row for the count gap")
        rows[i] = list(row)


def _shift_sum(rows: list[list], schema: Schema, query: AggregateQuery,
               spec: SyntheticPairSpec, dom: IntegerRange) -> None:
    agg_idx = list(schema.names).index(query.attribute)
    names = list(schema.names)
    remaining = spec.target_gap
    for row in rows:
        if remaining == 0:
            break
        if not all(_cmp(row[names.index(a.attribute)], a.op, a.constant)
                   for a in query.predicate.atoms):
            continue
        v = row[agg_idx]
        room = (dom.hi - v) if spec.gap_sign > 0 else (v - dom.lo)
        step = min(room, remaining)
        row[agg_idx] = v + spec.gap_sign * step
        remaining -= step
    if remaining:
        raise PairSpecError(
            f"aggregate domain too tight: {remaining} of the sum gap could not be placed")


def _shift_median(rows: list[list], schema: Schema, query: AggregateQuery,
                  spec: SyntheticPairSpec, dom: IntegerRange, data: Table) -> None:
    # Best effort: move every matching value by the signed gap, clamped to the
    # domain. The median then shifts by the gap exactly when no clamping binds.
    agg_idx = list(schema.names).index(query.attribute)
    names = list(schema.names)
    for row in rows:
        if not all(_cmp(row[names.index(a.attribute)], a.op, a.constant)
                   for a in query.predicate.atoms):
            continue
        row[agg_idx] = min(dom.hi, max(dom.lo, row[agg_idx] + spec.gap_sign * spec.target_gap))


# ---------------------------------------------------------------------------
# empirical privacy-ratio check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatioCheck:
    """Empirical Pr[o=1] on two neighboring tables and the larger directional
    ratio, with binomial standard errors. relative_se propagates both sides'
    errors onto the ratio."""

    p_first: float
    p_second: float
    se_first: float
    se_second: float
    ratio: float
    relative_se: float
    trials: int

    def exceeds(self, epsilon: float, k_se: float = 4.0) -> bool:
        return self.ratio > math.exp(epsilon) * (1.0 + k_se * self.relative_se)


def dp_ratio_check(
    decider: Union[str, DeciderFn],
    query: AggregateQuery,
    data: Table,
    data_prime: Table,
    synthetic: Table,
    tau: TauSpec,
    eps: float,
    trials: int = 100_000,
    seed: int = 0,
    config: DeciderConfig = DeciderConfig(),
) -> RatioCheck:
    """Estimate Pr[o=1] on both tables and return the worse directional ratio.

    An empirical proxy for the privacy guarantee: for truly eps-DP deciders
    the ratio stays at or below e^eps up to sampling noise. Each table gets
    its own block of streams.
    """
    decide = DECIDERS[decider] if isinstance(decider, str) else decider
    ones = [0, 0]
    for side, table in enumerate((data, data_prime)):
        for i in range(trials):
            rng = RandomSource(seed, side * trials + i)
            ones[side] += decide(query, table, synthetic, tau, eps, rng,
                                 NoiseMode.LIVE, config).o
    p1, p2 = ones[0] / trials, ones[1] / trials
    se1 = math.sqrt(max(p1 * (1 - p1), 0.0) / trials)
    se2 = math.sqrt(max(p2 * (1 - p2), 0.0) / trials)
    if p1 == 0.0 and p2 == 0.0:
        ratio = 1.0
    elif p1 == 0.0 or p2 == 0.0:
        ratio = math.inf
    else:
        ratio = max(p1 / p2, p2 / p1)
    rel = 0.0
    if p1 > 0 and p2 > 0:
        rel = math.sqrt((se1 / p1) ** 2 + (se2 / p2) ** 2)
    return RatioCheck(p1, p2, se1, se2, ratio, rel, trials)
