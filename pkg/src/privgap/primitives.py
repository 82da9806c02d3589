"""Seedable randomness and the noise primitives shared by all deciders.

Two hard requirements drive this module. First, reproducibility: every
decider draws from an owned (seed, stream) source, so Monte-Carlo trials
can be replayed bit-for-bit and parallelized without coordination. Second,
numerical safety: exponential-mechanism arithmetic stays in log space, so
huge score/budget products select the right outcome instead of overflowing
to inf/NaN.

Caveat: this is statistical DP, not hardened floating-point DP. No snapping
or discrete-noise defenses against float side channels are attempted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np


class NoiseMode(enum.Enum):
    """LIVE samples noise; ZERO_NOISE forces every Laplace draw to 0.

    ZERO_NOISE is a first-class mode, not a test mock: the deterministic
    reductions of the deciders under it serve as oracles in the test suite.
    """

    LIVE = "live"
    ZERO_NOISE = "zero-noise"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")


def as_epsilon(eps: Union[float, PrivacyBudget]) -> float:
    if isinstance(eps, PrivacyBudget):
        return eps.epsilon
    return PrivacyBudget(float(eps)).epsilon


class RandomSource:
    """Deterministic uniform source keyed by (seed, stream).

    Identical (seed, stream) pairs reproduce identical draw sequences on any
    platform; distinct stream ids give statistically independent streams.
    Instances are not shareable across concurrent tasks: give each trial its
    own stream.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((self.seed, self.stream))))

    def uniform(self) -> float:
        # (0, 1): the exact-zero draw would map to an infinite Laplace value.
        u = self._gen.random()
        return u if u > 0.0 else 2.0 ** -64

    def uniforms(self, n: int) -> np.ndarray:
        u = self._gen.random(n)
        np.maximum(u, 2.0 ** -64, out=u)
        return u


class NoiseLedger(list):
    """Per-invocation record of (tag, scale) for every Laplace draw requested.

    Used by the budget-accounting tests; recording happens even in
    ZERO_NOISE mode since the intended scale is what is audited.
    """

    def record(self, tag: str, scale: float) -> None:
        self.append((tag, scale))

    def scales(self, tag: Optional[str] = None) -> list[float]:
        return [s for t, s in self if tag is None or t == tag]


def laplace_sample(
    scale: float,
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
    *,
    ledger: Optional[NoiseLedger] = None,
    tag: str = "",
) -> float:
    """One zero-mean Laplace draw via the inverse CDF (one uniform per sample)."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    if ledger is not None:
        ledger.record(tag, scale)
    if mode is NoiseMode.ZERO_NOISE:
        return 0.0
    p = rng.uniform() - 0.5
    return -scale * math.copysign(1.0, p) * math.log1p(-2.0 * abs(p))


def laplace_samples(scale: float, n: int, rng: RandomSource,
                    mode: NoiseMode = NoiseMode.LIVE) -> np.ndarray:
    """Vectorized counterpart of laplace_sample (same transform per draw)."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    if mode is NoiseMode.ZERO_NOISE:
        return np.zeros(n)
    p = rng.uniforms(n) - 0.5
    return -scale * np.sign(p) * np.log1p(-2.0 * np.abs(p))


def laplace_tail(t: float, scale: float) -> float:
    """One-sided tail Pr[X >= t] = exp(-t/scale)/2 for t >= 0.

    The two-sided tail Pr[|X| >= t] is twice this.
    """
    if t < 0:
        raise ValueError(f"tail point must be nonnegative, got {t}")
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    return 0.5 * math.exp(-t / scale)


def laplace_cdf(x: float, scale: float) -> float:
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    if x < 0:
        return 0.5 * math.exp(x / scale)
    return 1.0 - 0.5 * math.exp(-x / scale)


def logistic(x: float) -> float:
    """Overflow-safe logistic: the exponent evaluated is always <= 0."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def two_outcome_em(
    score0: float,
    score1: float,
    epsilon: Union[float, PrivacyBudget],
    delta_u: float,
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> int:
    """Exponential mechanism over {0, 1}.

    Returns 1 with probability sigmoid(eps * (score1 - score0) / (2 * delta_u)).
    Only the score difference matters, and the logistic is evaluated on the
    non-overflowing branch, so arbitrarily large exponents resolve to the
    dominant outcome instead of NaN. ZERO_NOISE returns the argmax, ties to 0.
    """
    eps = as_epsilon(epsilon)
    if not delta_u > 0:
        raise ValueError(f"score sensitivity must be positive, got {delta_u}")
    if mode is NoiseMode.ZERO_NOISE:
        return 1 if score1 > score0 else 0
    p_one = logistic(eps * (score1 - score0) / (2.0 * delta_u))
    return 1 if rng.uniform() < p_one else 0


def em_over_domain(
    scores: Sequence[float],
    epsilon: Union[float, PrivacyBudget],
    delta_u: float,
    rng: RandomSource,
    mode: NoiseMode = NoiseMode.LIVE,
) -> int:
    """Exponential mechanism over a finite domain, via the Gumbel-max trick.

    Samples index i with probability proportional to
    exp(eps * scores[i] / (2 * delta_u)), entirely in log space. A uniform
    shift of all scores leaves the output unchanged. ZERO_NOISE returns the
    lowest argmax index.
    """
    eps = as_epsilon(epsilon)
    if not delta_u > 0:
        raise ValueError(f"score sensitivity must be positive, got {delta_u}")
    arr = np.asarray(scores, dtype=float)
    if arr.size == 0:
        raise ValueError("em_over_domain needs a non-empty score list")
    if mode is NoiseMode.ZERO_NOISE:
        return int(np.argmax(arr))
    logits = (eps / (2.0 * delta_u)) * arr
    gumbel = -np.log(-np.log(rng.uniforms(arr.size)))
    return int(np.argmax(logits + gumbel))
