"""Closed-form security calculators.

Three quantities, all pure functions:

* double-spend success probability after a confirmation depth, under the
  gambler's-ruin model with Poisson attacker progress (rate z*q/p);
* the chance a size-w membership window samples few enough Byzantine
  members to stay below the one-third fault threshold (cumulative
  binomial, evaluated in log space);
* the revenue fraction of a miner that withholds lucky blocks, from the
  fixed point G = c*[(1 - 2^-n) + 2^-n * (1 - 2^-(n+1)) * (1 + G)].

The published window-security table truncates probabilities to three
decimals; ``format_table_cell`` reproduces that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TABLE_WINDOWS = (12, 100, 144, 288, 1008, 2016)
TABLE_PROBS = (0.25, 0.30)


@dataclass(frozen=True)
class AttackerParams:
    """Double-spend attacker: hash share and confirmation depth."""

    hash_share: float
    confirmations: int

    def __post_init__(self):
        if not 0.0 <= self.hash_share < 1.0:
            raise ValueError("hash share must be in [0, 1)")
        if self.confirmations < 0:
            raise ValueError("confirmation depth must be nonnegative")

    @property
    def honest_share(self) -> float:
        return 1.0 - self.hash_share


@dataclass(frozen=True)
class MembershipParams:
    """Window sampling: window size and per-draw Byzantine probability."""

    window: int
    byzantine_prob: float

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not 0.0 <= self.byzantine_prob <= 1.0:
            raise ValueError("probability must be in [0, 1]")

    @property
    def tolerated(self) -> int:
        return self.window // 3


@dataclass(frozen=True)
class SelfishParams:
    """Withholding miner: computing power and extra-zero-bit threshold."""

    power: float
    extra_bits: int

    def __post_init__(self):
        if not 0.0 < self.power < 1.0:
            raise ValueError("power must be in (0, 1)")
        if self.extra_bits < 0:
            raise ValueError("extra bits must be nonnegative")


@dataclass(frozen=True)
class DoubleSpendResult:
    probability: float
    attacker_dominant: bool


@dataclass(frozen=True)
class SelfishGain:
    gain: float
    profitable: bool


def double_spend_probability(params: AttackerParams) -> DoubleSpendResult:
    """P = 1 - sum_{k=0}^{z} poisson(k; z*q/p) * (1 - (q/p)^(z-k)).

    An attacker at or above half the hash power eventually wins outright,
    so the result is 1 with the dominance flag set.
    """
    q, z = params.hash_share, params.confirmations
    if q >= 0.5:
        return DoubleSpendResult(probability=1.0, attacker_dominant=True)
    if z == 0:
        return DoubleSpendResult(probability=1.0, attacker_dominant=False)
    if q == 0.0:
        return DoubleSpendResult(probability=0.0, attacker_dominant=False)

    p = 1.0 - q
    lam = z * q / p
    ratio = q / p
    total = 0.0
    for k in range(z + 1):
        pmf = math.exp(k * math.log(lam) - lam - math.lgamma(k + 1)) if lam > 0 else float(k == 0)
        total += pmf * (1.0 - ratio ** (z - k))
    return DoubleSpendResult(probability=min(1.0, max(0.0, 1.0 - total)), attacker_dominant=False)


def membership_safety(params: MembershipParams) -> float:
    """Exact cumulative binomial P[X <= floor(w/3)] in log space.

    Sums whichever side of the distribution is smaller, so probabilities
    near 1 keep full precision instead of accumulating rounding from the
    dominant terms.
    """
    w, p = params.window, params.byzantine_prob
    c = params.tolerated
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 1.0 if c >= w else 0.0

    log_p = math.log(p)
    log_1p = math.log1p(-p)

    def log_pmf(k: int) -> float:
        return (
            math.lgamma(w + 1)
            - math.lgamma(k + 1)
            - math.lgamma(w - k + 1)
            + k * log_p
            + (w - k) * log_1p
        )

    if c >= w * p:
        tail = sum(math.exp(log_pmf(k)) for k in range(c + 1, w + 1))
        return min(1.0, max(0.0, 1.0 - tail))
    total = sum(math.exp(log_pmf(k)) for k in range(c + 1))
    return min(1.0, total)


def selfish_mining_gain(params: SelfishParams) -> SelfishGain:
    """Closed-form solution of the withholding revenue fixed point.

    With a = 2^-n and win chance (1 - a/2) in a fork,
    G = c*A / (1 - c*B) for A = (1-a) + a*(1-a/2) and B = a*(1-a/2).
    """
    c, n = params.power, params.extra_bits
    a = 2.0 ** (-n)
    win = 1.0 - a / 2.0
    numerator_factor = (1.0 - a) + a * win
    recursion_factor = a * win
    denominator = 1.0 - c * recursion_factor
    if denominator <= 0.0:
        raise ValueError("fixed point diverges for these parameters")
    gain = c * numerator_factor / denominator
    return SelfishGain(gain=gain, profitable=gain > c)


def required_wait(hash_share: float, target: float) -> int:
    """Smallest confirmation depth driving the success chance below target.

    A target of 1.0 or more is met immediately (every probability is at
    most 1), so the answer is 0.
    """
    if target >= 1.0:
        return 0
    if hash_share >= 0.5:
        raise ValueError("unattainable: attacker at or above half the hash power")
    z = 0
    while True:
        result = double_spend_probability(AttackerParams(hash_share=hash_share, confirmations=z))
        if result.probability < target:
            return z
        z += 1


def membership_table(windows=TABLE_WINDOWS, probs=TABLE_PROBS) -> dict[tuple[int, float], float]:
    """Window-security grid: exact probabilities keyed by (window, p)."""
    return {
        (w, p): membership_safety(MembershipParams(window=w, byzantine_prob=p))
        for p in probs
        for w in windows
    }


def format_table_cell(value: float) -> str:
    """Three decimals, truncated toward zero, as in the published table."""
    return f"{math.floor(value * 1000) / 1000:.3f}"
