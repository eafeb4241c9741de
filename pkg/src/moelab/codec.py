"""Exact dyadic-interval codec for selection patterns, plus leakage bounds.

A binary selection pattern z of length N maps to a half-open dyadic interval
of width 2^-N inside [0, 1); any cutoff inside that interval, compared
against midpoint query scores by binary search, reproduces z exactly. All
arithmetic is integer-exact (numerator / 2^scale with arbitrary-precision
numerators), because the construction is about unlimited cutoff precision
— native floats would break round-trips past the mantissa.

The bound calculators quantify how many bits of advice a causal router
needs to realize arbitrary top-k selections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidConfigError

__all__ = [
    "DyadicCutoff",
    "DyadicInterval",
    "encode_interval",
    "pick_cutoff",
    "decode_pattern",
    "quantize_cutoff",
    "leakage_bits_lower",
    "leakage_bits_eq7",
]


@dataclass(frozen=True, order=False)
class DyadicCutoff:
    """Exact dyadic rational numerator / 2^scale in [0, 1]."""

    numerator: int
    scale: int

    def __post_init__(self):
        if self.scale < 0:
            raise InvalidConfigError("scale must be >= 0")
        if not 0 <= self.numerator <= (1 << self.scale):
            raise InvalidConfigError(
                f"numerator {self.numerator} out of [0, 2^{self.scale}]"
            )

    def _common(self, other: "DyadicCutoff") -> tuple[int, int]:
        s = max(self.scale, other.scale)
        return self.numerator << (s - self.scale), other.numerator << (s - other.scale)

    def __lt__(self, other):
        a, b = self._common(other)
        return a < b

    def __le__(self, other):
        a, b = self._common(other)
        return a <= b

    def __eq__(self, other):
        if not isinstance(other, DyadicCutoff):
            return NotImplemented
        a, b = self._common(other)
        return a == b

    def __hash__(self):
        n, s = self.numerator, self.scale
        while s > 0 and n % 2 == 0:
            n //= 2
            s -= 1
        return hash((n, s))

    def as_float(self) -> float:
        return self.numerator / (1 << self.scale)

    def __repr__(self):
        return f"{self.numerator}/2^{self.scale}"


@dataclass(frozen=True)
class DyadicInterval:
    """Half-open interval [lower, upper) with exact dyadic endpoints."""

    lower: DyadicCutoff
    upper: DyadicCutoff

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InvalidConfigError("interval requires lower < upper")

    def contains(self, c: DyadicCutoff) -> bool:
        return self.lower <= c and c < self.upper


def _check_pattern(z: Sequence[int]) -> list[int]:
    bits = [int(b) for b in z]
    if len(bits) < 1:
        raise InvalidConfigError("pattern must have at least one bit")
    if any(b not in (0, 1) for b in bits):
        raise InvalidConfigError("pattern entries must be 0 or 1")
    return bits


def encode_interval(z: Sequence[int]) -> DyadicInterval:
    """Map a selection pattern to its dyadic interval.

    lower = sum_t (1 - z_t) * 2^-t, upper = lower + 2^-N. The all-ones
    pattern owns the leftmost interval [0, 2^-N) and all-zeros the
    rightmost [1 - 2^-N, 1): patterns are ordered descending.
    """
    bits = _check_pattern(z)
    n = len(bits)
    lower = 0
    for t, bit in enumerate(bits, start=1):
        lower += (1 - bit) << (n - t)
    return DyadicInterval(
        lower=DyadicCutoff(lower, n),
        upper=DyadicCutoff(lower + 1, n),
    )


def pick_cutoff(interval: DyadicInterval) -> DyadicCutoff:
    """Midpoint of the interval, exact at one extra bit of scale.

    Any interior point decodes correctly; the midpoint maximizes the margin
    to both decision boundaries.
    """
    s = max(interval.lower.scale, interval.upper.scale)
    lo = interval.lower.numerator << (s - interval.lower.scale)
    hi = interval.upper.numerator << (s - interval.upper.scale)
    return DyadicCutoff(lo + hi, s + 1)


def decode_pattern(c: DyadicCutoff, n: int) -> tuple[list[int], DyadicInterval]:
    """Binary-search decoding of a cutoff into its length-n pattern.

    Starting from [0, 1), the query score at step t is the midpoint of the
    current bracket; the oracle bit is 1 iff midpoint >= c (note ">=", the
    decoding convention — the threshold rule itself uses strict ">").
    Selected halves the bracket downward, unselected upward. Returns the
    bit pattern and the final width-2^-n bracket.
    """
    if n < 1:
        raise InvalidConfigError("pattern length must be >= 1")
    zero = DyadicCutoff(0, 0)
    one = DyadicCutoff(1, 0)
    if c < zero or one < c:
        raise InvalidConfigError("cutoff must lie in [0, 1]")
    bits: list[int] = []
    # bracket numerators at the running scale; width halves every step
    lo, hi = 0, 1
    scale = 0
    for _ in range(n):
        scale += 1
        lo <<= 1
        hi <<= 1
        mid = (lo + hi) // 2
        midpoint = DyadicCutoff(mid, scale)
        if c <= midpoint:  # midpoint >= c
            bits.append(1)
            hi = mid
        else:
            bits.append(0)
            lo = mid
    return bits, DyadicInterval(
        lower=DyadicCutoff(lo, scale), upper=DyadicCutoff(hi, scale)
    )


def quantize_cutoff(c: DyadicCutoff, bits: int) -> DyadicCutoff:
    """Truncate a cutoff to `bits` fractional bits (toward zero)."""
    if bits < 0:
        raise InvalidConfigError("bits must be >= 0")
    if c.scale <= bits:
        return DyadicCutoff(c.numerator << (bits - c.scale), bits)
    return DyadicCutoff(c.numerator >> (c.scale - bits), bits)


def leakage_bits_lower(n: int, k: int) -> float:
    """log2 of C(n, k): advice bits needed to realize every top-k pattern.

    Uses log-gamma so huge n never overflows.
    """
    if not 0 <= k <= n:
        raise InvalidConfigError(f"need 0 <= k <= n, got k={k}, n={n}")
    if k == 0 or k == n:
        return 0.0
    log_binom = (
        math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    )
    return log_binom / math.log(2.0)


def leakage_bits_eq7(
    n: int, granularity: int, expansion: int, layers: int = 1
) -> tuple[float, float]:
    """Per-token leakage of pool-wide top-k selection and its closed form.

    Returns (bound, closed_form_lower) where
    bound = layers * (GE / n) * log2 C(n, n / E) and
    closed_form_lower = layers * G * log2(E - 1); the first strictly exceeds
    the second whenever E >= 3.
    """
    if expansion < 2:
        raise InvalidConfigError("expansion must be >= 2")
    if granularity < 1 or layers < 1:
        raise InvalidConfigError("granularity and layers must be >= 1")
    if n % expansion != 0:
        raise InvalidConfigError(
            f"pool size {n} must be divisible by expansion {expansion}"
        )
    k = n // expansion
    n_experts = granularity * expansion
    per_token = (n_experts / n) * leakage_bits_lower(n, k)
    closed_form = granularity * math.log2(expansion - 1) if expansion > 1 else 0.0
    return layers * per_token, layers * closed_form
