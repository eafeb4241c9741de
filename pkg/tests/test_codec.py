import itertools
import math

import pytest

from moelab.codec import (
    DyadicCutoff,
    DyadicInterval,
    decode_pattern,
    encode_interval,
    leakage_bits_eq7,
    leakage_bits_lower,
    pick_cutoff,
    quantize_cutoff,
)
from moelab.errors import InvalidConfigError


# --- encode_interval ----------------------------------------------------------

def test_encode_hand_value():
    # lower = (1 - 1)/2 + (1 - 0)/4 = 1/4, width 1/4
    iv = encode_interval([1, 0])
    assert iv.lower == DyadicCutoff(1, 2)
    assert iv.upper == DyadicCutoff(2, 2)


def test_all_ones_is_leftmost():
    for n in (1, 3, 8):
        iv = encode_interval([1] * n)
        assert iv.lower == DyadicCutoff(0, n)
        assert iv.upper == DyadicCutoff(1, n)


def test_all_zeros_is_rightmost():
    for n in (1, 3, 8):
        iv = encode_interval([0] * n)
        assert iv.lower == DyadicCutoff((1 << n) - 1, n)
        assert iv.upper == DyadicCutoff(1 << n, n)


def test_encode_rejects_bad_patterns():
    with pytest.raises(InvalidConfigError):
        encode_interval([])
    with pytest.raises(InvalidConfigError):
        encode_interval([0, 2])


# --- pick_cutoff ----------------------------------------------------------------

def test_midpoint_values():
    assert pick_cutoff(encode_interval([1, 0])) == DyadicCutoff(3, 3)  # 3/8
    full = DyadicInterval(DyadicCutoff(0, 0), DyadicCutoff(1, 0))
    assert pick_cutoff(full) == DyadicCutoff(1, 1)  # 1/2


def test_midpoint_strictly_inside():
    import random

    rng = random.Random(5)
    for _ in range(200):
        n = rng.randint(1, 24)
        z = [rng.randint(0, 1) for _ in range(n)]
        iv = encode_interval(z)
        c = pick_cutoff(iv)
        assert iv.lower < c < iv.upper


# --- decode_pattern ---------------------------------------------------------------

def test_decode_traced_example():
    # c = 5/16: step 1 mid 1/2 >= c -> 1; step 2 mid 1/4 < c -> 0
    bits, iv = decode_pattern(DyadicCutoff(5, 4), 2)
    assert bits == [1, 0]
    assert iv.lower == DyadicCutoff(1, 2)
    assert iv.upper == DyadicCutoff(2, 2)


def test_decode_extremes():
    bits, _ = decode_pattern(DyadicCutoff(0, 0), 5)
    assert bits == [1] * 5
    bits, _ = decode_pattern(DyadicCutoff(1, 0), 5)
    assert bits == [0] * 5


def test_decode_rejects_out_of_range():
    with pytest.raises(InvalidConfigError):
        DyadicCutoff(5, 2)  # 5/4 > 1 rejected at construction
    with pytest.raises(InvalidConfigError):
        decode_pattern(DyadicCutoff(1, 1), 0)


# --- round trips -------------------------------------------------------------------

def test_round_trip_exhaustive_small():
    for n in range(1, 9):
        for z in itertools.product((0, 1), repeat=n):
            iv = encode_interval(z)
            bits, back = decode_pattern(pick_cutoff(iv), n)
            assert bits == list(z)
            assert back.lower == iv.lower and back.upper == iv.upper


def test_round_trip_random_long_patterns():
    import random

    rng = random.Random(99)
    for n in (32, 64, 256):
        for _ in range(50):
            z = [rng.randint(0, 1) for _ in range(n)]
            bits, back = decode_pattern(pick_cutoff(encode_interval(z)), n)
            assert bits == z
            assert back == encode_interval(z)


def test_interval_partition_disjoint_and_covering():
    for n in (1, 2, 5):
        numerators = set()
        for z in itertools.product((0, 1), repeat=n):
            iv = encode_interval(z)
            assert iv.upper.numerator - iv.lower.numerator == 1
            assert iv.lower.scale == n
            numerators.add(iv.lower.numerator)
        assert numerators == set(range(1 << n))  # tile [0, 1) exactly


def test_decoded_interval_contains_interior_cutoffs():
    import random

    rng = random.Random(123)
    for _ in range(200):
        n = rng.randint(1, 16)
        # odd numerator at scale n + 1 can never equal a queried midpoint
        c = DyadicCutoff(2 * rng.randint(0, (1 << n) - 1) + 1, n + 1)
        _, iv = decode_pattern(c, n)
        assert iv.contains(c)


def test_finite_precision_quantization_caps_patterns():
    # every 8-bit cutoff decodes to one pattern: at most 2^8 reachable
    patterns = set()
    for m in range(1 << 8):
        bits, _ = decode_pattern(DyadicCutoff(m, 8), 16)
        patterns.add(tuple(bits))
    assert len(patterns) <= 256


def test_quantize_cutoff():
    c = DyadicCutoff(5, 4)  # 0.3125
    q = quantize_cutoff(c, 2)
    assert q == DyadicCutoff(1, 2)  # 0.25, truncated toward zero
    assert quantize_cutoff(DyadicCutoff(1, 1), 4) == DyadicCutoff(8, 4)


# --- leakage bounds -----------------------------------------------------------------

def test_log2_binomial_values():
    assert leakage_bits_lower(16, 2) == pytest.approx(math.log2(120), rel=1e-12)
    assert leakage_bits_lower(4, 2) == pytest.approx(math.log2(6), rel=1e-12)
    assert leakage_bits_lower(10, 0) == 0.0
    assert leakage_bits_lower(10, 10) == 0.0


def test_log2_binomial_matches_exhaustive_count():
    # oracle: enumerate all k-subsets for a small case
    n, k = 12, 5
    count = sum(1 for _ in itertools.combinations(range(n), k))
    assert leakage_bits_lower(n, k) == pytest.approx(math.log2(count), rel=1e-12)


def test_eq7_paper_configuration_exceeds_fifty_bits():
    bound, closed = leakage_bits_eq7(512, granularity=2, expansion=8, layers=9)
    assert closed == pytest.approx(9 * 2 * math.log2(7), rel=1e-12)
    assert closed > 50
    assert bound > closed


def test_eq7_degenerate_expansion_two():
    _, closed = leakage_bits_eq7(16, granularity=1, expansion=2, layers=1)
    assert closed == 0.0


def test_eq7_single_layer_example():
    bound, closed = leakage_bits_eq7(16, granularity=1, expansion=8, layers=1)
    assert bound == pytest.approx(0.5 * math.log2(120), rel=1e-12)
    assert closed == pytest.approx(math.log2(7), rel=1e-12)
    assert bound > closed


def test_eq7_inequality_across_configs():
    for expansion in (3, 4, 8, 16):
        for granularity in (1, 2, 4):
            for mult in (1, 2, 16):
                n = expansion * mult
                bound, closed = leakage_bits_eq7(n, granularity, expansion)
                assert bound > closed


def test_eq7_rejects_indivisible_pool():
    with pytest.raises(InvalidConfigError):
        leakage_bits_eq7(10, granularity=1, expansion=4)


# --- dyadic arithmetic ---------------------------------------------------------------

def test_dyadic_comparisons_across_scales():
    assert DyadicCutoff(1, 1) == DyadicCutoff(2, 2)
    assert DyadicCutoff(1, 2) < DyadicCutoff(1, 1)
    assert hash(DyadicCutoff(1, 1)) == hash(DyadicCutoff(4, 3))


def test_dyadic_rejects_out_of_unit_interval():
    with pytest.raises(InvalidConfigError):
        DyadicCutoff(-1, 4)
    with pytest.raises(InvalidConfigError):
        DyadicCutoff(17, 4)
