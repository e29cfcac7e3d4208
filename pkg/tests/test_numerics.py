from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from hspi.errors import ConfigError, NumericsError, ShapeError
from hspi.numerics import (
    BF16,
    FP8_E3M4,
    FP8_E4M3,
    FP16,
    FP32,
    INT8_DYNAMIC,
    MXINT8,
    PAIRWISE,
    SEQUENTIAL,
    AccumOrder,
    BlockIntFormat,
    FormatSpec,
    decode,
    dot,
    encode,
    enumerate_values,
    format_accum_order,
    format_scheme,
    parse_accum_order,
    parse_scheme,
    quantize_array,
    quantize_tensor,
    quantize_value,
    reduce_array,
    reduce_sum,
)

# Integers only, rounding ties to even: partial sums land on whole numbers.
INT_GRID = FormatSpec("int16-grid", 0, 16, -15, supports_inf=False, supports_nan=False)


def _nearest_by_enumeration(x: np.ndarray, fmt: FormatSpec) -> np.ndarray:
    values = enumerate_values(fmt)
    codes = np.arange(len(values))
    keep = np.isfinite(values) & ~((values == 0) & (codes >> (fmt.total_bits - 1) == 1))
    order = np.argsort(values[keep])
    grid, grid_codes = values[keep][order], codes[keep][order]
    hi = np.clip(np.searchsorted(grid, x), 1, len(grid) - 1)
    lo = hi - 1
    d_lo, d_hi = np.abs(x - grid[lo]), np.abs(grid[hi] - x)
    pick_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (grid_codes[hi] % 2 == 0))
    return np.where(pick_hi, grid[hi], grid[lo])


# ═══════════════════════════════════════════════════════════════
# Formats and encodings
# ═══════════════════════════════════════════════════════════════

def test_fp8_e4m3_enumeration():
    values = enumerate_values(FP8_E4M3)
    assert len(values) == 256
    assert np.isnan(values).sum() == 2
    assert not np.isinf(values).any()
    assert np.nanmax(values) == 448.0
    assert FP8_E4M3.min_subnormal == 2.0 ** -9


def test_special_values():
    assert FP16.max_finite == 65504.0
    assert BF16.max_finite == (2 - 2.0 ** -7) * 2.0 ** 127
    assert math.isinf(decode(0x7C00, FP16))
    assert math.isnan(decode(0x7F, FP8_E4M3))
    assert decode(0x3C00, FP16) == 1.0


def test_quantize_value_examples():
    assert quantize_value(0.1, FP8_E4M3) == 0.1015625
    assert quantize_value(1e6, FP16) == math.inf
    assert quantize_value(-1e6, FP16) == -math.inf
    assert quantize_value(1e6, FP8_E4M3) == 448.0
    assert quantize_value(1.0 + 2.0 ** -11, FP16) == 1.0   # tie, even mantissa wins
    assert quantize_value(1.0 + 3 * 2.0 ** -11, FP16) == 1.0 + 2.0 ** -9


def test_encode_decode_agree():
    for code in range(256):
        v = decode(code, FP8_E4M3)
        if math.isnan(v) or (v == 0 and code):
            continue
        assert encode(v, FP8_E4M3) == code


def test_nan_into_nanless_format_is_rejected():
    with pytest.raises(NumericsError):
        quantize_array(np.array([math.nan]), INT_GRID)


@pytest.mark.parametrize("fmt,limit", [(FP8_E4M3, 400.0), (FP8_E3M4, 25.0), (FP16, 6e4)])
def test_quantize_matches_brute_force_enumeration(fmt, limit):
    rng = np.random.default_rng(5)
    x = np.concatenate([rng.uniform(-limit, limit, 5000),
                        rng.uniform(-1, 1, 4000) * fmt.min_subnormal * 64,
                        rng.uniform(-1, 1, 1000)])
    np.testing.assert_array_equal(quantize_array(x, fmt), _nearest_by_enumeration(x, fmt))


@pytest.mark.parametrize("fmt", [FP32, FP16, BF16, FP8_E4M3, FP8_E3M4])
def test_quantize_is_idempotent_and_monotone(fmt, rng):
    x = np.sort(rng.normal(0, 10, 2000))
    q = quantize_array(x, fmt)
    np.testing.assert_array_equal(quantize_array(q, fmt), q)
    assert (np.diff(q) >= 0).all()


def test_dynamic_int8():
    x = np.array([1.0, -1.0, 0.25])
    expected = np.array([127.0, -127.0, 32.0]) * (1.0 / 127)
    np.testing.assert_array_equal(quantize_tensor(x, INT8_DYNAMIC), expected)
    np.testing.assert_array_equal(quantize_tensor(np.zeros(3), INT8_DYNAMIC), np.zeros(3))


def test_block_int_constant_block():
    x = np.full(16, 0.3)
    q = quantize_tensor(x, MXINT8)
    step = 2.0 ** (-2 - 6)
    assert np.all(q == q[0])
    assert abs(q[0] - 0.3) <= step


def test_block_int_blocks_are_independent():
    fmt = BlockIntFormat(8, 4, 8)
    x = np.array([100.0, 1.0, 1.0, 1.0, 0.01, 0.02, 0.03, 0.04])
    q = quantize_tensor(x, fmt)
    assert q[1] == 1.0
    assert q[4] != 0.0


def test_quantize_empty_tensor():
    with pytest.raises(ShapeError):
        quantize_tensor(np.zeros(0), FP16)


# ═══════════════════════════════════════════════════════════════
# Reductions
# ═══════════════════════════════════════════════════════════════

def test_rounding_order_changes_the_sum():
    v = [100.4, 0.4, 0.5]
    assert reduce_sum(v, SEQUENTIAL, INT_GRID) == 102.0
    assert reduce_sum(v, PAIRWISE, INT_GRID) == 101.0


def test_fp32_order_witness():
    v = [1.0, 1e8, -1e8]
    exact = sum(Fraction(x) for x in v)
    assert exact == 1
    assert reduce_sum(v, SEQUENTIAL, FP32) == 0.0
    assert reduce_sum(v, PAIRWISE, FP32) == 1.0


def test_blocked_order_differs_on_cancellation():
    a = [1e8, 3, 3, 3, 3, 3, 3, 3, -1e8]
    b = [1.0] * len(a)
    assert sum(Fraction(x) for x in a) == 21
    assert dot(a, b, SEQUENTIAL, FP32) == 0.0
    assert dot(a, b, AccumOrder("blocked", 4), FP32) == 16.0


def test_split_k_reduces_chunks_then_combines():
    v = np.array([[1e8, 3, 3, 3, 3, 3, 3, 3, -1e8]])
    one = reduce_array(v, SEQUENTIAL, FP32, splits=1)
    three = reduce_array(v, SEQUENTIAL, FP32, splits=3)
    assert one[0] == 0.0
    # chunks [1e8,3,3] [3,3,3] [3,3,-1e8] reduce to 1e8, 9, -99999992
    assert three[0] == 16.0


def test_reduction_of_exact_values_ignores_order(rng):
    v = rng.integers(-50, 50, size=(4, 37)).astype(np.float64)
    for order in (SEQUENTIAL, PAIRWISE, AccumOrder("blocked", 5)):
        np.testing.assert_array_equal(reduce_array(v, order, FP32), v.sum(axis=1))


def test_reduce_rejects_empty():
    with pytest.raises(NumericsError):
        reduce_sum([], SEQUENTIAL, FP32)


def test_dot_length_mismatch():
    with pytest.raises(ShapeError):
        dot([1.0, 2.0], [1.0], SEQUENTIAL, FP32)


# ═══════════════════════════════════════════════════════════════
# Text forms
# ═══════════════════════════════════════════════════════════════

def test_parse_scheme():
    assert parse_scheme("fp8-e4m3") is FP8_E4M3
    assert parse_scheme("mxint8:bs=32") == MXINT8
    assert parse_scheme("int8-dyn") == INT8_DYNAMIC
    e5m2 = parse_scheme("e5m2")
    assert (e5m2.exponent_bits, e5m2.mantissa_bits, e5m2.bias) == (5, 2, 15)
    assert parse_scheme("e4m3:bias=8").bias == 8


@pytest.mark.parametrize("text", ["fp32", "bf16", "mxint8:bs=16", "int8-dyn", "e4m3:bias=8", "e5m2"])
def test_format_scheme_inverts_parse(text):
    assert parse_scheme(format_scheme(parse_scheme(text))) == parse_scheme(text)


@pytest.mark.parametrize("text", ["fp12", "mxint8:bs=x", "e4m3:colour=red", "int1"])
def test_parse_scheme_errors(text):
    with pytest.raises(ConfigError):
        parse_scheme(text)


def test_accum_order_text():
    assert parse_accum_order("blocked:bs=16") == AccumOrder("blocked", 16)
    assert parse_accum_order("pairwise") == PAIRWISE
    assert format_accum_order(AccumOrder("blocked", 8)) == "blocked:bs=8"
    with pytest.raises(ConfigError):
        parse_accum_order("blocked")
    with pytest.raises(ConfigError):
        parse_accum_order("zigzag")


@pytest.mark.parametrize("fmt", [FP32, FP16, BF16, FP8_E4M3, FP8_E3M4])
def test_quantize_idempotent_and_monotone_across_the_whole_range(fmt):
    rng = np.random.default_rng(17)
    lo = fmt.min_exponent - fmt.mantissa_bits - 2
    hi = np.log2(fmt.max_finite) + 2
    x = np.sign(rng.uniform(-1, 1, 10_000)) * np.exp2(rng.uniform(lo, hi, 10_000))
    x[:50] = 0.0
    x = np.sort(x)
    q = quantize_array(x, fmt)
    np.testing.assert_array_equal(quantize_array(q, fmt), q)
    assert (q[1:] >= q[:-1]).all()
