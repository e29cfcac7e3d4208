"""Bit-exact emulation of low-precision number formats and reduction orders.

Everything is carried in float64.  Rounding happens only at the points a
function documents, so two runs with the same inputs, format and order are
bit-identical regardless of thread count.

Supported schemes:
  FormatSpec        sign/exponent/mantissa minifloats (FP32 … FP8), RNE
  BlockIntFormat    MX-style block integers with a shared exponent
  DynamicIntScheme  per-tensor absmax integer quantization
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Sequence, Union

import numpy as np

from hspi.config import parse_options
from hspi.errors import ConfigError, NumericsError, ShapeError


# ═══════════════════════════════════════════════════════════════
# Formats
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class FormatSpec:
    name: str
    exponent_bits: int
    mantissa_bits: int
    bias: int
    supports_inf: bool = True
    supports_nan: bool = True

    def __post_init__(self) -> None:
        if self.exponent_bits < 0 or self.mantissa_bits < 0:
            raise NumericsError("bad-format", f"{self.name}: negative field width")
        if self.total_bits > 32:
            raise NumericsError("bad-format", f"{self.name}: {self.total_bits} bits > 32")
        if self.supports_inf and (not self.supports_nan or self.exponent_bits == 0):
            raise NumericsError("bad-format", f"{self.name}: Inf needs an IEEE-style exponent with NaN")
        if self.supports_nan and not self.supports_inf and self.mantissa_bits == 0:
            raise NumericsError("bad-format", f"{self.name}: NaN-only encoding needs a mantissa")

    @property
    def total_bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def min_exponent(self) -> int:
        return 1 - self.bias

    @cached_property
    def max_finite(self) -> float:
        top_exp = (1 << self.exponent_bits) - 1 - (1 if self.supports_inf else 0)
        top_mant = (1 << self.mantissa_bits) - 1
        if self.supports_nan and not self.supports_inf and top_exp == (1 << self.exponent_bits) - 1:
            top_mant -= 1   # all-ones code is NaN
        return decode((top_exp << self.mantissa_bits) | top_mant, self)

    @cached_property
    def min_subnormal(self) -> float:
        return math.ldexp(1.0, self.min_exponent - self.mantissa_bits)


@dataclass(frozen=True)
class BlockIntFormat:
    element_bits: int = 8
    block_size: int = 32
    shared_exponent_bits: int = 8

    def __post_init__(self) -> None:
        if self.element_bits < 2 or self.block_size < 1 or self.shared_exponent_bits < 1:
            raise NumericsError("bad-format", f"invalid block format {self}")

    @property
    def name(self) -> str:
        return f"mxint{self.element_bits}"


@dataclass(frozen=True)
class DynamicIntScheme:
    bits: int = 8
    symmetric: bool = True
    granularity: Literal["per-tensor"] = "per-tensor"

    def __post_init__(self) -> None:
        if self.bits < 2:
            raise NumericsError("bad-format", f"invalid integer width {self.bits}")

    @property
    def name(self) -> str:
        return f"int{self.bits}-dyn"


Scheme = Union[FormatSpec, BlockIntFormat, DynamicIntScheme]


@dataclass(frozen=True)
class AccumOrder:
    kind: Literal["sequential-left", "pairwise-tree", "blocked"] = "sequential-left"
    block_size: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sequential-left", "pairwise-tree", "blocked"):
            raise NumericsError("bad-order", f"unknown accumulation order {self.kind!r}")
        if self.kind == "blocked" and (self.block_size is None or self.block_size < 1):
            raise NumericsError("bad-order", "blocked order needs a positive block_size")
        if self.kind != "blocked" and self.block_size is not None:
            raise NumericsError("bad-order", f"{self.kind} takes no block_size")


FP32 = FormatSpec("fp32", 8, 23, 127)
FP16 = FormatSpec("fp16", 5, 10, 15)
BF16 = FormatSpec("bf16", 8, 7, 127)
FP8_E4M3 = FormatSpec("fp8-e4m3", 4, 3, 7, supports_inf=False)
FP8_E3M4 = FormatSpec("fp8-e3m4", 3, 4, 3, supports_inf=False)
MXINT8 = BlockIntFormat(8, 32, 8)
INT8_DYNAMIC = DynamicIntScheme(8)

SEQUENTIAL = AccumOrder("sequential-left")
PAIRWISE = AccumOrder("pairwise-tree")

_BUILTIN_FORMATS = {
    "fp32": FP32,
    "fp16": FP16,
    "bf16": BF16,
    "fp8-e4m3": FP8_E4M3,
    "fp8-e4": FP8_E4M3,
    "fp8-e3m4": FP8_E3M4,
    "fp8-e3": FP8_E3M4,
}


# ═══════════════════════════════════════════════════════════════
# Encodings
# ═══════════════════════════════════════════════════════════════

def decode(code: int, fmt: FormatSpec) -> float:
    """Real value of the bit pattern ``code`` in ``fmt``."""
    e, m = fmt.exponent_bits, fmt.mantissa_bits
    sign = -1.0 if (code >> (e + m)) & 1 else 1.0
    exp_code = (code >> m) & ((1 << e) - 1)
    mant = code & ((1 << m) - 1)
    all_ones = (1 << e) - 1
    if fmt.supports_inf and exp_code == all_ones:
        return sign * math.inf if mant == 0 else math.nan
    if fmt.supports_nan and not fmt.supports_inf and exp_code == all_ones and mant == (1 << m) - 1:
        return math.nan
    if exp_code == 0:
        return sign * math.ldexp(mant, fmt.min_exponent - m)
    return sign * math.ldexp((1 << m) | mant, exp_code - fmt.bias - m)


def encode(x: float, fmt: FormatSpec) -> int:
    """Bit pattern of ``quantize_value(x, fmt)``."""
    e, m = fmt.exponent_bits, fmt.mantissa_bits
    v = quantize_value(x, fmt)
    if math.isnan(v):
        return ((1 << (e + m)) - 1) if not fmt.supports_inf else (((1 << e) - 1) << m) | (1 << max(m - 1, 0))
    sign = (1 << (e + m)) if math.copysign(1.0, v) < 0 else 0
    a = abs(v)
    if math.isinf(a):
        return sign | (((1 << e) - 1) << m)
    if a < math.ldexp(1.0, fmt.min_exponent):
        return sign | int(a / fmt.min_subnormal)
    frac, exp2 = math.frexp(a)
    unbiased = exp2 - 1
    mant = int(math.ldexp(a, m - unbiased)) - (1 << m)
    return sign | ((unbiased + fmt.bias) << m) | mant


def enumerate_values(fmt: FormatSpec) -> np.ndarray:
    """All 2**total_bits decoded values, indexed by code (≤ 16-bit formats)."""
    if fmt.total_bits > 16:
        raise NumericsError("too-wide", f"{fmt.name} has {fmt.total_bits} bits; enumeration capped at 16")
    return np.array([decode(c, fmt) for c in range(1 << fmt.total_bits)], dtype=np.float64)


# ═══════════════════════════════════════════════════════════════
# Quantization
# ═══════════════════════════════════════════════════════════════

def quantize_array(x: np.ndarray | float, fmt: FormatSpec) -> np.ndarray:
    """Round every element to the nearest ``fmt`` value, ties to even."""
    x = np.asarray(x, dtype=np.float64)
    if not fmt.supports_nan and np.isnan(x).any():
        raise NumericsError("unrepresentable-nan", f"{fmt.name} has no NaN encoding")
    with np.errstate(over="ignore", invalid="ignore"):
        _, e = np.frexp(x)
        exp = np.maximum(e - 1, fmt.min_exponent)
        quantum = np.ldexp(1.0, exp - fmt.mantissa_bits)
        q = np.rint(x / quantum) * quantum
        over = np.abs(q) > fmt.max_finite
        if over.any():
            limit = math.inf if fmt.supports_inf else fmt.max_finite
            q = np.where(over, np.copysign(limit, x), q)
    return q


def quantize_value(x: float, fmt: FormatSpec) -> float:
    return float(quantize_array(x, fmt))


def _quantize_block_int(x: np.ndarray, fmt: BlockIntFormat) -> np.ndarray:
    shape = x.shape
    rows = x.reshape(-1, shape[-1]) if x.ndim else x.reshape(1, 1)
    n, bs = rows.shape[1], fmt.block_size
    nb = -(-n // bs)
    padded = np.zeros((rows.shape[0], nb * bs))
    padded[:, :n] = rows
    blocks = padded.reshape(rows.shape[0], nb, bs)

    amax = np.abs(blocks).max(axis=-1, keepdims=True)
    _, e = np.frexp(amax)
    emax = (1 << (fmt.shared_exponent_bits - 1)) - 1
    shared = np.clip(e - 1, -emax, emax)
    step = np.ldexp(1.0, shared - (fmt.element_bits - 2))
    qmax = (1 << (fmt.element_bits - 1)) - 1
    q = np.clip(np.rint(blocks / step), -qmax, qmax) * step
    q = np.where(amax > 0, q, 0.0)
    return q.reshape(rows.shape[0], nb * bs)[:, :n].reshape(shape)


def _quantize_dynamic(x: np.ndarray, scheme: DynamicIntScheme) -> np.ndarray:
    qmax = (1 << (scheme.bits - 1)) - 1
    if scheme.symmetric:
        amax = float(np.abs(x).max())
        scale = amax / qmax if amax > 0 else 1.0
        return np.clip(np.rint(x / scale), -qmax, qmax) * scale
    lo, hi = float(x.min()), float(x.max())
    scale = (hi - lo) / (2 * qmax + 1) if hi > lo else 1.0
    zero_point = np.rint(-lo / scale) - (qmax + 1)
    q = np.clip(np.rint(x / scale) + zero_point, -(qmax + 1), qmax)
    return (q - zero_point) * scale


def quantize_tensor(t: np.ndarray, scheme: Scheme) -> np.ndarray:
    """Fake-quantize ``t``: each element becomes dequantize(encode(element))."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise ShapeError("empty-tensor", "cannot quantize an empty tensor")
    if isinstance(scheme, FormatSpec):
        return quantize_array(t, scheme)
    if isinstance(scheme, BlockIntFormat):
        return _quantize_block_int(t, scheme)
    return _quantize_dynamic(t, scheme)


# ═══════════════════════════════════════════════════════════════
# Reductions
# ═══════════════════════════════════════════════════════════════

def _sequential(v: np.ndarray, fmt: FormatSpec) -> np.ndarray:
    acc = v[..., 0]
    for k in range(1, v.shape[-1]):
        acc = quantize_array(acc + v[..., k], fmt)
    return acc


def _tree(v: np.ndarray, fmt: FormatSpec) -> np.ndarray:
    n = v.shape[-1]
    if n == 1:
        return v[..., 0]
    half = n // 2
    return quantize_array(_tree(v[..., :half], fmt) + _tree(v[..., half:], fmt), fmt)


def _blocked(v: np.ndarray, block: int, fmt: FormatSpec) -> np.ndarray:
    n = v.shape[-1]
    full = n - n % block
    partials = []
    if full:
        blocks = v[..., :full].reshape(v.shape[:-1] + (full // block, block))
        partials.append(_sequential(blocks, fmt))
    if full < n:
        partials.append(_sequential(v[..., full:], fmt)[..., None])
    return _sequential(np.concatenate(partials, axis=-1), fmt)


def _reduce(v: np.ndarray, order: AccumOrder, fmt: FormatSpec) -> np.ndarray:
    if order.kind == "sequential-left":
        return _sequential(v, fmt)
    if order.kind == "pairwise-tree":
        return _tree(v, fmt)
    return _blocked(v, order.block_size or 1, fmt)


def reduce_array(v: np.ndarray, order: AccumOrder, fmt: FormatSpec, splits: int = 1) -> np.ndarray:
    """Sum along the last axis; every partial sum is rounded to ``fmt``.

    ``splits`` > 1 cuts the axis into that many contiguous chunks (split-K),
    reduces each with ``order`` and adds the chunk results left to right.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[-1]
    if n == 0:
        raise NumericsError("empty-sum", "reduce over zero elements")
    splits = max(1, min(splits, n))
    if splits == 1:
        return quantize_array(_reduce(v, order, fmt), fmt)
    bounds = np.linspace(0, n, splits + 1).astype(int)
    partials = np.stack([_reduce(v[..., a:b], order, fmt) for a, b in zip(bounds[:-1], bounds[1:])], axis=-1)
    return quantize_array(_sequential(partials, fmt), fmt)


def reduce_sum(values: Sequence[float], order: AccumOrder, fmt: FormatSpec) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise NumericsError("empty-sum", "reduce_sum needs a non-empty 1-D sequence")
    return float(reduce_array(v, order, fmt))


def dot(a: Sequence[float], b: Sequence[float], order: AccumOrder, fmt: FormatSpec) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("length-mismatch", f"dot of shapes {a.shape} and {b.shape}")
    return float(reduce_array(quantize_array(a * b, fmt), order, fmt))


# ═══════════════════════════════════════════════════════════════
# Text forms
# ═══════════════════════════════════════════════════════════════

def parse_scheme(text: str | Scheme) -> Scheme:
    """``fp8-e4m3`` / ``bf16`` / ``e5m2`` / ``mxint8:bs=32`` / ``int8-dyn``."""
    if isinstance(text, (FormatSpec, BlockIntFormat, DynamicIntScheme)):
        return text
    if not isinstance(text, str):
        raise ConfigError("bad-format", f"expected a format string, got {type(text).__name__}")
    name, _, opts = text.strip().lower().partition(":")
    options = parse_options(opts)
    try:
        if name in _BUILTIN_FORMATS and not options:
            return _BUILTIN_FORMATS[name]
        if m := re.fullmatch(r"e(\d+)m(\d+)", name):
            e, mant = int(m.group(1)), int(m.group(2))
            bias = int(options.pop("bias", (1 << (e - 1)) - 1 if e else 1 - mant))
            if options:
                raise ConfigError("bad-format", f"unknown options {sorted(options)} for {name}")
            return FormatSpec(name, e, mant, bias, supports_inf=False, supports_nan=True)
        if m := re.fullmatch(r"mxint(\d+)", name):
            bs = int(options.pop("bs", 32))
            se = int(options.pop("se", 8))
            if options:
                raise ConfigError("bad-format", f"unknown options {sorted(options)} for {name}")
            return BlockIntFormat(int(m.group(1)), bs, se)
        if m := re.fullmatch(r"int(\d+)(-dyn)?", name):
            symmetric = options.pop("sym", "1") not in ("0", "false", "no")
            if options:
                raise ConfigError("bad-format", f"unknown options {sorted(options)} for {name}")
            return DynamicIntScheme(int(m.group(1)), symmetric)
    except (ValueError, NumericsError) as exc:
        raise ConfigError("bad-format", f"{text!r}: {exc}") from exc
    raise ConfigError("bad-format", f"unknown number format {text!r}")


def format_scheme(scheme: Scheme) -> str:
    if isinstance(scheme, FormatSpec):
        if _BUILTIN_FORMATS.get(scheme.name) == scheme:
            return scheme.name
        default_bias = (1 << (scheme.exponent_bits - 1)) - 1 if scheme.exponent_bits else 1 - scheme.mantissa_bits
        base = f"e{scheme.exponent_bits}m{scheme.mantissa_bits}"
        return base if scheme.bias == default_bias else f"{base}:bias={scheme.bias}"
    if isinstance(scheme, BlockIntFormat):
        extra = "" if scheme.shared_exponent_bits == 8 else f",se={scheme.shared_exponent_bits}"
        return f"mxint{scheme.element_bits}:bs={scheme.block_size}{extra}"
    return scheme.name + ("" if scheme.symmetric else ":sym=0")


def parse_accum_order(text: str | AccumOrder) -> AccumOrder:
    """``sequential-left`` / ``pairwise-tree`` / ``blocked:bs=16``."""
    if isinstance(text, AccumOrder):
        return text
    name, _, opts = str(text).strip().lower().partition(":")
    options = parse_options(opts)
    aliases = {"sequential": "sequential-left", "pairwise": "pairwise-tree"}
    name = aliases.get(name, name)
    try:
        if name == "blocked":
            return AccumOrder("blocked", int(options.get("bs", 0)))
        if options:
            raise ConfigError("bad-order", f"{name} takes no options")
        return AccumOrder(name)  # type: ignore[arg-type]
    except (ValueError, NumericsError) as exc:
        raise ConfigError("bad-order", f"{text!r}: {exc}") from exc


def format_accum_order(order: AccumOrder) -> str:
    return f"blocked:bs={order.block_size}" if order.kind == "blocked" else order.kind
