"""Scalar element formats and the exact arithmetic the rank-k updates are built on.

Every 128-bit register is serialized little-endian with lane 0 at the lowest
byte address.  Int4 lanes pack two per byte: lane ``2q`` in the low nibble of
byte ``q``, lane ``2q + 1`` in the high nibble.

Floating-point values travel as Python floats (binary64).  fp16, bf16 and
fp32 embed exactly in binary64, so decoding is lossless and all rounding to a
narrower format is done once, explicitly, by :func:`round_exact`.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

CANONICAL_NAN32 = 0x7FC00000
CANONICAL_NAN64 = 0x7FF8000000000000
CANONICAL_NAN16 = 0x7E00
CANONICAL_NAN_BF16 = 0x7FC0


class ElementFormat(enum.Enum):
    FP64 = ("fp64", 64, "d")
    FP32 = ("fp32", 32, "f")
    FP16 = ("fp16", 16, "e")
    BF16 = ("bf16", 16, "H")
    INT16 = ("int16", 16, "h")
    INT8 = ("int8", 8, "b")
    UINT8 = ("uint8", 8, "B")
    INT4 = ("int4", 4, None)
    INT32 = ("int32", 32, "i")

    def __init__(self, tag: str, lane_bits: int, struct_code: str | None):
        self.tag = tag
        self.lane_bits = lane_bits
        self.lanes_per_vsr = 128 // lane_bits
        self._struct = struct.Struct(f"<{self.lanes_per_vsr}{struct_code}") if struct_code else None

    @property
    def is_float(self) -> bool:
        return self in (ElementFormat.FP64, ElementFormat.FP32, ElementFormat.FP16, ElementFormat.BF16)

    @property
    def int_range(self) -> tuple[int, int]:
        if self.is_float:
            raise TypeError(f"{self.tag} is not an integer format")
        if self is ElementFormat.UINT8:
            return 0, 255
        half = 1 << (self.lane_bits - 1)
        return -half, half - 1

    @classmethod
    def from_tag(cls, tag: str) -> "ElementFormat":
        for fmt in cls:
            if fmt.tag == tag:
                return fmt
        raise KeyError(tag)


# --------------------------------------------------------------------------
# Exact rounding to a binary floating-point format


@dataclass(frozen=True)
class BinaryFormat:
    precision: int  # significand bits, hidden bit included
    emax: int

    @property
    def min_lsb_exp(self) -> int:
        # exponent of the smallest subnormal's only set bit
        return (1 - self.emax) - (self.precision - 1)


BINARY64 = BinaryFormat(53, 1023)
BINARY32 = BinaryFormat(24, 127)
BINARY16 = BinaryFormat(11, 15)
BFLOAT16 = BinaryFormat(8, 127)


def round_scaled(n: int, e: int, fmt: BinaryFormat = BINARY32) -> float:
    """Round the exact value ``n * 2**e`` to ``fmt`` (nearest, ties to even).

    Returns the rounded value as a Python float; overflow gives a signed
    infinity, and an exact zero gives ``+0.0``.
    """
    if n == 0:
        return 0.0
    neg = n < 0
    mag = -n if neg else n
    shift = max(mag.bit_length() - fmt.precision, fmt.min_lsb_exp - e)
    if shift > 0:
        q = mag >> shift
        rem = mag & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
        mag, e = q, e + shift
    if mag == 0:
        return -0.0 if neg else 0.0
    if mag.bit_length() + e > fmt.emax + 1:
        return -math.inf if neg else math.inf
    v = math.ldexp(float(mag), e)
    return -v if neg else v


def _split(x: float) -> tuple[int, int]:
    """Finite float as an exact (integer, exponent) pair."""
    m, ex = math.frexp(x)
    return int(m * 9007199254740992.0), ex - 53


def exact_sum(values: Iterable[float]) -> tuple[int, int]:
    """Exact sum of finite floats as ``(n, e)`` with value ``n * 2**e``."""
    parts = [_split(v) for v in values if v != 0.0]
    if not parts:
        return 0, 0
    lo = min(e for _, e in parts)
    return sum(n << (e - lo) for n, e in parts), lo


def zero_sign_sum(terms: Sequence[float]) -> float:
    """Signed zero produced by IEEE addition of exactly-cancelling terms.

    Under round-to-nearest the result is -0 only when every term is -0.
    """
    if all(t == 0.0 and math.copysign(1.0, t) < 0 for t in terms):
        return -0.0
    return 0.0


def round_exact(terms: Sequence[float], fmt: BinaryFormat = BINARY32) -> float:
    """Sum ``terms`` exactly and round once to ``fmt``.

    Non-finite terms follow ordinary IEEE addition (inf - inf is NaN).
    """
    for t in terms:
        if not math.isfinite(t):
            acc = 0.0
            for u in terms:
                acc += u
            return acc
    n, e = exact_sum(terms)
    if n == 0:
        return zero_sign_sum(terms)
    return round_scaled(n, e, fmt)


def _two_sum(a: float, b: float) -> tuple[float, float]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def sum_round_fp32(terms: Sequence[float]) -> float:
    """Exact sum of binary64 terms rounded once to binary32.

    Takes a fast path when the running binary64 sum is exact, which covers
    almost every operand combination the rank-k updates produce.
    """
    s = terms[0]
    exact = True
    for t in terms[1:]:
        s, err = _two_sum(s, t)
        if err != 0.0:
            exact = False
            break
    if exact and math.isfinite(s):
        if s == 0.0:
            return zero_sign_sum(terms)
        return f32_value(s)
    return round_exact(terms, BINARY32)


def f32_value(x: float) -> float:
    """Round a binary64 value to the nearest binary32 value."""
    try:
        return _F32.unpack(_F32.pack(x))[0]
    except OverflowError:
        return math.copysign(math.inf, x)


_F32 = struct.Struct("<f")
_F64 = struct.Struct("<d")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


# --------------------------------------------------------------------------
# Integer writeback


def saturate_to_int32(x: int) -> int:
    if x > INT32_MAX:
        return INT32_MAX
    if x < INT32_MIN:
        return INT32_MIN
    return x


def wrap_to_int32(x: int) -> int:
    x &= 0xFFFFFFFF
    return x - (1 << 32) if x & 0x80000000 else x


# --------------------------------------------------------------------------
# Floating-point writeback


def fp32_round(x: float) -> int:
    """Bits of ``x`` rounded to binary32; any NaN becomes the canonical quiet NaN."""
    if math.isnan(x):
        return CANONICAL_NAN32
    return _U32.unpack(_F32.pack(f32_value(x)))[0]


def fp32_bits(x: float) -> int:
    """Bits of a value already representable in binary32."""
    if math.isnan(x):
        return CANONICAL_NAN32
    return _U32.unpack(_F32.pack(x))[0]


def fp64_bits(x: float) -> int:
    if math.isnan(x):
        return CANONICAL_NAN64
    return _U64.unpack(_F64.pack(x))[0]


def fused_multiply_add_fp64(a: float, b: float, c: float) -> float:
    """``a * b + c`` with a single round-to-nearest-even step."""
    if not (math.isfinite(a) and math.isfinite(b)):
        return a * b + c
    if not math.isfinite(c):
        # the exact product is finite even when a * b would overflow
        return c
    if a == 0.0 or b == 0.0:
        return a * b + c
    if c == 0.0:
        # nonzero exact product: its own rounding carries the sign, even on underflow
        return a * b
    na, ea = _split(a)
    nb, eb = _split(b)
    nc, ec = _split(c)
    np_, ep = na * nb, ea + eb
    lo = min(ep, ec)
    n = (np_ << (ep - lo)) + (nc << (ec - lo))
    if n == 0:
        return 0.0
    return round_scaled(n, lo, BINARY64)


# --------------------------------------------------------------------------
# Lane encode/decode


def decode_lane(fmt: ElementFormat, raw: int) -> int | float:
    """Numeric value of one lane given its raw bit pattern."""
    bits = fmt.lane_bits
    if raw < 0 or raw >> bits:
        raise ValueError(f"raw lane 0x{raw:x} does not fit in {bits} bits")
    if fmt is ElementFormat.FP64:
        return _F64.unpack(_U64.pack(raw))[0]
    if fmt is ElementFormat.FP32:
        return _F32.unpack(_U32.pack(raw))[0]
    if fmt is ElementFormat.FP16:
        return struct.unpack("<e", struct.pack("<H", raw))[0]
    if fmt is ElementFormat.BF16:
        return _F32.unpack(_U32.pack(raw << 16))[0]
    if fmt is ElementFormat.UINT8:
        return raw
    return raw - (1 << bits) if raw >> (bits - 1) else raw


def encode_lane(fmt: ElementFormat, value: int | float) -> int:
    """Raw bit pattern of ``value`` in ``fmt``.

    Floats are rounded to nearest-even; NaN encodes as the canonical quiet
    NaN.  Integers must lie in the format's range.
    """
    if fmt.is_float:
        v = float(value)
        if fmt is ElementFormat.FP64:
            return fp64_bits(v)
        if fmt is ElementFormat.FP32:
            return fp32_round(v)
        if math.isnan(v):
            return CANONICAL_NAN16 if fmt is ElementFormat.FP16 else CANONICAL_NAN_BF16
        if fmt is ElementFormat.FP16:
            r = v if math.isinf(v) else round_exact([v], BINARY16)
            return struct.unpack("<H", struct.pack("<e", r))[0]
        r = v if math.isinf(v) else round_exact([v], BFLOAT16)
        return fp32_bits(r) >> 16
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"{value!r} is not an integer")
        value = int(value)
    lo, hi = fmt.int_range
    if not lo <= value <= hi:
        raise ValueError(f"{value} out of range for {fmt.tag} [{lo}, {hi}]")
    return value & ((1 << fmt.lane_bits) - 1)


def unpack(fmt: ElementFormat, data: bytes) -> list:
    """All lanes of a 16-byte register, lane 0 first."""
    if fmt._struct is not None:
        values = list(fmt._struct.unpack(data))
        if fmt is ElementFormat.BF16:
            return [_F32.unpack(_U32.pack(h << 16))[0] for h in values]
        return values
    out = []
    for byte in data:
        lo, hi = byte & 0xF, byte >> 4
        out.append(lo - 16 if lo & 8 else lo)
        out.append(hi - 16 if hi & 8 else hi)
    return out


def pack(fmt: ElementFormat, values: Sequence[int | float]) -> bytes:
    """Inverse of :func:`unpack`; values are encoded with :func:`encode_lane`."""
    if len(values) != fmt.lanes_per_vsr:
        raise ValueError(f"{fmt.tag} register holds {fmt.lanes_per_vsr} lanes, got {len(values)}")
    raw = [encode_lane(fmt, v) for v in values]
    return pack_raw(fmt, raw)


def pack_raw(fmt: ElementFormat, raw: Sequence[int]) -> bytes:
    """Pack raw lane bit patterns (lane 0 first) into 16 bytes."""
    word = 0
    bits = fmt.lane_bits
    for i, r in enumerate(raw):
        word |= r << (i * bits)
    return word.to_bytes(16, "little")


def unpack_raw(fmt: ElementFormat, data: bytes) -> list[int]:
    word = int.from_bytes(data, "little")
    bits = fmt.lane_bits
    mask = (1 << bits) - 1
    return [(word >> (i * bits)) & mask for i in range(fmt.lanes_per_vsr)]
