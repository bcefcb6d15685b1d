"""Brute-force reference semantics for single rank-k updates.

These deliberately share no arithmetic with :mod:`mma_emu.isa`: lanes are
decoded with numpy dtypes, integer sums use plain Python ints and float sums
are evaluated exactly with MPFR (gmpy2) before a single IEEE rounding.
"""

from __future__ import annotations

import math

import gmpy2
import numpy as np

_EXACT = gmpy2.context(precision=4096, emax=1 << 20, emin=-(1 << 20))
_IEEE32 = gmpy2.ieee(32)
_IEEE64 = gmpy2.ieee(64)

# family stem -> (rank, X dtype, Y dtype, accumulator element dtype)
FAMILIES = {
    "i16ger2": (2, "<i2", "<i2", "<i4"),
    "i8ger4": (4, "i1", "u1", "<i4"),
    "i4ger8": (8, "int4", "int4", "<i4"),
    "bf16ger2": (2, "bf16", "bf16", "<f4"),
    "f16ger2": (2, "<f2", "<f2", "<f4"),
    "f32ger": (1, "<f4", "<f4", "<f4"),
    "f64ger": (1, "<f8", "<f8", "<f8"),
}

NAN32 = 0x7FC00000
NAN64 = 0x7FF8000000000000


def lanes(dtype: str, data: bytes) -> list:
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if dtype == "int4":
        lo = (buf & 0xF).astype(np.int64)
        hi = (buf >> 4).astype(np.int64)
        nib = np.empty(32, dtype=np.int64)
        nib[0::2], nib[1::2] = lo, hi
        return [int(v) for v in np.where(nib >= 8, nib - 16, nib)]
    if dtype == "bf16":
        wide = np.frombuffer(bytes(data), dtype="<u2").astype("<u4") << 16
        return [float(v) for v in wide.view("<f4")]
    arr = np.frombuffer(bytes(data), dtype=dtype)
    if arr.dtype.kind == "f":
        return [float(v) for v in arr]
    return [int(v) for v in arr]


def _mask(m, width):
    return [True] * width if m is None else list(m)


def int_ger_oracle(stem, suffix, x, y, acc_rows, masks=None):
    """Reference int32 result matrix of one integer rank-k update.

    ``x``/``y`` are 16-byte VSR images, ``acc_rows`` four 16-byte rows,
    ``masks`` an optional ``(xm, ym, pm)`` triple of bool sequences.
    """
    k, xd, yd, _ = FAMILIES[stem]
    X, Y = lanes(xd, x), lanes(yd, y)
    old = [lanes("<i4", r) for r in acc_rows]
    xm, ym, pm = (None, None, None) if masks is None else masks
    xm, ym, pm = _mask(xm, 4), _mask(ym, 4), _mask(pm, k)
    accumulate = suffix in ("pp", "spp")
    saturate = suffix in ("s", "spp")
    out = [[0] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(4):
            enabled = [t for t in range(k) if pm[t]]
            if not (xm[i] and ym[j] and enabled):
                out[i][j] = old[i][j] if accumulate else 0
                continue
            total = sum(X[i * k + t] * Y[j * k + t] for t in enabled)
            if accumulate:
                total += old[i][j]
            if saturate:
                total = max(-(2**31), min(2**31 - 1, total))
            else:
                total = (total + 2**31) % 2**32 - 2**31
            out[i][j] = total
    return out


def _bits32(v) -> int:
    f = float(v)
    if math.isnan(f):
        return NAN32
    return int(np.array([f], dtype="<f4").view("<u4")[0])


def _bits64(v) -> int:
    f = float(v)
    if math.isnan(f):
        return NAN64
    return int(np.array([f], dtype="<f8").view("<u8")[0])


def float_ger_oracle(stem, suffix, x, y, acc_rows, masks=None, x2=None):
    """Reference raw result bits of one floating-point rank-k update.

    For ``f64ger`` pass the second register of the X pair as ``x2``.
    Returns a list of rows of raw lane integers.
    """
    k, xd, yd, ad = FAMILIES[stem]
    if stem == "f64ger":
        X = lanes(xd, x) + lanes(xd, x2)
        Y = lanes(yd, y)
        cols = 2
    else:
        X, Y = lanes(xd, x), lanes(yd, y)
        cols = 4
    old = [lanes(ad, r) for r in acc_rows]
    old_raw = [lanes("<u8" if ad == "<f8" else "<u4", r) for r in acc_rows]
    xm, ym, pm = (None, None, None) if masks is None else masks
    xm, ym, pm = _mask(xm, 4), _mask(ym, cols), _mask(pm, k)
    accumulate = suffix != ""
    neg_prod = suffix in ("np", "nn")
    neg_acc = suffix in ("pn", "nn")
    out = []
    for i in range(4):
        row = []
        for j in range(cols):
            enabled = [t for t in range(k) if pm[t]]
            if not (xm[i] and ym[j] and enabled):
                row.append(old_raw[i][j] if accumulate else 0)
                continue
            a = gmpy2.mpfr(old[i][j])
            if neg_acc:
                a = -a
            if stem == "f64ger":
                xv, yv = gmpy2.mpfr(X[i]), gmpy2.mpfr(Y[j])
                if neg_prod:
                    xv = -xv
                r = _IEEE64.fma(xv, yv, a) if accumulate else _IEEE64.mul(xv, yv)
                row.append(_bits64(r))
                continue
            total = None
            for t in enabled:
                p = _EXACT.mul(gmpy2.mpfr(X[i * k + t]), gmpy2.mpfr(Y[j * k + t]))
                if neg_prod:
                    p = -p
                total = p if total is None else _EXACT.add(total, p)
            if accumulate:
                total = _EXACT.add(total, a)
            row.append(_bits32(_IEEE32.plus(total)))
        out.append(row)
    return out
