"""Rank-k update instructions (``xv*ger*`` and their ``pm`` prefixed forms).

Input matrices are read row-major from a VSR: element ``(i, t)`` of a 4 x k
operand sits in lane ``i*k + t``.  Accumulator element ``(i, j)`` lives in
lane ``j`` of row ``i``.

Masks are written as fixed-width bit strings; the first written bit enables
row/column/product 0.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass
from typing import NamedTuple

from . import numerics
from .errors import (
    IllegalSuffix,
    InvalidVsrPair,
    MaskWidthError,
    OperandOverlapsAccumulator,
    UnknownMnemonic,
)
from .machine import AccLayout, AccState, MachineState, acc_group
from .numerics import ElementFormat as EF


class AccumulateMode(enum.Enum):
    NONE = ""
    PP = "pp"
    NP = "np"
    PN = "pn"
    NN = "nn"
    S = "s"
    SPP = "spp"

    @property
    def accumulates(self) -> bool:
        return self not in (AccumulateMode.NONE, AccumulateMode.S)

    @property
    def saturating(self) -> bool:
        return self in (AccumulateMode.S, AccumulateMode.SPP)

    @property
    def product_sign(self) -> float:
        return -1.0 if self in (AccumulateMode.NP, AccumulateMode.NN) else 1.0

    @property
    def acc_sign(self) -> float:
        return -1.0 if self in (AccumulateMode.PN, AccumulateMode.NN) else 1.0


_M = AccumulateMode
_FLOAT_MODES = (_M.NONE, _M.PP, _M.NP, _M.PN, _M.NN)


class GerFamily(enum.Enum):
    # name in mnemonic, rank, X format, Y format, accumulator layout, legal modes, Y rows
    I16GER2 = ("i16ger2", 2, EF.INT16, EF.INT16, AccLayout.INT32_4X4, (_M.NONE, _M.S, _M.PP, _M.SPP), 4)
    I8GER4 = ("i8ger4", 4, EF.INT8, EF.UINT8, AccLayout.INT32_4X4, (_M.NONE, _M.PP, _M.SPP), 4)
    I4GER8 = ("i4ger8", 8, EF.INT4, EF.INT4, AccLayout.INT32_4X4, (_M.NONE, _M.PP), 4)
    BF16GER2 = ("bf16ger2", 2, EF.BF16, EF.BF16, AccLayout.FP32_4X4, _FLOAT_MODES, 4)
    F16GER2 = ("f16ger2", 2, EF.FP16, EF.FP16, AccLayout.FP32_4X4, _FLOAT_MODES, 4)
    F32GER = ("f32ger", 1, EF.FP32, EF.FP32, AccLayout.FP32_4X4, _FLOAT_MODES, 4)
    F64GER = ("f64ger", 1, EF.FP64, EF.FP64, AccLayout.FP64_4X2, _FLOAT_MODES, 2)

    def __init__(self, stem, rank, x_fmt, y_fmt, layout, modes, y_rows):
        self.stem = stem
        self.rank = rank
        self.x_fmt = x_fmt
        self.y_fmt = y_fmt
        self.layout = layout
        self.modes = modes
        self.y_rows = y_rows

    @property
    def is_float(self) -> bool:
        return self.layout is not AccLayout.INT32_4X4

    @property
    def mask_widths(self) -> tuple[int, int, int | None]:
        """Widths of the x, y and product masks of the prefixed form."""
        return 4, self.y_rows, (self.rank if self.rank > 1 else None)

    def mnemonic(self, mode: AccumulateMode, prefixed: bool = False) -> str:
        return ("pm" if prefixed else "") + "xv" + self.stem + mode.value


@dataclass(frozen=True)
class MaskSet:
    x: tuple[bool, ...]
    y: tuple[bool, ...]
    p: tuple[bool, ...] | None = None

    @classmethod
    def parse(cls, x: str, y: str, p: str | None = None) -> "MaskSet":
        def bits(s):
            if s is None:
                return None
            if not s or set(s) - {"0", "1"}:
                raise MaskWidthError(f"mask {s!r} is not a binary string")
            return tuple(c == "1" for c in s)

        return cls(bits(x), bits(y), bits(p))

    @classmethod
    def from_ints(cls, family: GerFamily, x: int, y: int, p: int | None = None) -> "MaskSet":
        """Numeric immediates as in the built-ins; the most significant bit is index 0."""
        wx, wy, wp = family.mask_widths

        def bits(value, width):
            if value >> width:
                raise MaskWidthError(f"mask value {value} does not fit in {width} bits")
            return tuple(bool(value >> (width - 1 - i) & 1) for i in range(width))

        return cls(bits(x, wx), bits(y, wy), None if wp is None else bits(p or 0, wp))

    @classmethod
    def all_ones(cls, family: GerFamily) -> "MaskSet":
        wx, wy, wp = family.mask_widths
        return cls((True,) * wx, (True,) * wy, None if wp is None else (True,) * wp)

    def check(self, family: GerFamily) -> None:
        wx, wy, wp = family.mask_widths
        got = (len(self.x), len(self.y), None if self.p is None else len(self.p))
        if got != (wx, wy, wp):
            want = f"x={wx} y={wy}" + (f" p={wp}" if wp else "")
            have = f"x={got[0]} y={got[1]}" + (f" p={got[2]}" if got[2] is not None else "")
            raise MaskWidthError(f"pmxv{family.stem} masks need widths {want}, got {have}")

    def render(self) -> str:
        s = f"x={_bits(self.x)} y={_bits(self.y)}"
        return s + (f" p={_bits(self.p)}" if self.p is not None else "")


def _bits(t: tuple[bool, ...]) -> str:
    return "".join("1" if b else "0" for b in t)


class Opcode(NamedTuple):
    family: GerFamily
    mode: AccumulateMode
    prefixed: bool


_MNEMONIC = re.compile(r"^(pm)?xv(i16ger2|i8ger4|i4ger8|bf16ger2|f16ger2|f32ger|f64ger)([a-z]*)$")
_BY_STEM = {f.stem: f for f in GerFamily}


def decode_mnemonic(text: str) -> Opcode:
    m = _MNEMONIC.match(text.strip().lower())
    if not m:
        raise UnknownMnemonic(f"unknown mnemonic {text!r}")
    family = _BY_STEM[m.group(2)]
    try:
        mode = AccumulateMode(m.group(3))
    except ValueError:
        raise IllegalSuffix(f"{text!r}: unknown suffix {m.group(3)!r}") from None
    if mode not in family.modes:
        raise IllegalSuffix(f"{text!r}: suffix {mode.value!r} is not defined for xv{family.stem}")
    return Opcode(family, mode, bool(m.group(1)))


@dataclass(frozen=True)
class GerInstruction:
    family: GerFamily
    mode: AccumulateMode
    acc: int
    x: int  # first register of the even/odd pair for F64GER
    y: int
    masks: MaskSet | None = None

    @property
    def prefixed(self) -> bool:
        return self.masks is not None

    @property
    def mnemonic(self) -> str:
        return self.family.mnemonic(self.mode, self.prefixed)

    @property
    def x_regs(self) -> tuple[int, ...]:
        return (self.x, self.x + 1) if self.family is GerFamily.F64GER else (self.x,)

    @classmethod
    def from_text(cls, mnemonic: str, acc: int, x: int, y: int, masks: MaskSet | None = None) -> "GerInstruction":
        op = decode_mnemonic(mnemonic)
        if op.prefixed and masks is None:
            raise MaskWidthError(f"{mnemonic} requires x/y/p masks")
        if not op.prefixed and masks is not None:
            raise MaskWidthError(f"{mnemonic} is not a prefixed form and takes no masks")
        if masks is not None:
            masks.check(op.family)
        return cls(op.family, op.mode, acc, x, y, masks)


def check_operands(state: MachineState, instr: GerInstruction) -> None:
    """Form and lifecycle checks, in the order the emulator applies them."""
    fam = instr.family
    state.check_acc(instr.acc)
    if fam is GerFamily.F64GER and (instr.x % 2 or instr.x + 1 >= 64 or instr.x < 0):
        raise InvalidVsrPair(f"xvf64ger X operand must be an even:odd VSR pair, got vsr{instr.x}")
    group = acc_group(instr.acc)
    for v in (*instr.x_regs, instr.y):
        state.check_vsr(v)
        if v in group:
            raise OperandOverlapsAccumulator(f"vsr{v} overlaps target acc{instr.acc}")
    for v in (*instr.x_regs, instr.y):
        state.read_vsr(v)
    if instr.mode.accumulates:
        state.require_primed(instr.acc, f"{instr.mnemonic} accumulating into")


_I32ROW = struct.Struct("<4i")


def execute_ger(state: MachineState, instr: GerInstruction) -> None:
    check_operands(state, instr)
    fam = instr.family
    k = fam.rank
    if fam is GerFamily.F64GER:
        xs = numerics.unpack(EF.FP64, state.vsr[instr.x]) + numerics.unpack(EF.FP64, state.vsr[instr.x + 1])
        ys = numerics.unpack(EF.FP64, state.vsr[instr.y])
    else:
        xs = numerics.unpack(fam.x_fmt, state.vsr[instr.x])
        ys = numerics.unpack(fam.y_fmt, state.vsr[instr.y])
    X = [xs[i * k:(i + 1) * k] for i in range(4)]
    Y = [ys[j * k:(j + 1) * k] for j in range(fam.y_rows)]

    masks = instr.masks
    if masks is None:
        xm, ym, pm = (True,) * 4, (True,) * fam.y_rows, (True,) * k
    else:
        xm, ym, pm = masks.x, masks.y, masks.p or (True,)
    live = [t for t in range(k) if pm[t]]

    a = state.acc[instr.acc]
    mode = instr.mode
    if fam.is_float:
        rows, madds = _float_update(fam, mode, X, Y, xm, ym, live, a.rows)
        state.stats.flops += 2 * madds
    else:
        rows, madds = _int_update(mode, X, Y, xm, ym, live, a.rows)
        state.stats.int_ops += madds
    a.rows = rows
    a.state = AccState.PRIMED
    state.stats.instructions[instr.mnemonic] += 1


def _int_update(mode, X, Y, xm, ym, live, old_rows):
    finalize = numerics.saturate_to_int32 if mode.saturating else numerics.wrap_to_int32
    acc = mode.accumulates
    madds = 0
    rows = []
    for i in range(4):
        old = _I32ROW.unpack(old_rows[i]) if acc else (0, 0, 0, 0)
        out = []
        Xi = X[i]
        for j in range(4):
            if not (xm[i] and ym[j] and live):
                out.append(old[j])
                continue
            Yj = Y[j]
            s = 0
            for t in live:
                s += Xi[t] * Yj[t]
            madds += len(live)
            out.append(finalize(s + old[j]))
        rows.append(_I32ROW.pack(*out))
    return rows, madds


def _float_update(fam, mode, X, Y, xm, ym, live, old_rows):
    layout = fam.layout
    fmt = layout.fmt
    cols = layout.cols
    acc = mode.accumulates
    sp, sa = mode.product_sign, mode.acc_sign
    wide = fam is GerFamily.F64GER
    madds = 0
    rows = []
    for i in range(4):
        if acc:
            old = numerics.unpack(fmt, old_rows[i])
            old_raw = numerics.unpack_raw(fmt, old_rows[i])
        raw = []
        Xi = X[i]
        for j in range(cols):
            if not (xm[i] and ym[j] and live):
                raw.append(old_raw[j] if acc else 0)
                continue
            madds += len(live)
            Yj = Y[j]
            if wide:
                # rank 1: one product, fused with the accumulator
                x, y = Xi[0], Yj[0]
                r = numerics.fused_multiply_add_fp64(sp * x, y, sa * old[j]) if acc else x * y
                raw.append(numerics.fp64_bits(r))
                continue
            terms = [sp * (Xi[t] * Yj[t]) for t in live]
            if acc:
                terms.append(sa * old[j])
            raw.append(numerics.fp32_bits(numerics.sum_round_fp32(terms)))
        rows.append(numerics.pack_raw(fmt, raw))
    return rows, madds
