"""DGEMM 8xNx8 and 3-channel 3x3 SCONV 8x27x16 micro-kernels, with reference oracles.

Both kernels use all eight accumulators as one virtual tile.  Block
``(r, c)`` of the tile is accumulator ``4*r + c``; for DGEMM it covers rows
``4r..4r+3`` and columns ``2c..2c+1`` of the 8x8 result, for SCONV rows
``4r..4r+3`` and columns ``4c..4c+3`` of the 8x16 result.

The kernels are expressed as straight-line trace programs (inputs are
written into VSR32..VSR63 only) and executed on a private
:class:`~mma_emu.machine.MachineState`.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2
import numpy as np

from . import numerics
from .errors import EmptyMultiply, MMAError, ShapeError
from .isa import AccumulateMode, GerFamily, GerInstruction
from .machine import MachineState
from .numerics import ElementFormat
from .trace import GerStmt, MoveStmt, SetVsr, TraceProgram, execute

_F64 = ElementFormat.FP64
_F32 = ElementFormat.FP32

# DGEMM register plan
_DG_X = (32, 34)  # even:odd pairs holding X[0:4, t] and X[4:8, t]
_DG_Y = (36, 37, 38, 39)  # Y[2c:2c+2, t]
# SCONV register plan
_SC_X = (32, 33)  # H column rows 0..3 and 4..7
_SC_Y = (34, 35, 36, 37)  # 16 pixels of the shifted row
_OUT = 32  # accumulator b is disassembled into VSR[32+4b .. 32+4b+3]


@dataclass
class KernelRun:
    result: np.ndarray
    state: MachineState
    program: TraceProgram

    @property
    def stats(self):
        return self.state.stats


def _ger(mode: AccumulateMode, family: GerFamily, acc: int, x: int, y: int) -> GerStmt:
    return GerStmt(GerInstruction(family, mode, acc, x, y))


def _disassemble_all(prog: TraceProgram) -> None:
    for b in range(8):
        prog.append(MoveStmt("disassemble", b, tuple(range(_OUT + 4 * b, _OUT + 4 * b + 4))))


def _run(prog: TraceProgram, strict: bool) -> MachineState:
    state = MachineState(strict=strict)
    for stmt, line in zip(prog.statements, prog.lines):
        try:
            execute(stmt, state, line=line)
        except MMAError as e:
            raise e.at_line(line)
    return state


# --------------------------------------------------------------------------
# DGEMM


def _check_dgemm(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != 8 or Y.shape[0] != 8 or X.shape[1] != Y.shape[1]:
        raise ShapeError(f"dgemm expects two 8xN matrices, got {X.shape} and {Y.shape}")
    if X.shape[1] == 0:
        raise EmptyMultiply("dgemm with N = 0 has nothing to multiply")
    return X, Y


def dgemm_program(X, Y) -> TraceProgram:
    X, Y = _check_dgemm(X, Y)
    prog = TraceProgram()
    for t in range(X.shape[1]):
        col_x, col_y = X[:, t].tolist(), Y[:, t].tolist()
        for r, v in enumerate(_DG_X):
            prog.append(SetVsr(v, "fp64", numerics.pack(_F64, col_x[4 * r:4 * r + 2])))
            prog.append(SetVsr(v + 1, "fp64", numerics.pack(_F64, col_x[4 * r + 2:4 * r + 4])))
        for c, v in enumerate(_DG_Y):
            prog.append(SetVsr(v, "fp64", numerics.pack(_F64, col_y[2 * c:2 * c + 2])))
        mode = AccumulateMode.NONE if t == 0 else AccumulateMode.PP
        for r in range(2):
            for c in range(4):
                prog.append(_ger(mode, GerFamily.F64GER, 4 * r + c, _DG_X[r], _DG_Y[c]))
    _disassemble_all(prog)
    return prog


def dgemm_kernel(X, Y, *, strict: bool = True) -> KernelRun:
    """``X @ Y.T`` for two 8xN fp64 matrices via 8 accumulators.

    Issues 8 ``xvf64ger`` for the first column and 8 ``xvf64gerpp`` for
    each remaining one.  Raises :class:`EmptyMultiply` when N is 0.
    """
    prog = dgemm_program(X, Y)
    state = _run(prog, strict)
    C = np.empty((8, 8), dtype=np.float64)
    for b in range(8):
        r, c = divmod(b, 4)
        for rr in range(4):
            C[4 * r + rr, 2 * c:2 * c + 2] = numerics.unpack(_F64, state.vsr[_OUT + 4 * b + rr])
    return KernelRun(C, state, prog)


def dgemm_oracle(X, Y) -> np.ndarray:
    """Triple loop with one fused multiply-add per step, same t order as the kernel."""
    X, Y = _check_dgemm(X, Y)
    ctx = gmpy2.ieee(64)
    mx = [[gmpy2.mpfr(float(v)) for v in row] for row in X]
    my = [[gmpy2.mpfr(float(v)) for v in row] for row in Y]
    C = np.empty((8, 8), dtype=np.float64)
    n = X.shape[1]
    for i in range(8):
        for j in range(8):
            acc = ctx.mul(mx[i][0], my[j][0])
            for t in range(1, n):
                acc = ctx.fma(mx[i][t], my[j][t], acc)
            C[i, j] = float(acc)
    return C


# --------------------------------------------------------------------------
# SCONV


@dataclass
class ConvProblem:
    H: np.ndarray  # k x 27 kernels, k <= 8; tap (c, u, v) at column 9c + 3u + v
    R: np.ndarray
    G: np.ndarray
    B: np.ndarray
    i: int = 0  # first input row
    n: int | None = None  # row length used; defaults to the channel width

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float32)
        self.R, self.G, self.B = (np.asarray(a, dtype=np.float32) for a in (self.R, self.G, self.B))
        if self.n is None:
            self.n = self.R.shape[1] if self.R.ndim == 2 else 0
        self.validate()

    @property
    def channels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.R, self.G, self.B

    def validate(self) -> None:
        H = self.H
        if H.ndim != 2 or H.shape[1] != 27 or not 1 <= H.shape[0] <= 8:
            raise ShapeError(f"H must be k x 27 with 1 <= k <= 8, got {H.shape}")
        if self.n < 18:
            raise ShapeError(f"rows must hold at least 18 pixels (16 outputs + 2), got n={self.n}")
        if self.i < 0:
            raise ShapeError("starting row must be non-negative")
        for name, ch in zip("RGB", self.channels):
            if ch.ndim != 2 or ch.shape[0] < self.i + 3 or ch.shape[1] < self.n:
                raise ShapeError(f"channel {name} must have >= {self.i + 3} rows and >= {self.n} columns, got {ch.shape}")

    def padded_kernels(self) -> np.ndarray:
        Hbar = np.zeros((8, 27), dtype=np.float32)
        Hbar[: self.H.shape[0]] = self.H
        return Hbar

    @classmethod
    def random(cls, rng: np.random.Generator, k: int = 8, n: int = 18, rows: int = 3, i: int = 0) -> "ConvProblem":
        def u(*shape):
            return rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)

        return cls(u(k, 27), u(rows, n), u(rows, n), u(rows, n), i=i, n=n)


def _taps():
    """(channel, u, v) in kernel issue order: channel-major, then rows, then displacement."""
    for c in range(3):
        for u in range(3):
            for v in range(3):
                yield c, u, v


def build_abar(A, i: int, n: int) -> np.ndarray:
    """The 9 x (n-2) matrix whose row ``3u+v`` is row ``i+u`` of ``A`` shifted left by ``v``."""
    A = np.asarray(A)
    if A.ndim != 2 or n < 3 or i < 0 or A.shape[0] < i + 3 or A.shape[1] < n:
        raise ShapeError(f"need rows {i}..{i + 2} and {n} >= 3 columns, got shape {A.shape}")
    out = np.empty((9, n - 2), dtype=A.dtype)
    for u in range(3):
        for v in range(3):
            out[3 * u + v] = A[i + u, v:v + n - 2]
    return out


def sconv_program(p: ConvProblem) -> TraceProgram:
    Hbar = p.padded_kernels()
    prog = TraceProgram()
    for step, (c, u, v) in enumerate(_taps()):
        col = Hbar[:, 9 * c + 3 * u + v].tolist()
        for r, reg in enumerate(_SC_X):
            prog.append(SetVsr(reg, "fp32", numerics.pack(_F32, col[4 * r:4 * r + 4])))
        row = p.channels[c][p.i + u, v:v + 16].tolist()
        for q, reg in enumerate(_SC_Y):
            prog.append(SetVsr(reg, "fp32", numerics.pack(_F32, row[4 * q:4 * q + 4])))
        mode = AccumulateMode.NONE if step == 0 else AccumulateMode.PP
        for r in range(2):
            for q in range(4):
                prog.append(_ger(mode, GerFamily.F32GER, 4 * r + q, _SC_X[r], _SC_Y[q]))
    _disassemble_all(prog)
    return prog


def sconv_kernel(p: ConvProblem, *, strict: bool = True) -> KernelRun:
    """8 x 16 block of output rows for up to 8 kernels over three channels.

    27 rank-1 updates, each one ``xvf32ger``/``xvf32gerpp`` per accumulator,
    with one fp32 rounding per update.  Rows beyond ``k`` are zero.
    """
    p.validate()
    prog = sconv_program(p)
    state = _run(prog, strict)
    C = np.empty((8, 16), dtype=np.float32)
    for b in range(8):
        r, q = divmod(b, 4)
        for rr in range(4):
            C[4 * r + rr, 4 * q:4 * q + 4] = numerics.unpack(_F32, state.vsr[_OUT + 4 * b + rr])
    return KernelRun(C, state, prog)


def conv_oracle_gemm(p: ConvProblem) -> np.ndarray:
    """Hbar (8x27) times the stacked Abar (27 x (n-2)), first 16 columns.

    Terms are folded in the kernel's issue order with a single fp32 rounding
    per term (MPFR in IEEE single context).
    """
    p.validate()
    Hbar = p.padded_kernels()
    Abar = np.vstack([build_abar(ch, p.i, p.n) for ch in p.channels])[:, :16]
    ctx = gmpy2.ieee(32)
    C = np.empty((8, 16), dtype=np.float32)
    for f in range(8):
        h = [gmpy2.mpfr(float(v)) for v in Hbar[f]]
        for j in range(16):
            acc = None
            for row in range(27):
                a = gmpy2.mpfr(float(Abar[row, j]))
                acc = ctx.mul(h[row], a) if acc is None else ctx.fma(h[row], a, acc)
            C[f, j] = float(acc)
    return C


def conv_naive(p: ConvProblem) -> np.ndarray:
    """Direct double-precision 3x3 convolution (no padding, unit stride)."""
    p.validate()
    Hbar = p.padded_kernels().astype(np.float64)
    C = np.zeros((8, 16), dtype=np.float64)
    for c, ch in enumerate(p.channels):
        ch = ch.astype(np.float64)
        for u in range(3):
            for v in range(3):
                C += np.outer(Hbar[:, 9 * c + 3 * u + v], ch[p.i + u, v:v + 16])
    return C


def conv_abs(p: ConvProblem) -> np.ndarray:
    """The same convolution over absolute values; scales the rounding error bound."""
    q = ConvProblem(np.abs(p.H), *(np.abs(ch) for ch in p.channels), i=p.i, n=p.n)
    return conv_naive(q)
