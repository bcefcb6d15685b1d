"""Line-oriented kernel trace format.

One statement per line, ``#`` starts a comment::

    vsr 34 fp32 = 1, 2, 3, 4              # lanes, lane 0 first
    vsr 35 hex = 0000803f000000000000000000000000
    vsr 36 load input.bin offset=16        # 16 bytes from a file
    xvf32ger acc0, vsr34, vsr35
    xvf64gerpp acc1, vsr32:vsr33, vsr36    # X is an even:odd pair
    pmxvf16ger2pp acc1, vsr36, vsr37, x=1010 y=1100 p=10
    xxsetaccz acc2
    xxmtacc acc2
    xxmfacc acc2
    assemble acc3, vsr40, vsr41, vsr42, vsr43
    disassemble acc3, vsr40, vsr41, vsr42, vsr43
    dump acc0 fp32_4x4
    expect acc0 fp32_4x4 = [[1,0,0,0],[2,0,0,0],[3,0,0,0],[4,0,0,0]] tol=0

Hex literals list the register's bytes in address order (lane 0 first,
little-endian lanes).  Masks are fixed-width binary strings whose first
digit enables row/column/product 0.  Programs are straight-line.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from . import numerics
from .errors import (
    MMAError,
    MaskWidthError,
    OperandError,
    TraceSyntaxError,
    UnknownMnemonic,
)
from .isa import GerFamily, GerInstruction, MaskSet, decode_mnemonic, execute_ger
from .machine import NUM_ACCS, AccLayout, MachineState, acc_group
from .numerics import ElementFormat

MOVE_OPS = ("xxsetaccz", "xxmtacc", "xxmfacc", "assemble", "disassemble")


@dataclass(frozen=True)
class SetVsr:
    index: int
    fmt: str  # element format tag, or "hex"
    data: bytes

    def render(self) -> str:
        if self.fmt == "hex":
            return f"vsr {self.index} hex = {self.data.hex()}"
        fmt = ElementFormat.from_tag(self.fmt)
        vals = numerics.unpack(fmt, self.data)
        return f"vsr {self.index} {self.fmt} = " + ", ".join(_num(v) for v in vals)


@dataclass(frozen=True)
class LoadVsr:
    index: int
    path: str
    offset: int = 0

    def render(self) -> str:
        return f"vsr {self.index} load {self.path} offset={self.offset}"


@dataclass(frozen=True)
class GerStmt:
    instr: GerInstruction

    def render(self) -> str:
        ins = self.instr
        if ins.family is GerFamily.F64GER:
            x = f"vsr{ins.x}:vsr{ins.x + 1}"
        else:
            x = f"vsr{ins.x}"
        text = f"{ins.mnemonic} acc{ins.acc}, {x}, vsr{ins.y}"
        if ins.masks is not None:
            text += ", " + ins.masks.render()
        return text


@dataclass(frozen=True)
class MoveStmt:
    op: str
    acc: int
    vsrs: tuple[int, ...] = ()

    def render(self) -> str:
        return ", ".join([f"{self.op} acc{self.acc}", *(f"vsr{v}" for v in self.vsrs)])


@dataclass(frozen=True)
class DumpAcc:
    acc: int
    layout: AccLayout

    def render(self) -> str:
        return f"dump acc{self.acc} {self.layout.tag}"


@dataclass(frozen=True, eq=False)
class ExpectAcc:
    acc: int
    layout: AccLayout
    matrix: tuple[tuple, ...]
    tol: float = 0.0

    def render(self) -> str:
        rows = ",".join("[" + ",".join(_num(v) for v in row) + "]" for row in self.matrix)
        return f"expect acc{self.acc} {self.layout.tag} = [{rows}] tol={_num(self.tol)}"

    def __eq__(self, other):
        if not isinstance(other, ExpectAcc):
            return NotImplemented
        return self.render() == other.render()

    def __hash__(self):
        return hash(self.render())


Statement = Union[SetVsr, LoadVsr, GerStmt, MoveStmt, DumpAcc, ExpectAcc]


@dataclass
class TraceProgram:
    statements: list = field(default_factory=list)
    lines: list[int] = field(default_factory=list)
    base_dir: Path | None = None

    def __eq__(self, other):
        if not isinstance(other, TraceProgram):
            return NotImplemented
        return self.statements == other.statements

    def append(self, stmt, line: int | None = None) -> None:
        self.statements.append(stmt)
        self.lines.append(line if line is not None else len(self.statements))

    def render(self) -> str:
        return "".join(s.render() + "\n" for s in self.statements)


def _num(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if v.is_integer() and abs(v) < 2**53 and not (v == 0 and math.copysign(1, v) < 0):
            return str(int(v))
        return repr(v)
    return str(v)


# --------------------------------------------------------------------------
# parsing

_VSR = re.compile(r"^vsr(\d+)$")
_ACC = re.compile(r"^acc(\d+)$")
_SET = re.compile(r"^vsr\s*(\d+)\s+(\w+)\s*=\s*(.*)$")
_LOAD = re.compile(r"^vsr\s*(\d+)\s+load\s+(\S+)(?:\s+offset=(\d+))?$")
_EXPECT = re.compile(r"^expect\s+(acc\d+)\s+(\w+)\s*=\s*(\[.*\])\s*(?:tol=(\S+))?$")
_DUMP = re.compile(r"^dump\s+(acc\d+)\s+(\w+)$")


def _vsr(tok: str, line: int) -> int:
    m = _VSR.match(tok.strip())
    if not m:
        raise OperandError(f"expected a VSR operand like vsr34, got {tok.strip()!r}").at_line(line)
    v = int(m.group(1))
    if v >= 64:
        raise OperandError(f"vsr{v} does not exist (vsr0..vsr63)").at_line(line)
    return v


def _acc(tok: str, line: int) -> int:
    m = _ACC.match(tok.strip())
    if not m:
        raise OperandError(f"expected an accumulator operand like acc0, got {tok.strip()!r}").at_line(line)
    return int(m.group(1))


def _layout(tok: str, line: int) -> AccLayout:
    try:
        return AccLayout.from_tag(tok)
    except KeyError:
        tags = ", ".join(lay.tag for lay in AccLayout)
        raise TraceSyntaxError(f"unknown layout {tok!r} (one of {tags})").at_line(line) from None


def _float_token(tok: str) -> float:
    t = tok.strip().lower()
    if t in ("nan", "+nan", "-nan"):
        return math.nan
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(t)


def _parse_set(m: re.Match, line: int) -> SetVsr:
    index = int(m.group(1))
    if index >= 64:
        raise OperandError(f"vsr{index} does not exist (vsr0..vsr63)").at_line(line)
    tag, body = m.group(2), m.group(3).strip()
    if tag == "hex":
        h = body.replace(" ", "").replace("_", "")
        if len(h) != 32 or re.search(r"[^0-9a-fA-F]", h):
            raise TraceSyntaxError("hex literal must be exactly 32 hex digits").at_line(line)
        return SetVsr(index, "hex", bytes.fromhex(h))
    try:
        fmt = ElementFormat.from_tag(tag)
    except KeyError:
        raise TraceSyntaxError(f"unknown element format {tag!r}").at_line(line) from None
    toks = [t for t in body.split(",")]
    if len(toks) != fmt.lanes_per_vsr:
        raise TraceSyntaxError(f"{tag} needs {fmt.lanes_per_vsr} lane values, got {len(toks)}").at_line(line)
    try:
        vals = [_float_token(t) if fmt.is_float else int(t.strip(), 0) for t in toks]
        data = numerics.pack(fmt, vals)
    except ValueError as e:
        raise TraceSyntaxError(f"bad lane value: {e}").at_line(line) from None
    return SetVsr(index, tag, data)


def _parse_matrix(text: str, layout: AccLayout, line: int) -> tuple[tuple, ...]:
    norm = re.sub(r"(?<![A-Za-z])-?inf(inity)?\b", lambda m: "-Infinity" if m.group(0).startswith("-") else "Infinity", text)
    norm = re.sub(r"\bnan\b", "NaN", norm)
    try:
        rows = json.loads(norm)
    except json.JSONDecodeError as e:
        raise TraceSyntaxError(f"bad matrix literal: {e}").at_line(line) from None
    if not (isinstance(rows, list) and len(rows) == 4 and all(isinstance(r, list) and len(r) == layout.cols for r in rows)):
        raise TraceSyntaxError(f"{layout.tag} expects a 4x{layout.cols} matrix").at_line(line)
    if layout is AccLayout.INT32_4X4:
        if not all(isinstance(v, int) for r in rows for v in r):
            raise TraceSyntaxError("int32 expectations must be integers").at_line(line)
        return tuple(tuple(r) for r in rows)
    return tuple(tuple(float(v) for v in r) for r in rows)


def _parse_ger(mnemonic: str, rest: str, line: int) -> GerStmt:
    try:
        op = decode_mnemonic(mnemonic)
    except UnknownMnemonic as e:
        raise e.at_line(line)
    parts = [p.strip() for p in rest.split(",")]
    if len(parts) < 3:
        raise TraceSyntaxError(f"{mnemonic} needs acc, X and Y operands").at_line(line)
    acc = _acc(parts[0], line)
    xtok = parts[1]
    if op.family is GerFamily.F64GER:
        if ":" not in xtok:
            raise OperandError("xvf64ger X operand must be written as an even:odd pair, e.g. vsr32:vsr33").at_line(line)
        a, b = (_vsr(t, line) for t in xtok.split(":", 1))
        if a % 2 or b != a + 1:
            raise OperandError(f"vsr{a}:vsr{b} is not an adjacent even:odd pair").at_line(line)
        x = a
    else:
        if ":" in xtok:
            raise OperandError(f"only xvf64ger takes a register pair, got {xtok!r}").at_line(line)
        x = _vsr(xtok, line)
    y = _vsr(parts[2], line)
    masks = None
    if len(parts) > 3:
        fields = {}
        for tok in ",".join(parts[3:]).replace(",", " ").split():
            key, _, val = tok.partition("=")
            if key not in ("x", "y", "p") or not val or key in fields:
                raise TraceSyntaxError(f"bad mask field {tok!r}").at_line(line)
            fields[key] = val
        if "x" not in fields or "y" not in fields:
            raise MaskWidthError("prefixed forms need both x= and y= masks").at_line(line)
        wp = op.family.mask_widths[2]
        if wp is None and "p" in fields:
            raise MaskWidthError(f"xv{op.family.stem} is rank 1 and takes no p mask").at_line(line)
        if wp is not None and "p" not in fields:
            raise MaskWidthError(f"pmxv{op.family.stem} needs a {wp}-bit p mask").at_line(line)
        try:
            masks = MaskSet.parse(fields["x"], fields["y"], fields.get("p"))
        except MaskWidthError as e:
            raise e.at_line(line)
    try:
        instr = GerInstruction.from_text(mnemonic, acc, x, y, masks)
    except MMAError as e:
        raise e.at_line(line)
    return GerStmt(instr)


def parse(text: str, base_dir: Path | str | None = None) -> TraceProgram:
    prog = TraceProgram(base_dir=Path(base_dir) if base_dir is not None else None)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        prog.append(_parse_line(s, lineno), lineno)
    return prog


def _parse_line(s: str, line: int) -> Statement:
    head = s.split(None, 1)[0]
    rest = s[len(head):].strip()
    if head.startswith("vsr"):
        m = _LOAD.match(s)
        if m:
            index = int(m.group(1))
            if index >= 64:
                raise OperandError(f"vsr{index} does not exist (vsr0..vsr63)").at_line(line)
            return LoadVsr(index, m.group(2), int(m.group(3) or 0))
        m = _SET.match(s)
        if m:
            return _parse_set(m, line)
        raise TraceSyntaxError(f"cannot parse VSR assignment {s!r}").at_line(line)
    if head == "dump":
        m = _DUMP.match(s)
        if not m:
            raise TraceSyntaxError("usage: dump acc<j> <layout>").at_line(line)
        return DumpAcc(_acc(m.group(1), line), _layout(m.group(2), line))
    if head == "expect":
        m = _EXPECT.match(s)
        if not m:
            raise TraceSyntaxError("usage: expect acc<j> <layout> = [[...]] tol=<real>").at_line(line)
        layout = _layout(m.group(2), line)
        tol = float(m.group(4)) if m.group(4) else 0.0
        if layout is AccLayout.INT32_4X4 and tol != 0:
            raise TraceSyntaxError("integer expectations must use tol=0").at_line(line)
        if not tol >= 0:
            raise TraceSyntaxError("tolerance must be non-negative").at_line(line)
        return ExpectAcc(_acc(m.group(1), line), layout, _parse_matrix(m.group(3), layout, line), tol)
    if head in MOVE_OPS:
        parts = [p for p in (t.strip() for t in rest.split(",")) if p]
        if not parts:
            raise TraceSyntaxError(f"{head} needs an accumulator operand").at_line(line)
        acc = _acc(parts[0], line)
        vsrs = tuple(_vsr(p, line) for p in parts[1:])
        want = 4 if head in ("assemble", "disassemble") else 0
        if len(vsrs) != want:
            raise TraceSyntaxError(f"{head} takes {want} VSR operands, got {len(vsrs)}").at_line(line)
        return MoveStmt(head, acc, vsrs)
    if "ger" in head:
        return _parse_ger(head, rest, line)
    raise UnknownMnemonic(f"unknown mnemonic {head!r}").at_line(line)


def render(program: TraceProgram) -> str:
    return program.render()


# --------------------------------------------------------------------------
# lint


@dataclass(frozen=True)
class Diagnostic:
    line: int
    severity: str  # "error" (strict mode will reject) or "warning"
    code: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.severity}: [{self.code}] {self.message}"

    def to_dict(self) -> dict:
        return {"line": self.line, "severity": self.severity, "code": self.code, "message": self.message}


def lint(program: TraceProgram) -> list[Diagnostic]:
    """Static check of the priming and register-association rules.

    Error diagnostics predict exactly the strict-mode runtime errors of a
    straight-line program; the first one names the line where execution
    would abort.  Warnings flag style issues only.
    """
    UNPRIMED, PRIMED, DEPRIMED = "unprimed", "primed", "deprimed"
    states = [UNPRIMED] * NUM_ACCS
    out: list[Diagnostic] = []

    for stmt, line in zip(program.statements, program.lines):
        errs: list[tuple[str, str]] = []

        def acc_ok(i):
            if not 0 <= i < NUM_ACCS:
                errs.append(("acc-range", f"acc{i} exceeds the {NUM_ACCS} architected accumulators"))
                return False
            return True

        def locked(v):
            return v < 32 and states[v >> 2] == PRIMED

        def touch(v, what, owner=None):
            if locked(v) and (v >> 2) != owner:
                errs.append(("vsr-conflict", f"{what} vsr{v} while acc{v >> 2} is primed"))

        def need_primed(i, what):
            if states[i] != PRIMED:
                if states[i] == UNPRIMED:
                    errs.append(("never-primed", f"{what} acc{i}, which was never primed"))
                else:
                    errs.append(("used-after-deprime", f"{what} acc{i} after it was deprimed"))

        if isinstance(stmt, (SetVsr, LoadVsr)):
            touch(stmt.index, "write to")
        elif isinstance(stmt, GerStmt):
            ins = stmt.instr
            if acc_ok(ins.acc):
                ops = (*ins.x_regs, ins.y)
                overlap = [v for v in ops if v in acc_group(ins.acc)]
                if overlap:
                    errs.append(("operand-overlap", f"vsr{overlap[0]} overlaps target acc{ins.acc}"))
                else:
                    for v in ops:
                        touch(v, "read of")
                    if not errs and ins.mode.accumulates:
                        need_primed(ins.acc, f"{ins.mnemonic} accumulating into")
                states[ins.acc] = PRIMED
        elif isinstance(stmt, MoveStmt):
            i = stmt.acc
            if acc_ok(i):
                if stmt.op == "xxsetaccz":
                    states[i] = PRIMED
                elif stmt.op == "xxmtacc":
                    if states[i] == PRIMED:
                        errs.append(("already-primed", f"xxmtacc into acc{i}, which is already primed"))
                    states[i] = PRIMED
                elif stmt.op == "xxmfacc":
                    need_primed(i, "xxmfacc from")
                    states[i] = DEPRIMED
                elif stmt.op == "assemble":
                    for v in stmt.vsrs:
                        touch(v, "read of")
                    states[i] = PRIMED
                else:
                    need_primed(i, "disassemble of")
                    if not errs:
                        for v in stmt.vsrs:
                            touch(v, "write to", owner=i)
                    states[i] = DEPRIMED
                if stmt.op in ("xxmtacc", "xxmfacc"):
                    out.append(Diagnostic(line, "warning", "explicit-move",
                                          f"prefer assemble/disassemble over explicit {stmt.op}"))
        elif isinstance(stmt, (DumpAcc, ExpectAcc)):
            if acc_ok(stmt.acc):
                need_primed(stmt.acc, "read of")

        for code, msg in errs[:1]:
            out.append(Diagnostic(line, "error", code, msg))
    return out


# --------------------------------------------------------------------------
# execution


@dataclass
class RunReport:
    failures: list[dict] = field(default_factory=list)
    dumps: list[dict] = field(default_factory=list)
    expects: int = 0
    state: MachineState | None = None

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self, final_state: bool = False) -> dict:
        d = {
            "pass": self.passed,
            "expects": self.expects,
            "failures": self.failures,
            "dumps": self.dumps,
            "stats": self.state.stats.to_dict() if self.state else {},
        }
        if final_state and self.state is not None:
            d["final_state"] = self.state.to_dict()
        return d


def _close(got, want, tol) -> bool:
    if isinstance(got, float) or isinstance(want, float):
        g, w = float(got), float(want)
        if math.isnan(g) or math.isnan(w):
            return math.isnan(g) and math.isnan(w)
        if math.isinf(g) or math.isinf(w):
            return g == w
        return abs(g - w) <= tol
    return got == want


def execute(stmt: Statement, state: MachineState, base_dir: Path | None = None, report: RunReport | None = None,
            line: int | None = None) -> None:
    """Apply one statement to ``state``."""
    if isinstance(stmt, GerStmt):
        execute_ger(state, stmt.instr)
    elif isinstance(stmt, SetVsr):
        state.write_vsr(stmt.index, stmt.data)
    elif isinstance(stmt, MoveStmt):
        if stmt.op == "xxsetaccz":
            state.xxsetaccz(stmt.acc)
        elif stmt.op == "xxmtacc":
            state.xxmtacc(stmt.acc)
        elif stmt.op == "xxmfacc":
            state.xxmfacc(stmt.acc)
        elif stmt.op == "assemble":
            state.assemble_acc(stmt.acc, stmt.vsrs)
        else:
            state.disassemble_acc(stmt.acc, stmt.vsrs)
    elif isinstance(stmt, LoadVsr):
        path = Path(stmt.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        with open(path, "rb") as f:
            f.seek(stmt.offset)
            data = f.read(16)
        if len(data) != 16:
            raise OSError(f"{path}: fewer than 16 bytes at offset {stmt.offset}")
        state.write_vsr(stmt.index, data)
    elif isinstance(stmt, DumpAcc):
        m = state.view_acc(stmt.acc, stmt.layout)
        if report is not None:
            report.dumps.append({"line": line, "acc": stmt.acc, "layout": stmt.layout.tag, "matrix": m})
    elif isinstance(stmt, ExpectAcc):
        m = state.view_acc(stmt.acc, stmt.layout)
        if report is not None:
            report.expects += 1
            for i, (grow, wrow) in enumerate(zip(m, stmt.matrix)):
                for j, (g, w) in enumerate(zip(grow, wrow)):
                    if not _close(g, w, stmt.tol):
                        report.failures.append({"line": line, "acc": stmt.acc, "element": [i, j],
                                                "got": g, "want": w, "tol": stmt.tol})
    else:
        raise TypeError(f"not a trace statement: {stmt!r}")


def run(program: TraceProgram, state: MachineState | None = None) -> RunReport:
    """Execute ``program`` in order.

    The first emulator error aborts the run; it propagates with ``line`` set
    to the offending source line.
    """
    state = state if state is not None else MachineState()
    report = RunReport(state=state)
    for stmt, line in zip(program.statements, program.lines):
        try:
            execute(stmt, state, program.base_dir, report, line)
        except MMAError as e:
            raise e.at_line(line)
    return report


__all__ = [
    "Diagnostic", "DumpAcc", "ExpectAcc", "GerStmt", "LoadVsr", "MoveStmt", "RunReport",
    "SetVsr", "Statement", "TraceProgram", "execute", "lint", "parse", "render", "run",
]
