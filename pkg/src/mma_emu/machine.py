"""Architectural state: 64 VSRs, 8 accumulators and their priming lifecycle.

Accumulator ``i`` overlaps ``VSR[4i .. 4i+3]``.  While it is primed those
four VSRs belong to the accumulator; in strict mode touching them raises
:class:`~mma_emu.errors.VsrLockedError`.  ``VSR[32:63]`` never conflict with
any accumulator.
"""

from __future__ import annotations

import enum
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from . import numerics
from .errors import AccAlreadyPrimed, AccIndexError, AccNotPrimed, VsrIndexError, VsrLockedError
from .numerics import ElementFormat

NUM_VSRS = 64
NUM_ACCS = 8
ZERO_ROW = bytes(16)


class AccState(enum.Enum):
    UNPRIMED = "unprimed"
    PRIMED = "primed"
    DEPRIMED = "deprimed"


class AccLayout(enum.Enum):
    FP64_4X2 = ("fp64_4x2", ElementFormat.FP64)
    FP32_4X4 = ("fp32_4x4", ElementFormat.FP32)
    INT32_4X4 = ("int32_4x4", ElementFormat.INT32)

    def __init__(self, tag: str, fmt: ElementFormat):
        self.tag = tag
        self.fmt = fmt
        self.cols = fmt.lanes_per_vsr

    @classmethod
    def from_tag(cls, tag: str) -> "AccLayout":
        for layout in cls:
            if layout.tag == tag:
                return layout
        raise KeyError(tag)


def acc_group(acc: int) -> range:
    """The four VSRs associated with accumulator ``acc``."""
    return range(4 * acc, 4 * acc + 4)


@dataclass
class Accumulator:
    index: int
    rows: list[bytes] = field(default_factory=lambda: [ZERO_ROW] * 4)
    state: AccState = AccState.UNPRIMED

    @property
    def primed(self) -> bool:
        return self.state is AccState.PRIMED


@dataclass
class StatCounters:
    instructions: Counter = field(default_factory=Counter)
    flops: int = 0
    int_ops: int = 0

    @property
    def ger_instructions(self) -> int:
        return sum(n for name, n in self.instructions.items() if "ger" in name)

    def to_dict(self) -> dict:
        return {
            "instructions": dict(sorted(self.instructions.items())),
            "ger_instructions": self.ger_instructions,
            "flops": self.flops,
            "int_ops": self.int_ops,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StatCounters":
        return cls(Counter(d.get("instructions", {})), d.get("flops", 0), d.get("int_ops", 0))


def strict_default() -> bool:
    return os.environ.get("MMA_EMU_STRICT", "1").strip() not in ("0", "false", "no", "off")


class MachineState:
    def __init__(self, strict: bool | None = None):
        self.strict = strict_default() if strict is None else strict
        self.vsr: list[bytes] = [ZERO_ROW] * NUM_VSRS
        self.acc = [Accumulator(i) for i in range(NUM_ACCS)]
        self.stats = StatCounters()

    # ---- register access -------------------------------------------------

    def check_acc(self, i: int) -> Accumulator:
        if not 0 <= i < NUM_ACCS:
            raise AccIndexError(f"acc{i} does not exist (only acc0..acc{NUM_ACCS - 1})")
        return self.acc[i]

    @staticmethod
    def check_vsr(v: int) -> None:
        if not 0 <= v < NUM_VSRS:
            raise VsrIndexError(f"vsr{v} does not exist")

    def locked(self, v: int) -> bool:
        return self.strict and v < 32 and self.acc[v >> 2].state is AccState.PRIMED

    def _check_unlocked(self, v: int, what: str) -> None:
        self.check_vsr(v)
        if self.locked(v):
            raise VsrLockedError(f"{what} vsr{v} while acc{v >> 2} is primed")

    def read_vsr(self, v: int) -> bytes:
        self._check_unlocked(v, "read of")
        return self.vsr[v]

    def write_vsr(self, v: int, data: bytes) -> None:
        if len(data) != 16:
            raise ValueError("a VSR holds exactly 16 bytes")
        self._check_unlocked(v, "write to")
        self.vsr[v] = bytes(data)

    def set_lanes(self, v: int, fmt: ElementFormat, values: Sequence) -> None:
        self.write_vsr(v, numerics.pack(fmt, values))

    def get_lanes(self, v: int, fmt: ElementFormat) -> list:
        return numerics.unpack(fmt, self.read_vsr(v))

    def require_primed(self, i: int, what: str) -> Accumulator:
        a = self.check_acc(i)
        if self.strict and not a.primed:
            detail = "was never primed" if a.state is AccState.UNPRIMED else "was deprimed"
            raise AccNotPrimed(f"{what} acc{i}, which {detail}")
        return a

    def _count(self, name: str) -> None:
        self.stats.instructions[name] += 1

    # ---- accumulator moves -----------------------------------------------

    def xxsetaccz(self, i: int) -> None:
        a = self.check_acc(i)
        a.rows = [ZERO_ROW] * 4
        a.state = AccState.PRIMED
        self._count("xxsetaccz")

    def xxmtacc(self, i: int) -> None:
        a = self.check_acc(i)
        if self.strict and a.primed:
            raise AccAlreadyPrimed(f"xxmtacc into acc{i}, which is already primed")
        a.rows = [self.vsr[v] for v in acc_group(i)]
        a.state = AccState.PRIMED
        self._count("xxmtacc")

    def xxmfacc(self, i: int) -> None:
        a = self.require_primed(i, "xxmfacc from")
        for r, v in enumerate(acc_group(i)):
            self.vsr[v] = a.rows[r]
        a.state = AccState.DEPRIMED
        self._count("xxmfacc")

    def assemble_acc(self, i: int, sources: Sequence[int]) -> None:
        """Gather four arbitrary VSRs into accumulator ``i`` and prime it."""
        if len(sources) != 4:
            raise ValueError("assemble_acc takes exactly four source VSRs")
        a = self.check_acc(i)
        rows = [self.read_vsr(v) for v in sources]
        a.rows = rows
        a.state = AccState.PRIMED
        self._count("assemble_acc")

    def disassemble_acc(self, i: int, dests: Sequence[int]) -> None:
        """Scatter accumulator ``i`` into four VSRs and deprime it.

        Destinations may include the accumulator's own group: depriming
        releases it before the writes happen.
        """
        if len(dests) != 4:
            raise ValueError("disassemble_acc takes exactly four destination VSRs")
        a = self.require_primed(i, "disassemble of")
        for v in dests:
            self.check_vsr(v)
            if self.locked(v) and v >> 2 != i:
                raise VsrLockedError(f"write to vsr{v} while acc{v >> 2} is primed")
        a.state = AccState.DEPRIMED
        for r, v in enumerate(dests):
            self.vsr[v] = a.rows[r]
        self._count("disassemble_acc")

    def view_acc(self, i: int, layout: AccLayout) -> list[list]:
        """Accumulator contents as a matrix; does not change the lifecycle."""
        a = self.require_primed(i, "read of")
        return [numerics.unpack(layout.fmt, row) for row in a.rows]

    # ---- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "strict": self.strict,
            "vsr": [v.hex() for v in self.vsr],
            "acc": [{"rows": [r.hex() for r in a.rows], "state": a.state.value} for a in self.acc],
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MachineState":
        st = cls(strict=d.get("strict", True))
        st.vsr = [bytes.fromhex(h) for h in d["vsr"]]
        for a, src in zip(st.acc, d["acc"]):
            a.rows = [bytes.fromhex(h) for h in src["rows"]]
            a.state = AccState(src["state"])
        st.stats = StatCounters.from_dict(d.get("stats", {}))
        return st

    def copy(self) -> "MachineState":
        return MachineState.from_dict(self.to_dict())
