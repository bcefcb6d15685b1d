"""Bit-exact functional emulator of the Power ISA 3.1 Matrix-Multiply Assist facility."""

from .errors import MMAError
from .isa import AccumulateMode, GerFamily, GerInstruction, MaskSet, decode_mnemonic, execute_ger
from .kernels import ConvProblem, dgemm_kernel, dgemm_oracle, sconv_kernel
from .machine import AccLayout, AccState, MachineState
from .numerics import ElementFormat
from .trace import TraceProgram, lint, parse, render, run

__version__ = "0.1.0"

__all__ = [
    "AccLayout", "AccState", "AccumulateMode", "ConvProblem", "ElementFormat", "GerFamily",
    "GerInstruction", "MMAError", "MachineState", "MaskSet", "TraceProgram", "decode_mnemonic",
    "dgemm_kernel", "dgemm_oracle", "execute_ger", "lint", "parse", "render", "run", "sconv_kernel",
]
