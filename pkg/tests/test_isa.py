import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mma_emu import numerics
from mma_emu.errors import (
    AccNotPrimed,
    IllegalSuffix,
    InvalidVsrPair,
    MaskWidthError,
    OperandOverlapsAccumulator,
    UnknownMnemonic,
    VsrLockedError,
)
from mma_emu.isa import AccumulateMode as M
from mma_emu.isa import GerFamily as G
from mma_emu.isa import GerInstruction, MaskSet, decode_mnemonic, execute_ger
from mma_emu.machine import AccLayout, AccState, MachineState
from mma_emu.numerics import INT32_MAX, ElementFormat
from mma_emu.oracles import float_ger_oracle, int_ger_oracle

F = ElementFormat


def _machine(**lanes):
    st = MachineState()
    for reg, (fmt, vals) in lanes.items():
        st.set_lanes(int(reg[1:]), fmt, vals)
    return st


def test_f32_outer_product():
    st = _machine(v34=(F.FP32, [1, 2, 3, 4]), v35=(F.FP32, [1, 0, 0, 0]))
    execute_ger(st, GerInstruction(G.F32GER, M.NONE, 0, 34, 35))
    assert st.view_acc(0, AccLayout.FP32_4X4) == [[1, 0, 0, 0], [2, 0, 0, 0], [3, 0, 0, 0], [4, 0, 0, 0]]


def test_i8ger4_ones():
    st = _machine(v34=(F.INT8, [1] * 16), v35=(F.UINT8, [1] * 16))
    execute_ger(st, GerInstruction(G.I8GER4, M.NONE, 0, 34, 35))
    assert st.view_acc(0, AccLayout.INT32_4X4) == [[4] * 4] * 4


@pytest.mark.parametrize("mode, want", [(M.PP, -131071), (M.SPP, 2147483647)])
def test_i16ger2_wrap_and_saturate(mode, want):
    st = _machine(v34=(F.INT16, [32767] * 8))
    for v in range(40, 44):
        st.set_lanes(v, F.INT32, [INT32_MAX] * 4)
    st.assemble_acc(0, (40, 41, 42, 43))
    execute_ger(st, GerInstruction(G.I16GER2, mode, 0, 34, 34))
    assert st.view_acc(0, AccLayout.INT32_4X4) == [[want] * 4] * 4


def test_f64ger_pair():
    st = _machine(v32=(F.FP64, [1, 2]), v33=(F.FP64, [3, 4]), v36=(F.FP64, [10, 20]))
    execute_ger(st, GerInstruction(G.F64GER, M.NONE, 4, 32, 36))
    assert st.view_acc(4, AccLayout.FP64_4X2) == [[10, 20], [20, 40], [30, 60], [40, 80]]


def test_masked_f32():
    st = _machine(v34=(F.FP32, [1] * 4), v35=(F.FP32, [1] * 4))
    execute_ger(st, GerInstruction(G.F32GER, M.NONE, 0, 34, 35, MaskSet.parse("1100", "0011")))
    assert st.view_acc(0, AccLayout.FP32_4X4) == [[0, 0, 1, 1], [0, 0, 1, 1], [0] * 4, [0] * 4]


@pytest.mark.parametrize("mode, want", [(M.NP, 1.0), (M.PN, -1.0), (M.NN, -3.0), (M.PP, 3.0)])
def test_sign_suffix_examples(mode, want):
    st = _machine(v34=(F.FP32, [1] * 4), v40=(F.FP32, [2] * 4))
    st.assemble_acc(0, (40, 40, 40, 40))
    execute_ger(st, GerInstruction(G.F32GER, mode, 0, 34, 34))
    assert st.view_acc(0, AccLayout.FP32_4X4) == [[want] * 4] * 4


def test_decode_mnemonic():
    op = decode_mnemonic("pmxvf16ger2pp")
    assert (op.family, op.mode, op.prefixed) == (G.F16GER2, M.PP, True)
    assert G.F16GER2.mask_widths == (4, 4, 2)
    assert decode_mnemonic("xvi16ger2s")[:2] == (G.I16GER2, M.S)
    assert decode_mnemonic("xvf64gernp")[:2] == (G.F64GER, M.NP)
    assert G.I4GER8.mask_widths == (4, 4, 8)
    assert G.F64GER.mask_widths == (4, 2, None)


@pytest.mark.parametrize("text", ["xvi4ger8np", "xvf32gerspp", "xvi8ger4s", "xvf16ger2s"])
def test_illegal_suffix(text):
    with pytest.raises(IllegalSuffix):
        decode_mnemonic(text)


@pytest.mark.parametrize("text", ["xvf128ger", "vf32ger", "pmxv", "xxsetaccz"])
def test_unknown_mnemonic(text):
    with pytest.raises(UnknownMnemonic):
        decode_mnemonic(text)


def test_every_mnemonic_round_trips():
    for fam in G:
        for mode in fam.modes:
            for pre in (False, True):
                text = fam.mnemonic(mode, pre)
                assert decode_mnemonic(text) == (fam, mode, pre)


def test_mask_width_checked():
    with pytest.raises(MaskWidthError):
        GerInstruction.from_text("pmxvi4ger8", 0, 34, 35, MaskSet.parse("1111", "1111", "1111"))
    with pytest.raises(MaskWidthError):
        GerInstruction.from_text("pmxvf32ger", 0, 34, 35, MaskSet.parse("1111", "1111", "11"))
    with pytest.raises(MaskWidthError):
        GerInstruction.from_text("xvf32ger", 0, 34, 35, MaskSet.parse("1111", "1111"))


def test_from_ints_msb_is_index_zero():
    m = MaskSet.from_ints(G.F16GER2, 0b1000, 0b0001, 0b10)
    assert m.x == (True, False, False, False) and m.y == (False, False, False, True) and m.p == (True, False)


def test_operand_checks():
    st = MachineState()
    with pytest.raises(InvalidVsrPair):
        execute_ger(st, GerInstruction(G.F64GER, M.NONE, 0, 33, 36))
    with pytest.raises(OperandOverlapsAccumulator):
        execute_ger(st, GerInstruction(G.F32GER, M.NONE, 1, 5, 34))
    with pytest.raises(AccNotPrimed):
        execute_ger(st, GerInstruction(G.F32GER, M.PP, 0, 34, 35))
    st.xxsetaccz(2)
    with pytest.raises(VsrLockedError):
        execute_ger(st, GerInstruction(G.F32GER, M.NONE, 0, 9, 35))


def test_overlap_enforced_without_strict():
    st = MachineState(strict=False)
    with pytest.raises(OperandOverlapsAccumulator):
        execute_ger(st, GerInstruction(G.I8GER4, M.NONE, 0, 2, 34))
    execute_ger(st, GerInstruction(G.I8GER4, M.PP, 0, 34, 35))


def test_counters():
    st = _machine(v34=(F.FP32, [1] * 4))
    execute_ger(st, GerInstruction(G.F32GER, M.NONE, 0, 34, 34))
    execute_ger(st, GerInstruction(G.I4GER8, M.NONE, 1, 34, 34))
    execute_ger(st, GerInstruction(G.BF16GER2, M.NONE, 2, 34, 34, MaskSet.parse("1000", "1111", "11")))
    assert st.stats.flops == 2 * 16 + 2 * 4 * 2
    assert st.stats.int_ops == 16 * 8
    assert st.stats.ger_instructions == 3
    assert st.stats.instructions["pmxvbf16ger2"] == 1


def test_nan_is_canonical():
    st = _machine(v34=(F.FP32, [float("nan"), 1, 1, 1]), v35=(F.FP32, [1] * 4))
    execute_ger(st, GerInstruction(G.F32GER, M.NONE, 0, 34, 35))
    assert struct.unpack("<4I", st.acc[0].rows[0])[0] == numerics.CANONICAL_NAN32


def test_unaffected_accumulating_elements_keep_raw_bits():
    st = MachineState()
    payload = bytes.fromhex("0100807f") * 4  # signalling NaN payloads
    st.write_vsr(40, payload)
    st.assemble_acc(0, (40, 40, 40, 40))
    st.set_lanes(34, F.FP32, [1] * 4)
    execute_ger(st, GerInstruction(G.F32GER, M.PP, 0, 34, 34, MaskSet.parse("0000", "1111")))
    assert st.acc[0].rows == [payload] * 4


def test_f64_fused_single_rounding():
    eps = 2.0**-52
    st = _machine(v32=(F.FP64, [1 + eps, 0]), v33=(F.FP64, [0, 0]), v36=(F.FP64, [1 - eps, 0]),
                  v40=(F.FP64, [1.0, 0]))
    st.assemble_acc(0, (40, 40, 40, 40))
    execute_ger(st, GerInstruction(G.F64GER, M.PN, 0, 32, 36))
    assert st.view_acc(0, AccLayout.FP64_4X2)[0][0] == -(2.0**-104)


# --- property checks against the brute-force oracles -----------------------

raw16 = st.binary(min_size=16, max_size=16)


@settings(max_examples=400, deadline=None)
@given(st.sampled_from([G.I16GER2, G.I8GER4, G.I4GER8]), st.data(), raw16, raw16, st.lists(raw16, min_size=4, max_size=4))
def test_int_matches_oracle(fam, data, x, y, rows):
    mode = data.draw(st.sampled_from(fam.modes))
    st_ = MachineState()
    st_.vsr[34], st_.vsr[35] = x, y
    st_.acc[0].rows = list(rows)
    st_.acc[0].state = AccState.PRIMED
    execute_ger(st_, GerInstruction(fam, mode, 0, 34, 35))
    assert st_.view_acc(0, AccLayout.INT32_4X4) == int_ger_oracle(fam.stem, mode.value, x, y, rows)


@settings(max_examples=400, deadline=None)
@given(st.sampled_from([G.BF16GER2, G.F16GER2, G.F32GER, G.F64GER]), st.data(), raw16, raw16, raw16,
       st.lists(raw16, min_size=4, max_size=4))
def test_float_matches_oracle(fam, data, x, x2, y, rows):
    mode = data.draw(st.sampled_from(fam.modes))
    st_ = MachineState()
    st_.vsr[34], st_.vsr[35], st_.vsr[36] = x, x2, y
    st_.acc[0].rows = list(rows)
    st_.acc[0].state = AccState.PRIMED
    execute_ger(st_, GerInstruction(fam, mode, 0, 34, 36))
    got = [numerics.unpack_raw(fam.layout.fmt, r) for r in st_.acc[0].rows]
    assert got == float_ger_oracle(fam.stem, mode.value, x, y, rows, x2=x2)
