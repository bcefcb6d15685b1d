import random

import pytest

from mma_emu.errors import AccNotPrimed, IllegalSuffix, MaskWidthError, MMAError, OperandError, TraceSyntaxError
from mma_emu.isa import AccumulateMode as M
from mma_emu.isa import GerFamily as G
from mma_emu.isa import GerInstruction, MaskSet
from mma_emu.machine import MachineState
from mma_emu.selfcheck import random_trace
from mma_emu.trace import GerStmt, LoadVsr, lint, parse, render, run


def test_parse_ger():
    prog = parse("xvf32ger acc0, vsr34, vsr35")
    assert prog.statements == [GerStmt(GerInstruction(G.F32GER, M.NONE, 0, 34, 35))]


def test_parse_masked_ger():
    (stmt,) = parse("pmxvf16ger2pp acc1, vsr36, vsr37, x=1010 y=1100 p=10").statements
    assert stmt.instr == GerInstruction(G.F16GER2, M.PP, 1, 36, 37, MaskSet.parse("1010", "1100", "10"))


def test_parse_f64_pair():
    (stmt,) = parse("xvf64gerpp acc1, vsr32:vsr33, vsr36").statements
    assert stmt.instr.x == 32 and stmt.instr.family is G.F64GER


@pytest.mark.parametrize("text, err", [
    ("pmxvi4ger8 acc0, vsr34, vsr35, x=1111 y=1111 p=1111", MaskWidthError),
    ("xvi4ger8np acc0, vsr34, vsr35", IllegalSuffix),
    ("xvf64ger acc0, vsr33:vsr34, vsr36", OperandError),
    ("xvf32ger acc0, vsr34", TraceSyntaxError),
    ("vsr 64 hex = 00000000000000000000000000000000", MMAError),
    ("vsr 3 hex = 00", TraceSyntaxError),
    ("expect acc0 int32_4x4 = [[1,1,1,1],[1,1,1,1],[1,1,1,1],[1,1,1,1]] tol=0.5", TraceSyntaxError),
    ("frobnicate acc0", MMAError),
])
def test_parse_errors(text, err):
    with pytest.raises(err) as info:
        parse("# header\n" + text)
    assert info.value.line == 2


def test_hex_is_address_order():
    (stmt,) = parse("vsr 35 hex = 0000803f000000000000000000000000").statements
    assert stmt.data[:4] == bytes.fromhex("0000803f")


SAMPLE = """\
vsr 34 fp32 = 1, 2, 3, 4
vsr 35 hex = 0000803f000000000000000000000000
xvf32ger acc0, vsr34, vsr35
pmxvi8ger4spp acc1, vsr34, vsr35, x=1010 y=0110 p=1001
xvf64gerpp acc2, vsr32:vsr33, vsr36
pmxvf64ger acc3, vsr32:vsr33, vsr36, x=1111 y=10
xxsetaccz acc4
xxmtacc acc5
xxmfacc acc5
assemble acc6, vsr40, vsr41, vsr42, vsr43
disassemble acc6, vsr40, vsr41, vsr42, vsr43
dump acc0 fp32_4x4
expect acc0 fp32_4x4 = [[1,0,0,0],[2,0,0,0],[3,0,0,0],[4,0,0,0]] tol=0
expect acc1 int32_4x4 = [[1,-2,3,2147483647],[0,0,0,0],[0,0,0,0],[0,0,0,0]] tol=0
"""


def test_render_round_trip():
    prog = parse(SAMPLE)
    again = parse(render(prog))
    assert again == prog
    assert render(again) == render(prog)


def test_render_round_trip_random():
    rnd = random.Random(5)
    for _ in range(500):
        prog = random_trace(rnd)
        assert parse(render(prog)) == prog


def test_lint_conflict():
    diags = lint(parse("xxsetaccz acc0\nvsr 1 hex = " + "00" * 16))
    assert [(d.line, d.code) for d in diags] == [(2, "vsr-conflict")]


def test_lint_never_primed_matches_runtime():
    prog = parse("vsr 34 fp32 = 1, 2, 3, 4\nxvf32gerpp acc0, vsr34, vsr34")
    (d,) = lint(prog)
    assert (d.line, d.code) == (2, "never-primed")
    with pytest.raises(AccNotPrimed) as info:
        run(prog)
    assert info.value.line == 2


def test_lint_clean_program():
    prog = parse("vsr 34 fp32 = 1, 2, 3, 4\nxvf32ger acc0, vsr34, vsr34\nxvf32gerpp acc0, vsr34, vsr34\n"
                 "disassemble acc0, vsr40, vsr41, vsr42, vsr43")
    assert lint(prog) == []


def test_lint_used_after_deprime_and_warning():
    prog = parse("xxsetaccz acc1\nxxmfacc acc1\ndump acc1 int32_4x4")
    codes = [(d.line, d.severity, d.code) for d in lint(prog)]
    assert codes == [(2, "warning", "explicit-move"), (3, "error", "used-after-deprime")]


def test_lint_acc_range():
    (d,) = lint(parse("xxsetaccz acc9"))
    assert d.code == "acc-range"


def test_run_expect_report():
    text = "vsr 34 hex = " + "01" * 16 + "\nxvi8ger4 acc7, vsr34, vsr34\ndump acc7 int32_4x4\n" \
           "expect acc7 int32_4x4 = [[4,4,4,4],[4,4,4,4],[4,4,4,4],[4,4,4,5]] tol=0"
    report = run(parse(text))
    assert report.expects == 1 and not report.passed
    assert report.failures == [{"line": 4, "acc": 7, "element": [3, 3], "got": 4, "want": 5, "tol": 0.0}]
    assert report.dumps[0]["matrix"] == [[4] * 4] * 4


def test_run_example_expect_passes():
    text = "vsr 34 fp32 = 1, 2, 3, 4\nvsr 35 fp32 = 1, 0, 0, 0\nxvf32ger acc0, vsr34, vsr35\n" \
           "expect acc0 fp32_4x4 = [[1,0,0,0],[2,0,0,0],[3,0,0,0],[4,0,0,0]] tol=0"
    report = run(parse(text))
    assert report.passed and report.expects == 1
    assert report.to_dict()["stats"]["flops"] == 32


def test_float_tolerance():
    text = "vsr 34 fp32 = 1, 2, 3, 4\nxvf32ger acc0, vsr34, vsr34\n" \
           "expect acc0 fp32_4x4 = [[1.05,2,3,4],[2,4,6,8],[3,6,9,12],[4,8,12,16]] tol=0.1"
    assert run(parse(text)).passed


def test_load_vsr(tmp_path):
    (tmp_path / "blob.bin").write_bytes(bytes(range(48)))
    prog = parse("vsr 40 load blob.bin offset=16", base_dir=tmp_path)
    assert prog.statements == [LoadVsr(40, "blob.bin", 16)]
    st = MachineState()
    run(prog, st)
    assert st.vsr[40] == bytes(range(16, 32))


def test_non_strict_run_ignores_lifecycle():
    prog = parse("vsr 34 fp32 = 1, 2, 3, 4\nxvf32gerpp acc0, vsr34, vsr34")
    run(prog, MachineState(strict=False))
