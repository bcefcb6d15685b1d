import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mma_emu import matio
from mma_emu.cli import main

ROOT = Path(__file__).resolve().parents[1]
TRACES = ROOT / "traces"


def cli(*args, env=None):
    e = dict(os.environ)
    e.pop("MMA_EMU_STRICT", None)
    e.update(env or {})
    return subprocess.run([sys.executable, "-m", "mma_emu", *map(str, args)], capture_output=True, text=True, env=e)


def test_matio_round_trip(tmp_path):
    for m in (np.arange(6, dtype=np.float64).reshape(2, 3), np.ones((3, 1), np.float32), np.eye(2, dtype=np.int32)):
        matio.save(tmp_path / "m.mmat", m)
        back = matio.load(tmp_path / "m.mmat")
        assert back.dtype == m.dtype and np.array_equal(back, m)
    raw = (tmp_path / "m.mmat").read_bytes()
    assert raw[:4] == b"MMAT" and len(raw) == 16 + 4 * 4


def test_matio_json_and_errors(tmp_path):
    (tmp_path / "a.json").write_text("[[1, 2], [3, 4.5]]")
    assert matio.load(tmp_path / "a.json").tolist() == [[1, 2], [3, 4.5]]
    (tmp_path / "bad.json").write_text("[1, 2")
    with pytest.raises(matio.MatrixFormatError):
        matio.load(tmp_path / "bad.json")
    (tmp_path / "short.mmat").write_bytes(b"MMAT" + bytes(12) + b"\x00")
    with pytest.raises(matio.MatrixFormatError):
        matio.load(tmp_path / "short.mmat")


def test_run_outer_product_in_process(capsys):
    assert main(["run", str(TRACES / "outer_product.mma")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pass"] and out["expects"] == 1


def test_dgemm_from_files(tmp_path, capsys):
    rng = np.random.default_rng(1)
    X, Y = rng.standard_normal((8, 5)), rng.standard_normal((8, 5))
    matio.save(tmp_path / "x.mmat", X)
    (tmp_path / "y.json").write_text(json.dumps(Y.tolist()))
    assert main(["dgemm", str(tmp_path / "x.mmat"), str(tmp_path / "y.json"), "--verify",
                 "--emit-trace", str(tmp_path / "k.mma")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verify"]["bit_exact"] and out["stats"]["ger_instructions"] == 40
    assert (tmp_path / "k.mma").read_text().count("xvf64gerpp") == 32


def test_sconv_problem_file(tmp_path, capsys):
    rng = np.random.default_rng(4)
    matio.save(tmp_path / "r.mmat", rng.uniform(-1, 1, (3, 18)).astype(np.float32))
    prob = {"H": rng.uniform(-1, 1, (2, 27)).tolist(), "R": "r.mmat",
            "G": np.ones((3, 18)).tolist(), "B": np.zeros((3, 18)).tolist()}
    (tmp_path / "p.json").write_text(json.dumps(prob))
    assert main(["sconv", str(tmp_path / "p.json"), "--verify"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["k"] == 2 and len(out["c"]) == 2 and out["verify"]["pass"]


def test_usage_and_io_exit_codes(tmp_path):
    assert main(["dgemm", "--random", "0"]) == 2
    assert main(["dgemm"]) == 2
    assert main(["sconv"]) == 2
    assert main(["run", str(tmp_path / "missing.mma")]) == 3
    assert main(["dgemm", str(tmp_path / "nope"), str(tmp_path / "nope")]) == 3
    (tmp_path / "x.json").write_text("[[1, 2]]")
    assert main(["dgemm", str(tmp_path / "x.json"), str(tmp_path / "x.json")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_no_strict_flag_and_env():
    trace = TRACES / "fail_unprimed.mma"
    assert cli("run", trace).returncode == 1
    assert cli("run", trace, "--no-strict").returncode == 0
    assert cli("run", trace, env={"MMA_EMU_STRICT": "0"}).returncode == 0
    assert cli("run", trace, "--strict", env={"MMA_EMU_STRICT": "0"}).returncode == 1


def test_dump_and_text_format(tmp_path):
    r = cli("run", TRACES / "f64_outer.mma", "--dump", "-o", tmp_path / "out.json")
    assert r.returncode == 0 and r.stdout == ""
    out = json.loads((tmp_path / "out.json").read_text())
    assert len(out["final_state"]["vsr"]) == 64 and out["final_state"]["acc"][4]["state"] == "primed"
    r = cli("run", TRACES / "f64_outer.mma", "--format", "text")
    assert "pass: True" in r.stdout and "40.0 80.0" in r.stdout


def test_verify_and_selftest_small():
    r = cli("verify", "--trials", "20", "--workers", "2", "--seed", "3")
    assert r.returncode == 0 and json.loads(r.stdout)["pass"]
    r = cli("selftest", "--scale", "0.002")
    assert r.returncode == 0, r.stderr
