"""``mma-emu``: run traces, lint them, run the micro-kernels and the oracle checks.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage error,
3 I/O error.  JSON output is deterministic for a given command line.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import matio, selfcheck
from .errors import EmptyMultiply, MMAError, ShapeError
from .kernels import ConvProblem, conv_oracle_gemm, dgemm_kernel, dgemm_oracle, sconv_kernel
from .machine import MachineState, strict_default
from .trace import lint, parse, render, run

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _matrix_text(m) -> list[str]:
    cells = [[repr(v) if isinstance(v, float) else str(v) for v in row] for row in m]
    width = max((len(c) for row in cells for c in row), default=1)
    return ["  " + " ".join(c.rjust(width) for c in row) for row in cells]


def _text(obj, indent: str = "") -> list[str]:
    lines = []
    for key, val in obj.items():
        if isinstance(val, dict):
            lines.append(f"{indent}{key}:")
            lines += _text(val, indent + "  ")
        elif isinstance(val, list) and val and isinstance(val[0], list) and not isinstance(val[0][0], (dict, list)):
            lines.append(f"{indent}{key}:")
            lines += [indent + row for row in _matrix_text(val)]
        elif isinstance(val, list) and val and isinstance(val[0], dict):
            lines.append(f"{indent}{key}:")
            for item in val:
                sub = _text(item, indent + "    ")
                if sub:
                    sub[0] = indent + "  - " + sub[0][len(indent) + 4:]
                lines += sub
        else:
            lines.append(f"{indent}{key}: {val}")
    return lines


def _emit(args, obj) -> None:
    obj = _jsonable(obj)
    if args.format == "json":
        out = json.dumps(obj, indent=2) + "\n"
    else:
        out = "\n".join(_text(obj)) + "\n"
    if args.output:
        Path(args.output).write_text(out)
    else:
        sys.stdout.write(out)


def _strict(args) -> bool:
    return strict_default() if args.strict is None else args.strict


# --------------------------------------------------------------------------
# subcommands


def _read_trace(path: str):
    return parse(Path(path).read_text(), base_dir=Path(path).resolve().parent)


def cmd_run(args) -> int:
    try:
        program = _read_trace(args.trace)
    except MMAError as e:
        _emit(args, {"pass": False, "error": {"type": type(e).__name__, "line": e.line, "message": str(e)}})
        return EXIT_FAIL
    for d in lint(program):
        print(d, file=sys.stderr)
    state = MachineState(strict=_strict(args))
    try:
        report = run(program, state)
    except MMAError as e:
        out = {"pass": False, "error": {"type": type(e).__name__, "line": e.line, "message": str(e)},
               "stats": state.stats.to_dict()}
        if args.dump:
            out["final_state"] = state.to_dict()
        _emit(args, out)
        return EXIT_FAIL
    _emit(args, report.to_dict(final_state=args.dump))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_lint(args) -> int:
    try:
        program = _read_trace(args.trace)
    except MMAError as e:
        _emit(args, {"diagnostics": [{"line": e.line, "severity": "error", "code": "syntax", "message": str(e)}]})
        return EXIT_FAIL
    diags = lint(program)
    _emit(args, {"diagnostics": [d.to_dict() for d in diags]})
    return EXIT_FAIL if any(d.severity == "error" for d in diags) else EXIT_OK


def _kernel_output(args, kind, result, kr, extra) -> dict:
    out = {"kernel": kind, **extra, "c": result, "stats": kr.stats.to_dict()}
    if args.dump:
        out["final_state"] = kr.state.to_dict()
    if args.emit_trace:
        Path(args.emit_trace).write_text(render(kr.program))
    return out


def cmd_dgemm(args) -> int:
    if args.random is not None:
        if args.x or args.y:
            raise UsageError("give either X and Y files or --random N, not both")
        if args.random < 1:
            raise UsageError("--random N needs N >= 1")
        X, Y = selfcheck.random_dgemm_inputs(np.random.default_rng(args.seed), args.random)
        extra = {"n": args.random, "seed": args.seed}
    else:
        if not (args.x and args.y):
            raise UsageError("dgemm needs X and Y matrix files or --random N")
        X, Y = matio.load(args.x, np.float64), matio.load(args.y, np.float64)
        extra = {"n": int(X.shape[1]) if X.ndim == 2 else None}
    kr = dgemm_kernel(X, Y, strict=_strict(args))
    out = _kernel_output(args, "dgemm", kr.result, kr, extra)
    code = EXIT_OK
    if args.verify:
        want = dgemm_oracle(X, Y)
        same = bool(np.array_equal(kr.result.view(np.uint64), want.view(np.uint64)))
        out["verify"] = {"oracle": "fma-chain", "bit_exact": same, "pass": same}
        code = EXIT_OK if same else EXIT_FAIL
    _emit(args, out)
    return code


def _load_problem(path: str) -> ConvProblem:
    path = Path(path)
    doc = json.loads(path.read_text())
    if not isinstance(doc, dict):
        raise UsageError("sconv problem file must be a JSON object")

    def matrix(key):
        if key not in doc:
            raise UsageError(f"sconv problem is missing {key!r}")
        v = doc[key]
        if isinstance(v, str):
            p = Path(v)
            return matio.load(p if p.is_absolute() else path.parent / p, np.float32)
        return np.asarray(v, dtype=np.float32)

    return ConvProblem(matrix("H"), matrix("R"), matrix("G"), matrix("B"),
                       i=int(doc.get("i", 0)), n=doc.get("n"))


def cmd_sconv(args) -> int:
    if args.random:
        if args.problem:
            raise UsageError("give either a problem file or --random, not both")
        p = ConvProblem.random(np.random.default_rng(args.seed))
        extra = {"seed": args.seed}
    elif args.problem:
        p = _load_problem(args.problem)
        extra = {}
    else:
        raise UsageError("sconv needs a problem file or --random")
    extra["k"] = int(p.H.shape[0])
    kr = sconv_kernel(p, strict=_strict(args))
    out = _kernel_output(args, "sconv", kr.result[: p.H.shape[0]], kr, extra)
    code = EXIT_OK
    if args.verify:
        same = bool(np.array_equal(kr.result.view(np.uint32), conv_oracle_gemm(p).view(np.uint32)))
        rel = selfcheck.sconv_componentwise_error(p, kr.result)
        ok = same and rel <= selfcheck.SCONV_REL_TOL
        out["verify"] = {"gemm_oracle_bit_exact": same, "naive_max_rel_error": rel,
                         "tolerance": selfcheck.SCONV_REL_TOL, "pass": ok}
        code = EXIT_OK if ok else EXIT_FAIL
    _emit(args, out)
    return code


def _verify_shard(job):
    kind, stem, trials, seed = job
    from .isa import GerFamily

    fam = next(f for f in GerFamily if f.stem == stem)
    fn = {"int": selfcheck.check_integer_random, "float": selfcheck.check_float_random,
          "mask": selfcheck.check_mask_laws, "sign": selfcheck.check_sign_algebra}[kind]
    return fn(fam, trials, seed).to_dict()


def cmd_verify(args) -> int:
    if args.trials < 1 or args.workers < 1:
        raise UsageError("--trials and --workers must be positive")
    jobs = [("int", f.stem, args.trials, args.seed) for f in selfcheck.INT_FAMILIES]
    jobs += [("float", f.stem, args.trials, args.seed) for f in selfcheck.FLOAT_FAMILIES]
    jobs += [("mask", f.stem, args.trials, args.seed) for f in selfcheck.INT_FAMILIES + selfcheck.FLOAT_FAMILIES]
    jobs += [("sign", f.stem, args.trials, args.seed) for f in selfcheck.FLOAT_FAMILIES]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_verify_shard, jobs))
    else:
        results = [_verify_shard(j) for j in jobs]
    ok = all(r["pass"] for r in results)
    _emit(args, {"pass": ok, "seed": args.seed, "checks": results})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_selftest(args) -> int:
    if not 0 < args.scale <= 1:
        raise UsageError("--scale must be in (0, 1]")
    results = selfcheck.run_all(scale=args.scale, seed=args.seed)
    for r in results:
        print(r.line(), file=sys.stderr)
    ok = all(r.passed for r in results)
    _emit(args, {"pass": ok, "seed": args.seed, "scale": args.scale, "checks": [r.to_dict() for r in results]})
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_mutually_exclusive_group()
    g.add_argument("--strict", dest="strict", action="store_true", default=None,
                   help="enforce the accumulator lifecycle (default unless MMA_EMU_STRICT=0)")
    g.add_argument("--no-strict", dest="strict", action="store_false")
    common.add_argument("--format", choices=("json", "text"), default="json")
    common.add_argument("-o", "--output", help="write the report here instead of stdout")
    common.add_argument("--dump", action="store_true", help="include the final machine state")

    parser = argparse.ArgumentParser(
        prog="mma-emu", description="Emulate MMA traces and micro-kernels bit-exactly and check them against oracles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="execute a trace and check its expect statements")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("lint", parents=[common], help="static lifecycle check of a trace")
    p.add_argument("trace")
    p.set_defaults(fn=cmd_lint)

    p = sub.add_parser("dgemm", parents=[common], help="8xN by 8xN fp64 kernel, C = X Y^T")
    p.add_argument("x", nargs="?", help="8xN matrix file (MMAT or JSON)")
    p.add_argument("y", nargs="?", help="8xN matrix file (MMAT or JSON)")
    p.add_argument("--random", type=int, metavar="N", help="use seeded random 8xN inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true", help="compare with the FMA-chain oracle")
    p.add_argument("--emit-trace", metavar="PATH", help="write the generated trace program")
    p.set_defaults(fn=cmd_dgemm)

    p = sub.add_parser("sconv", parents=[common], help="3-channel 3x3 convolution kernel")
    p.add_argument("problem", nargs="?", help="JSON problem file with H, R, G, B (and optional i, n)")
    p.add_argument("--random", action="store_true", help="use a seeded random 8-kernel problem")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true", help="compare with the GEMM and naive oracles")
    p.add_argument("--emit-trace", metavar="PATH", help="write the generated trace program")
    p.set_defaults(fn=cmd_sconv)

    p = sub.add_parser("verify", parents=[common], help="randomized oracle equivalence for every instruction family")
    p.add_argument("--trials", type=int, default=1000, help="trials per family and check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("selftest", parents=[common], help="all invariant checks at reduced trial counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.01, help="fraction of the full acceptance counts")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ShapeError, EmptyMultiply) as e:
        print(f"mma-emu {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, matio.MatrixFormatError, json.JSONDecodeError, UnicodeDecodeError) as e:
        print(f"mma-emu {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except MMAError as e:
        print(f"mma-emu {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
