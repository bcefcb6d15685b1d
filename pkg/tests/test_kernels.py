import numpy as np
import pytest

from mma_emu.errors import EmptyMultiply, ShapeError
from mma_emu.kernels import (
    ConvProblem,
    build_abar,
    conv_naive,
    conv_oracle_gemm,
    dgemm_kernel,
    dgemm_oracle,
    sconv_kernel,
)
from mma_emu.machine import AccState
from mma_emu.selfcheck import random_dgemm_inputs, sconv_componentwise_error
from mma_emu.trace import lint, parse, render, run


def _bits64(a):
    return np.asarray(a, dtype=np.float64).view(np.uint64)


@pytest.mark.parametrize("n", [1, 2, 3, 17])
def test_dgemm_bit_exact(n):
    X, Y = random_dgemm_inputs(np.random.default_rng(n), n)
    kr = dgemm_kernel(X, Y)
    assert np.array_equal(_bits64(kr.result), _bits64(dgemm_oracle(X, Y)))
    assert kr.stats.ger_instructions == 8 * n
    assert kr.stats.flops == 128 * n
    assert all(a.state is AccState.DEPRIMED for a in kr.state.acc)


def test_dgemm_small_integers_exact():
    rng = np.random.default_rng(0)
    X = rng.integers(-9, 10, (8, 5)).astype(float)
    Y = rng.integers(-9, 10, (8, 5)).astype(float)
    assert np.array_equal(dgemm_kernel(X, Y).result, X @ Y.T)


def test_dgemm_program_is_clean_and_replays():
    X, Y = random_dgemm_inputs(np.random.default_rng(3), 4)
    kr = dgemm_kernel(X, Y)
    assert lint(kr.program) == []
    report = run(parse(render(kr.program)))
    assert report.state.vsr == kr.state.vsr


def test_dgemm_shape_errors():
    with pytest.raises(EmptyMultiply):
        dgemm_kernel(np.zeros((8, 0)), np.zeros((8, 0)))
    with pytest.raises(ShapeError):
        dgemm_kernel(np.zeros((7, 3)), np.zeros((8, 3)))
    with pytest.raises(ShapeError):
        dgemm_kernel(np.zeros((8, 3)), np.zeros((8, 4)))


def test_sconv_ones_give_27():
    p = ConvProblem(np.ones((8, 27)), *(np.ones((3, 18)) for _ in range(3)))
    kr = sconv_kernel(p)
    assert np.all(kr.result == 27.0)
    assert kr.stats.ger_instructions == 216
    assert lint(kr.program) == []


@pytest.mark.parametrize("seed", range(5))
def test_sconv_matches_oracles(seed):
    p = ConvProblem.random(np.random.default_rng(seed), k=5, n=20, rows=4, i=1)
    kr = sconv_kernel(p)
    assert np.array_equal(kr.result.view(np.uint32), conv_oracle_gemm(p).view(np.uint32))
    assert sconv_componentwise_error(p, kr.result) <= 1e-5
    assert not kr.result[5:].any()


def test_sconv_identity_kernel():
    p = ConvProblem.random(np.random.default_rng(9), k=1, n=18, rows=3)
    p.H[:] = 0
    p.H[0, 9 + 4] = 1  # centre tap of the green channel
    kr = sconv_kernel(p)
    assert np.array_equal(kr.result[0], p.G[1, 1:17])


def test_build_abar():
    A = np.arange(30, dtype=np.float32).reshape(3, 10)
    ab = build_abar(A, 0, 10)
    assert ab.shape == (9, 8)
    assert np.array_equal(ab[3 * 1 + 2], A[1, 2:10])


def test_naive_matches_float64_reference():
    p = ConvProblem.random(np.random.default_rng(2), k=3, n=18)
    ref = np.zeros((8, 16))
    for f in range(3):
        for x in range(16):
            ref[f, x] = sum(float(p.H[f, 9 * c + 3 * u + v]) * float(ch[u, x + v])
                            for c, ch in enumerate(p.channels) for u in range(3) for v in range(3))
    assert np.allclose(conv_naive(p), ref, rtol=0, atol=1e-12)


def test_conv_problem_validation():
    with pytest.raises(ShapeError):
        ConvProblem(np.zeros((9, 27)), *(np.zeros((3, 18)) for _ in range(3)))
    with pytest.raises(ShapeError):
        ConvProblem(np.zeros((1, 27)), *(np.zeros((3, 17)) for _ in range(3)))
    with pytest.raises(ShapeError):
        ConvProblem(np.zeros((1, 27)), *(np.zeros((2, 18)) for _ in range(3)))
