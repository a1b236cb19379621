import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from trajsens import _fallback, kernels

requires_compiled = pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")


def random_blocks(rng, T, n, m):
    A = rng.normal(size=(T, n, n)) + 5 * np.eye(n)
    Ainv = np.linalg.inv(A)
    B = rng.normal(size=(T, n, n))
    C = rng.normal(size=(T, n, n))
    D = rng.normal(size=(T, n, m))
    return Ainv, B, C, D


@requires_compiled
@pytest.mark.parametrize("T,n,m", [(1, 1, 1), (2, 3, 1), (9, 2, 3), (17, 4, 2)])
def test_compiled_matches_fallback(T, n, m):
    from trajsens import _kernels

    rng = np.random.default_rng(T * 100 + n * 10 + m)
    Ainv, B, C, D = random_blocks(rng, T, n, m)
    S_py = np.zeros((T * (T + 1) // 2, n, m))
    S_cy = np.zeros_like(S_py)
    _fallback.forward_substitution(Ainv, B, C, D, S_py, 0, T)
    _kernels.forward_substitution(Ainv, B, C, D, S_cy, 0, T)
    np.testing.assert_allclose(S_cy, S_py, rtol=1e-12, atol=1e-14)

    rhs = rng.normal(size=(T, n))
    np.testing.assert_allclose(_kernels.backward_substitution(Ainv, B, C, rhs),
                               _fallback.backward_substitution(Ainv, B, C, rhs), rtol=1e-12, atol=1e-14)

    W = rng.normal(size=(T, 3 * n + m, 3 * n + m))
    W = W + W.transpose(0, 2, 1)
    np.testing.assert_allclose(_kernels.tensor_contraction(S_py, W, n, m),
                               _fallback.tensor_contraction(S_py, W, n, m), rtol=1e-11, atol=1e-12)
    np.testing.assert_array_equal(_kernels.unpack(S_py, T, n, m), _fallback.unpack(S_py, T, n, m))


def test_forward_substitution_solves_block_system():
    """Packed forward substitution against a dense solve of the banded system."""
    rng = np.random.default_rng(0)
    T, n, m = 8, 2, 3
    Ainv, B, C, D = random_blocks(rng, T, n, m)
    Gx = np.zeros((n * T, n * T))
    Gu = np.zeros((n * T, m * T))
    for i in range(T):
        Gx[i * n:(i + 1) * n, i * n:(i + 1) * n] = np.linalg.inv(Ainv[i])
        if i >= 1:
            Gx[i * n:(i + 1) * n, (i - 1) * n:i * n] = B[i]
        if i >= 2:
            Gx[i * n:(i + 1) * n, (i - 2) * n:(i - 1) * n] = C[i]
        Gu[i * n:(i + 1) * n, i * m:(i + 1) * m] = D[i]
    for impl in [kernels.get_backend("python")] + ([kernels.get_backend("cython")] if kernels.compiled_available() else []):
        S = np.zeros((T * (T + 1) // 2, n, m))
        impl.forward_substitution(Ainv, B, C, D, S, 0, T)
        np.testing.assert_allclose(impl.unpack(S, T, n, m), -np.linalg.solve(Gx, Gu), atol=1e-10)
        rhs = rng.normal(size=(T, n))
        lam = impl.backward_substitution(Ainv, B, C, rhs)
        np.testing.assert_allclose(Gx.T @ np.ravel(lam), rhs.ravel(), atol=1e-10)


@pytest.mark.parametrize("split", [[(0, 4), (4, 11)], [(0, 1), (1, 2), (2, 11)], [(5, 11), (0, 5)]])
def test_column_split_is_bitwise_stable(split, backend):
    impl = kernels.get_backend(backend)
    rng = np.random.default_rng(1)
    T, n, m = 11, 3, 2
    Ainv, B, C, D = random_blocks(rng, T, n, m)
    ref = np.zeros((T * (T + 1) // 2, n, m))
    impl.forward_substitution(Ainv, B, C, D, ref, 0, T)
    got = np.zeros_like(ref)
    for a, b in split:
        impl.forward_substitution(Ainv, B, C, D, got, a, b)
    assert ref.tobytes() == got.tobytes()


def test_env_var_forces_fallback():
    code = "import trajsens.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, TRAJSENS_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_benchmark_script_runs():
    bench = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    out = subprocess.run([sys.executable, str(bench), "--sizes", "4x1", "--repeat", "1"],
                         capture_output=True, text=True, check=True)
    assert "forward_substitution" in out.stdout and "tensor_contraction" in out.stdout
