"""Compare the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 20x1 100x3 200x6] [--repeat 5]

Each size is ``T x n`` with ``m = n``. Reports the best wall time per kernel
and backend, the speedup, and the max difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from trajsens import _fallback, kernels


def make_inputs(T, n, m, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(T, n, n)) + 5 * np.eye(n)
    Ainv = np.linalg.inv(A)
    B = rng.normal(size=(T, n, n))
    C = rng.normal(size=(T, n, n))
    D = rng.normal(size=(T, n, m))
    rhs = rng.normal(size=(T, n))
    W = rng.normal(size=(T, 3 * n + m, 3 * n + m))
    W = W + W.transpose(0, 2, 1)
    return Ainv, B, C, D, rhs, W


def kernel_calls(impl, T, n, m, inputs):
    Ainv, B, C, D, rhs, W = inputs
    S_ref = np.zeros((T * (T + 1) // 2, n, m))
    _fallback.forward_substitution(Ainv, B, C, D, S_ref, 0, T)

    def fwd():
        S = np.zeros_like(S_ref)
        impl.forward_substitution(Ainv, B, C, D, S, 0, T)
        return S

    return {
        "forward_substitution": fwd,
        "backward_substitution": lambda: np.asarray(impl.backward_substitution(Ainv, B, C, rhs)),
        "tensor_contraction": lambda: np.asarray(impl.tensor_contraction(S_ref, W, n, m)),
    }


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", default=["20x1", "100x3", "200x6"])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not kernels.compiled_available():
        print("compiled kernels not built; only the fallback is available")
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])

    print(f"{'kernel':<22} {'T':>4} {'n':>3} " + " ".join(f"{b + ' [ms]':>14}" for b in backends)
          + f" {'speedup':>8} {'max diff':>9}")
    for size in args.sizes:
        T, n = (int(v) for v in size.split("x"))
        m = n
        inputs = make_inputs(T, n, m)
        calls = {b: kernel_calls(kernels.get_backend(b), T, n, m, inputs) for b in backends}
        for name in calls["python"]:
            times = [best_time(calls[b][name], args.repeat) for b in backends]
            row = f"{name:<22} {T:>4} {n:>3} " + " ".join(f"{1e3 * t:>14.4f}" for t in times)
            if len(backends) == 2:
                diff = float(np.max(np.abs(calls["python"][name]() - calls["cython"][name]())))
                row += f" {times[0] / times[1]:>7.1f}x {diff:>9.1e}"
            print(row)


if __name__ == "__main__":
    main()
