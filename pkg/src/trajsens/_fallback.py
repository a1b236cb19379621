"""Pure NumPy versions of the banded block kernels.

Same signatures and storage layout as the compiled ``_kernels`` module. The
sensitivity blocks live in a packed lower-triangular array of shape
``(T*(T+1)//2, n, m)``; block ``(i, j)`` with ``j <= i`` sits at
``i*(i+1)//2 + j``.
"""
import numpy as np


def _off(i):
    return i * (i + 1) // 2


def forward_substitution(Ainv, B, C, D, S, j0, j1):
    """Fill block-columns ``j0 <= j < j1`` of the packed sensitivity ``S``.

    ``S[i, j] = -Ainv[i] (B[i] S[i-1, j] + C[i] S[i-2, j] + delta_ij D[i])``.
    Each column is computed with identical arithmetic regardless of how the
    column range is split, so threaded and serial runs agree bitwise.
    """
    T = Ainv.shape[0]
    for i in range(j0, T):
        hi = min(i, j1 - 1)
        k = hi - j0 + 1
        acc = np.zeros((k,) + D.shape[1:])
        if i == hi:
            acc[k - 1] += D[i]
        if i - 1 >= j0:
            c1 = min(i - 1, j1 - 1) - j0 + 1
            acc[:c1] += np.matmul(B[i], S[_off(i - 1) + j0:_off(i - 1) + j0 + c1])
        if i - 2 >= j0:
            c2 = min(i - 2, j1 - 1) - j0 + 1
            acc[:c2] += np.matmul(C[i], S[_off(i - 2) + j0:_off(i - 2) + j0 + c2])
        S[_off(i) + j0:_off(i) + j0 + k] = -np.matmul(Ainv[i], acc)


def backward_substitution(Ainv, B, C, rhs):
    """Solve the block-transposed system for the adjoint vector.

    ``lam[j] = Ainv[j]^T (rhs[j] - B[j+1]^T lam[j+1] - C[j+2]^T lam[j+2])``.
    """
    T = Ainv.shape[0]
    lam = np.zeros_like(rhs)
    for j in range(T - 1, -1, -1):
        r = rhs[j].copy()
        if j + 1 < T:
            r -= B[j + 1].T @ lam[j + 1]
        if j + 2 < T:
            r -= C[j + 2].T @ lam[j + 2]
        lam[j] = Ainv[j].T @ r
    return lam


def _lagged_rows(S, i, T, n, m):
    """Stack ``[S_i; S_{i-1}; S_{i-2}; E_i]`` restricted to columns ``<= i``."""
    cols = (i + 1) * m
    J = np.zeros((3 * n + m, cols))
    for lag in range(3):
        r = i - lag
        if r < 0:
            continue
        blocks = S[_off(r):_off(r) + r + 1]  # (r+1, n, m)
        J[lag * n:(lag + 1) * n, :(r + 1) * m] = blocks.transpose(1, 0, 2).reshape(n, (r + 1) * m)
    J[3 * n:, i * m:cols] = np.eye(m)
    return J


def tensor_contraction(S, W, n, m):
    """Return ``sum_i J_i^T W_i J_i`` with ``J_i`` the lagged sensitivity rows."""
    T = W.shape[0]
    H = np.zeros((m * T, m * T))
    for i in range(T):
        if not np.any(W[i]):
            continue
        J = _lagged_rows(S, i, T, n, m)
        cols = J.shape[1]
        H[:cols, :cols] += J.T @ (W[i] @ J)
    return H


def unpack(S, T, n, m):
    """Dense ``(n*T, m*T)`` matrix from packed blocks."""
    out = np.zeros((n * T, m * T))
    for i in range(T):
        blocks = S[_off(i):_off(i) + i + 1]
        out[i * n:(i + 1) * n, :(i + 1) * m] = blocks.transpose(1, 0, 2).reshape(n, (i + 1) * m)
    return out
