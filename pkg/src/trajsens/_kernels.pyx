# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled banded block kernels.

Mirrors ``trajsens._fallback``; see there for the packed storage layout.
"""
import numpy as np

cimport cython
from scipy.linalg.cython_blas cimport dgemm


cdef inline Py_ssize_t _off(Py_ssize_t i) nogil:
    return i * (i + 1) // 2


def forward_substitution(double[:, :, ::1] Ainv, double[:, :, ::1] B,
                         double[:, :, ::1] C, double[:, :, ::1] D,
                         double[:, :, ::1] S, Py_ssize_t j0, Py_ssize_t j1):
    cdef Py_ssize_t T = Ainv.shape[0]
    cdef Py_ssize_t n = D.shape[1]
    cdef Py_ssize_t m = D.shape[2]
    cdef Py_ssize_t i, j, a, b, q, jhi
    cdef double w
    cdef double* acc
    cdef double* src
    cdef double* dst
    acc_arr = np.zeros(n * m)
    cdef double[::1] acc_mv = acc_arr

    with nogil:
        acc = &acc_mv[0]
        # block rows in order so packed S is walked contiguously; each block
        # sees the same arithmetic whatever the column split
        for i in range(j0, T):
            jhi = i if i < j1 - 1 else j1 - 1
            for j in range(j0, jhi + 1):
                for a in range(n * m):
                    acc[a] = 0.0
                if i == j:
                    for a in range(n):
                        for q in range(m):
                            acc[a * m + q] = D[i, a, q]
                if i - 1 >= j:
                    src = &S[_off(i - 1) + j, 0, 0]
                    for a in range(n):
                        for b in range(n):
                            w = B[i, a, b]
                            for q in range(m):
                                acc[a * m + q] += w * src[b * m + q]
                if i - 2 >= j:
                    src = &S[_off(i - 2) + j, 0, 0]
                    for a in range(n):
                        for b in range(n):
                            w = C[i, a, b]
                            for q in range(m):
                                acc[a * m + q] += w * src[b * m + q]
                dst = &S[_off(i) + j, 0, 0]
                for a in range(n):
                    for q in range(m):
                        dst[a * m + q] = 0.0
                    for b in range(n):
                        w = -Ainv[i, a, b]
                        for q in range(m):
                            dst[a * m + q] += w * acc[b * m + q]


def backward_substitution(double[:, :, ::1] Ainv, double[:, :, ::1] B,
                          double[:, :, ::1] C, double[:, ::1] rhs):
    cdef Py_ssize_t T = Ainv.shape[0]
    cdef Py_ssize_t n = Ainv.shape[1]
    cdef Py_ssize_t j, a, b
    cdef double s
    lam_arr = np.zeros((T, n))
    cdef double[:, ::1] lam = lam_arr
    cdef double[::1] r = np.zeros(n)

    with nogil:
        for j in range(T - 1, -1, -1):
            for a in range(n):
                r[a] = rhs[j, a]
            if j + 1 < T:
                for a in range(n):
                    s = 0.0
                    for b in range(n):
                        s = s + B[j + 1, b, a] * lam[j + 1, b]
                    r[a] -= s
            if j + 2 < T:
                for a in range(n):
                    s = 0.0
                    for b in range(n):
                        s = s + C[j + 2, b, a] * lam[j + 2, b]
                    r[a] -= s
            for a in range(n):
                s = 0.0
                for b in range(n):
                    s = s + Ainv[j, b, a] * r[b]
                lam[j, a] = s
    return lam_arr


def tensor_contraction(double[:, :, ::1] S, double[:, :, ::1] W,
                       Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t T = W.shape[0]
    cdef int nz = 3 * n + m
    cdef int ld = m * T
    cdef int cols
    cdef Py_ssize_t i, lag, r, jb, a, b, q, p, base
    cdef double one = 1.0, zero = 0.0
    cdef char nn = b'N', tt = b'T'
    cdef bint nonzero
    H_arr = np.zeros((m * T, m * T))
    cdef double[:, ::1] H = H_arr
    cdef double[:, ::1] J = np.zeros((nz, m * T))
    cdef double[:, ::1] Y = np.zeros((nz, m * T))

    with nogil:
        for i in range(T):
            nonzero = False
            for a in range(nz):
                for b in range(nz):
                    if W[i, a, b] != 0.0:
                        nonzero = True
            if not nonzero:
                continue
            cols = <int>((i + 1) * m)
            for a in range(nz):
                for p in range(cols):
                    J[a, p] = 0.0
            for lag in range(3):
                r = i - lag
                if r < 0:
                    continue
                for jb in range(r + 1):
                    base = _off(r) + jb
                    for a in range(n):
                        for q in range(m):
                            J[lag * n + a, jb * m + q] = S[base, a, q]
            for q in range(m):
                J[3 * n + q, i * m + q] = 1.0
            # row-major Y = W_i J and H += J^T Y, issued as column-major BLAS calls
            dgemm(&nn, &nn, &cols, &nz, &nz, &one, &J[0, 0], &ld, &W[i, 0, 0], &nz,
                  &zero, &Y[0, 0], &ld)
            dgemm(&nn, &tt, &cols, &cols, &nz, &one, &Y[0, 0], &ld, &J[0, 0], &ld,
                  &one, &H[0, 0], &ld)
    return H_arr


def unpack(double[:, :, ::1] S, Py_ssize_t T, Py_ssize_t n, Py_ssize_t m):
    cdef Py_ssize_t i, j, a, q, base
    out_arr = np.zeros((n * T, m * T))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(T):
            for j in range(i + 1):
                base = _off(i) + j
                for a in range(n):
                    for q in range(m):
                        out[i * n + a, j * m + q] = S[base, a, q]
    return out_arr
