"""Sensitivity of the simulated trajectory to the controls, and objective
derivatives built on it: gradient, adjoint gradient, Gauss-Newton Hessian and
the exact Hessian including second derivatives of the dynamics.

Indexing: horizon position ``i = 0..T-1`` holds step ``i+1``. The two initial
configurations are constants, so their sensitivity is zero.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import StepStates, step_jacobians, step_second_derivatives
from .errors import ContractViolationError, LinearSolveError, UnsupportedCapabilityError
from .simulate import check_condition, step_history

__all__ = [
    "StepBlocks",
    "SensitivityMatrix",
    "ObjectiveDerivatives",
    "HessianMatrix",
    "linearize",
    "compute_sensitivity",
    "gradient",
    "adjoint_vector",
    "adjoint_gradient",
    "gauss_newton_hessian",
    "full_hessian",
    "assemble_dense_jacobians",
]


@dataclass
class StepBlocks:
    """Per-step Jacobian blocks along a trajectory, each stacked over steps."""

    A: np.ndarray  # (T, n, n)
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray  # (T, n, m)
    Ainv: np.ndarray


@dataclass
class SensitivityMatrix:
    """Block lower-triangular ``dx/du``.

    Only blocks ``(i, j)`` with ``j <= i`` are stored, packed row by row in
    ``blocks`` of shape ``(T*(T+1)//2, n, m)``.
    """

    blocks: np.ndarray
    T: int
    n: int
    m: int

    def block(self, i, j):
        if j > i:
            return np.zeros((self.n, self.m))
        return self.blocks[i * (i + 1) // 2 + j]

    def to_dense(self):
        return kernels.get_backend().unpack(self.blocks, self.T, self.n, self.m)


@dataclass
class ObjectiveDerivatives:
    dOdx: np.ndarray  # (nT,)
    dOdu: np.ndarray  # (mT,)
    d2Odx2: np.ndarray  # (nT, nT)
    d2Odxdu: np.ndarray  # (nT, mT)
    d2Odu2: np.ndarray  # (mT, mT)


@dataclass
class HessianMatrix:
    H: np.ndarray
    kind: str  # "gauss_newton" or "full"


def _states(x):
    return np.asarray(getattr(x, "states", x), dtype=float)


def linearize(system, x, u, ic) -> StepBlocks:
    """Evaluate and stack the Jacobian blocks of every step; invert each ``A``."""
    states = _states(x)
    n, m, T = system.dims.n, system.dims.m, system.dims.T
    u = np.asarray(u, dtype=float).reshape(T, m)
    if states.shape != (T, n):
        raise ContractViolationError(f"trajectory has shape {states.shape}, expected {(T, n)}")
    A = np.empty((T, n, n))
    B = np.empty((T, n, n))
    C = np.empty((T, n, n))
    D = np.empty((T, n, m))
    Ainv = np.empty((T, n, n))
    for i in range(T):
        xm1, xm2 = step_history(states, ic, i)
        jac = step_jacobians(system, StepStates(states[i], xm1, xm2, u[i]))
        A[i], B[i], C[i], D[i] = jac.A, jac.B, jac.C, jac.D
        check_condition(A[i], step=i + 1, scale=max(np.linalg.norm(B[i], 2), np.linalg.norm(C[i], 2)))
        try:
            Ainv[i] = np.linalg.inv(A[i])
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(f"singular step Jacobian A at step {i + 1}", step=i + 1) from exc
    return StepBlocks(A, B, C, D, Ainv)


def _column_chunks(T, threads):
    threads = max(1, min(int(threads), T))
    edges = np.linspace(0, T, threads + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def compute_sensitivity(system, x, u, ic, blocks: StepBlocks = None, threads=1,
                        backend=None) -> SensitivityMatrix:
    """Solve ``dg/dx S = -dg/du`` by block forward-substitution.

    Block-columns are independent once the per-step inverses are known, so
    they may be split over ``threads`` workers; the result does not depend
    on the split.
    """
    if blocks is None:
        blocks = linearize(system, x, u, ic)
    impl = kernels.get_backend(backend)
    n, m, T = system.dims.n, system.dims.m, system.dims.T
    S = np.zeros((T * (T + 1) // 2, n, m))
    chunks = _column_chunks(T, threads)
    if len(chunks) == 1:
        impl.forward_substitution(blocks.Ainv, blocks.B, blocks.C, blocks.D, S, 0, T)
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [
                pool.submit(impl.forward_substitution, blocks.Ainv, blocks.B, blocks.C, blocks.D, S, a, b)
                for a, b in chunks
            ]
            for f in futures:
                f.result()
    return SensitivityMatrix(S, T, n, m)


def gradient(obj_derivs: ObjectiveDerivatives, S: SensitivityMatrix) -> np.ndarray:
    """``dO/du = dO/dx S + dO/du``."""
    if obj_derivs.dOdx.shape != (S.n * S.T,) or obj_derivs.dOdu.shape != (S.m * S.T,):
        raise ContractViolationError("objective derivatives do not match sensitivity dimensions")
    return obj_derivs.dOdx @ S.to_dense() + obj_derivs.dOdu


def adjoint_vector(system, x, u, ic, obj_derivs, blocks=None, backend=None):
    """``lam`` solving ``(dg/dx)^T lam = (dO/dx)^T``, returned with shape ``(T, n)``."""
    if blocks is None:
        blocks = linearize(system, x, u, ic)
    n, T = system.dims.n, system.dims.T
    if obj_derivs.dOdx.shape != (n * T,):
        raise ContractViolationError("dOdx does not match system dimensions")
    rhs = np.ascontiguousarray(obj_derivs.dOdx.reshape(T, n))
    return np.asarray(kernels.get_backend(backend).backward_substitution(blocks.Ainv, blocks.B, blocks.C, rhs))


def adjoint_gradient(system, x, u, ic, obj_derivs, blocks=None, backend=None):
    """Gradient via one backward sweep, ``-lam^T dg/du + dO/du``; never forms S."""
    lam = adjoint_vector(system, x, u, ic, obj_derivs, blocks=blocks, backend=backend)
    if blocks is None:
        blocks = linearize(system, x, u, ic)
    m, T = system.dims.m, system.dims.T
    if obj_derivs.dOdu.shape != (m * T,):
        raise ContractViolationError("dOdu does not match system dimensions")
    return -np.einsum("tnm,tn->tm", blocks.D, lam).reshape(-1) + obj_derivs.dOdu


def _symmetrize(H):
    return 0.5 * (H + H.T)


def _gauss_newton_unsym(obj_derivs, Sd):
    return Sd.T @ obj_derivs.d2Odx2 @ Sd + 2.0 * Sd.T @ obj_derivs.d2Odxdu + obj_derivs.d2Odu2


def gauss_newton_hessian(obj_derivs: ObjectiveDerivatives, S) -> HessianMatrix:
    """``S^T O_xx S + 2 S^T O_xu + O_uu``, symmetrized."""
    Sd = S.to_dense() if isinstance(S, SensitivityMatrix) else np.asarray(S, dtype=float)
    nT, mT = Sd.shape
    if obj_derivs.d2Odx2.shape != (nT, nT) or obj_derivs.d2Odu2.shape != (mT, mT) \
            or obj_derivs.d2Odxdu.shape != (nT, mT):
        raise ContractViolationError("objective Hessian blocks do not match sensitivity dimensions")
    return HessianMatrix(_symmetrize(_gauss_newton_unsym(obj_derivs, Sd)), "gauss_newton")


def tensor_weights(system, x, u, ic, lam):
    """Per-step ``(3n+m, 3n+m)`` second derivatives of ``lam_i . g_i``."""
    if not system.has_second_derivatives:
        raise UnsupportedCapabilityError(
            f"{type(system).__name__} does not provide second derivatives; full Hessian unavailable"
        )
    states = _states(x)
    n, m, T = system.dims.n, system.dims.m, system.dims.T
    u = np.asarray(u, dtype=float).reshape(T, m)
    W = np.zeros((T, 3 * n + m, 3 * n + m))
    for i in range(T):
        xm1, xm2 = step_history(states, ic, i)
        sd = step_second_derivatives(system, StepStates(states[i], xm1, xm2, u[i]))
        W[i] = sd.contract(lam[i])
    return W


def full_hessian(system, x, u, ic, obj_derivs, S: SensitivityMatrix, blocks=None,
                 backend=None) -> HessianMatrix:
    """Exact Hessian: Gauss-Newton part plus the dynamics curvature term.

    The curvature term is contracted with the adjoint vector first, giving
    ``-sum_i J_i^T W_i J_i`` where ``W_i`` is the second derivative of
    ``lam_i . g_i`` in ``(x_i, x_{i-1}, x_{i-2}, u_i)`` and ``J_i`` stacks the
    matching sensitivity rows and the selector of ``u_i``.
    """
    if not system.has_second_derivatives:
        raise UnsupportedCapabilityError(
            f"{type(system).__name__} does not provide second derivatives; full Hessian unavailable"
        )
    if blocks is None:
        blocks = linearize(system, x, u, ic)
    lam = adjoint_vector(system, x, u, ic, obj_derivs, blocks=blocks, backend=backend)
    W = tensor_weights(system, x, u, ic, lam)
    term = kernels.get_backend(backend).tensor_contraction(S.blocks, W, S.n, S.m)
    H = _gauss_newton_unsym(obj_derivs, S.to_dense()) - np.asarray(term)
    return HessianMatrix(_symmetrize(H), "full")


def assemble_dense_jacobians(system, x, u, ic):
    """Dense ``dg/dx`` ``(nT, nT)`` and ``dg/du`` ``(nT, mT)`` of the whole horizon."""
    states = _states(x)
    n, m, T = system.dims.n, system.dims.m, system.dims.T
    u = np.asarray(u, dtype=float).reshape(T, m)
    Gx = np.zeros((n * T, n * T))
    Gu = np.zeros((n * T, m * T))
    for i in range(T):
        xm1, xm2 = step_history(states, ic, i)
        jac = step_jacobians(system, StepStates(states[i], xm1, xm2, u[i]))
        r = slice(i * n, (i + 1) * n)
        Gx[r, i * n:(i + 1) * n] = jac.A
        if i >= 1:
            Gx[r, (i - 1) * n:i * n] = jac.B
        if i >= 2:
            Gx[r, (i - 2) * n:(i - 1) * n] = jac.C
        Gu[r, i * m:(i + 1) * m] = jac.D
    return Gx, Gu
