"""Per-step dynamical-system contract, finite-difference kinematics and fixtures.

A system is described by a residual ``g(x_i, x_{i-1}, x_{i-2}, u_i)`` that
vanishes when step ``i`` satisfies the discretized equations of motion.
States are positions only; velocity and acceleration come from backward
differences.

Sign convention: ``g = inertial + damping + internal forces - control forcing``,
so the control Jacobian is minus the control map.
"""
from __future__ import annotations

import abc
import copy
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import (
    ContractViolationError,
    NumericalDomainError,
    UnsupportedCapabilityError,
)

__all__ = [
    "SystemDims",
    "StepStates",
    "StepJacobians",
    "StepSecondDerivatives",
    "DynamicalSystem",
    "Pendulum",
    "MassSpringChain",
    "PointMass2D",
    "residual",
    "step_jacobians",
    "step_second_derivatives",
    "fd_velocity",
    "fd_acceleration",
    "register_system",
    "make_system",
    "available_systems",
]

LAGS = (0, 1, 2)


@dataclass(frozen=True)
class SystemDims:
    n: int
    m: int
    T: int
    h: float

    def __post_init__(self):
        if int(self.n) < 1 or int(self.m) < 1:
            raise ContractViolationError(f"n and m must be >= 1, got n={self.n}, m={self.m}")
        if int(self.T) < 1:
            raise ContractViolationError(f"T must be >= 1, got {self.T}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ContractViolationError(f"h must be a positive finite number, got {self.h}")


@dataclass
class StepStates:
    """Arguments of one residual evaluation."""

    x_i: np.ndarray
    x_im1: np.ndarray
    x_im2: np.ndarray
    u_i: np.ndarray

    def __post_init__(self):
        self.x_i = np.asarray(self.x_i, dtype=float)
        self.x_im1 = np.asarray(self.x_im1, dtype=float)
        self.x_im2 = np.asarray(self.x_im2, dtype=float)
        self.u_i = np.asarray(self.u_i, dtype=float)


@dataclass
class StepJacobians:
    """Blocks of the residual Jacobian: ``A = dg/dx_i``, ``B = dg/dx_{i-1}``,
    ``C = dg/dx_{i-2}``, ``D = dg/du_i``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass
class StepSecondDerivatives:
    """Second partials of the residual, stored sparsely per lag.

    ``gxx[(a, b)][r, j, k]`` is ``d^2 g_r / dx_{i-a,j} dx_{i-b,k}``,
    ``gxu[a][r, j, q]`` is ``d^2 g_r / dx_{i-a,j} du_{i,q}`` and
    ``guu[r, p, q]`` is ``d^2 g_r / du_{i,p} du_{i,q}``. Missing keys are zero.
    """

    n: int
    m: int
    gxx: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    gxu: Dict[int, np.ndarray] = field(default_factory=dict)
    guu: Optional[np.ndarray] = None

    def xx(self, a, b):
        blk = self.gxx.get((a, b))
        if blk is None:
            return np.zeros((self.n, self.n, self.n))
        return blk

    def xu(self, a):
        blk = self.gxu.get(a)
        if blk is None:
            return np.zeros((self.n, self.n, self.m))
        return blk

    def uu(self):
        if self.guu is None:
            return np.zeros((self.n, self.m, self.m))
        return self.guu

    def is_zero(self):
        blocks = list(self.gxx.values()) + list(self.gxu.values())
        if self.guu is not None:
            blocks.append(self.guu)
        return all(not np.any(b) for b in blocks)

    def contract(self, lam):
        """Weight the tensors by ``lam`` over the residual index.

        Returns the symmetric ``(3n+m, 3n+m)`` matrix of the second derivative
        of ``lam . g`` with respect to ``(x_i, x_{i-1}, x_{i-2}, u_i)``.
        """
        n, m = self.n, self.m
        W = np.zeros((3 * n + m, 3 * n + m))
        for (a, b), blk in self.gxx.items():
            W[a * n:(a + 1) * n, b * n:(b + 1) * n] += np.tensordot(lam, blk, axes=1)
        for a, blk in self.gxu.items():
            wxu = np.tensordot(lam, blk, axes=1)
            W[a * n:(a + 1) * n, 3 * n:] += wxu
            W[3 * n:, a * n:(a + 1) * n] += wxu.T
        if self.guu is not None:
            W[3 * n:, 3 * n:] += np.tensordot(lam, self.guu, axes=1)
        return W


def fd_velocity(x_i, x_im1, h):
    """Backward-difference velocity ``(x_i - x_{i-1}) / h``."""
    x_i = np.asarray(x_i, dtype=float)
    x_im1 = np.asarray(x_im1, dtype=float)
    if x_i.shape != x_im1.shape:
        raise ContractViolationError(f"shape mismatch {x_i.shape} vs {x_im1.shape}")
    if not h > 0:
        raise ContractViolationError(f"h must be positive, got {h}")
    return (x_i - x_im1) / h


def fd_acceleration(x_i, x_im1, x_im2, h):
    """Second backward difference ``(x_i - 2 x_{i-1} + x_{i-2}) / h**2``."""
    x_i = np.asarray(x_i, dtype=float)
    x_im1 = np.asarray(x_im1, dtype=float)
    x_im2 = np.asarray(x_im2, dtype=float)
    if not (x_i.shape == x_im1.shape == x_im2.shape):
        raise ContractViolationError(
            f"shape mismatch {x_i.shape}, {x_im1.shape}, {x_im2.shape}"
        )
    if not h > 0:
        raise ContractViolationError(f"h must be positive, got {h}")
    return (x_i - 2.0 * x_im1 + x_im2) / h**2


class DynamicalSystem(abc.ABC):
    """Base class for user systems.

    Subclasses set ``dims`` and implement ``_residual`` and ``_jacobians``.
    Systems able to report second derivatives set
    ``has_second_derivatives = True`` and implement ``_second_derivatives``.
    Implementations must not mutate themselves during evaluation.
    """

    dims: SystemDims
    has_second_derivatives = False

    @abc.abstractmethod
    def _residual(self, x_i, x_im1, x_im2, u_i):
        ...

    @abc.abstractmethod
    def _jacobians(self, x_i, x_im1, x_im2, u_i) -> StepJacobians:
        ...

    def _second_derivatives(self, x_i, x_im1, x_im2, u_i) -> StepSecondDerivatives:
        raise UnsupportedCapabilityError(
            f"{type(self).__name__} does not provide second derivatives"
        )

    def with_horizon(self, T):
        """Copy of this system with a different number of time steps."""
        other = copy.copy(self)
        other.dims = SystemDims(self.dims.n, self.dims.m, int(T), self.dims.h)
        return other


def _check_states(system, s):
    n, m = system.dims.n, system.dims.m
    for name in ("x_i", "x_im1", "x_im2"):
        v = getattr(s, name)
        if v.shape != (n,):
            raise ContractViolationError(f"{name} has shape {v.shape}, expected ({n},)")
    if s.u_i.shape != (m,):
        raise ContractViolationError(f"u_i has shape {s.u_i.shape}, expected ({m},)")


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalDomainError(f"{name} produced non-finite values")


def residual(system: DynamicalSystem, s: StepStates) -> np.ndarray:
    """Evaluate ``g(x_i, x_{i-1}, x_{i-2}, u_i)``."""
    _check_states(system, s)
    g = np.asarray(system._residual(s.x_i, s.x_im1, s.x_im2, s.u_i), dtype=float)
    if g.shape != (system.dims.n,):
        raise ContractViolationError(f"residual has shape {g.shape}, expected ({system.dims.n},)")
    _check_finite("residual", g)
    return g


def step_jacobians(system: DynamicalSystem, s: StepStates) -> StepJacobians:
    _check_states(system, s)
    jac = system._jacobians(s.x_i, s.x_im1, s.x_im2, s.u_i)
    n, m = system.dims.n, system.dims.m
    for name, shape in (("A", (n, n)), ("B", (n, n)), ("C", (n, n)), ("D", (n, m))):
        blk = getattr(jac, name)
        if np.shape(blk) != shape:
            raise ContractViolationError(f"Jacobian block {name} has shape {np.shape(blk)}, expected {shape}")
    _check_finite("step_jacobians", jac.A, jac.B, jac.C, jac.D)
    return jac


def step_second_derivatives(system: DynamicalSystem, s: StepStates) -> StepSecondDerivatives:
    if not system.has_second_derivatives:
        raise UnsupportedCapabilityError(
            f"{type(system).__name__} does not provide second derivatives"
        )
    _check_states(system, s)
    return system._second_derivatives(s.x_i, s.x_im1, s.x_im2, s.u_i)


# ---------------------------------------------------------------------------
# Built-in fixtures


class Pendulum(DynamicalSystem):
    """Damped pendulum ``M a + c v + k sin(x) - u = 0`` with n = m = 1."""

    has_second_derivatives = True

    def __init__(self, T, h, M=1.0, c=0.1, k=9.81):
        self.dims = SystemDims(1, 1, int(T), float(h))
        self.M, self.c, self.k = float(M), float(c), float(k)

    def _residual(self, x_i, x_im1, x_im2, u_i):
        h = self.dims.h
        return (
            self.M * fd_acceleration(x_i, x_im1, x_im2, h)
            + self.c * fd_velocity(x_i, x_im1, h)
            + self.k * np.sin(x_i)
            - u_i
        )

    def _jacobians(self, x_i, x_im1, x_im2, u_i):
        h, M, c = self.dims.h, self.M, self.c
        A = np.array([[M / h**2 + c / h + self.k * np.cos(x_i[0])]])
        B = np.array([[-2.0 * M / h**2 - c / h]])
        C = np.array([[M / h**2]])
        D = np.array([[-1.0]])
        return StepJacobians(A, B, C, D)

    def _second_derivatives(self, x_i, x_im1, x_im2, u_i):
        gxx = {(0, 0): np.array([[[-self.k * np.sin(x_i[0])]]])}
        return StepSecondDerivatives(1, 1, gxx=gxx)


class MassSpringChain(DynamicalSystem):
    """Chain of ``n`` unit masses between two walls, each mass actuated.

    Residual ``M a + c v + K x - P u`` with tridiagonal stiffness
    ``K = k * tridiag(-1, 2, -1)`` and ``P = p * I`` (so m = n).
    """

    has_second_derivatives = True

    def __init__(self, n, T, h, M=1.0, c=0.1, k=1.0, p=1.0):
        n = int(n)
        self.dims = SystemDims(n, n, int(T), float(h))
        self.M, self.c, self.k, self.p = float(M), float(c), float(k), float(p)
        self.K = self.k * (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1))
        self.P = self.p * np.eye(n)
        h = self.dims.h
        I = np.eye(n)
        self._A = self.M / h**2 * I + self.c / h * I + self.K
        self._B = (-2.0 * self.M / h**2 - self.c / h) * I
        self._C = self.M / h**2 * I
        self._D = -self.P

    def _residual(self, x_i, x_im1, x_im2, u_i):
        h = self.dims.h
        return (
            self.M * fd_acceleration(x_i, x_im1, x_im2, h)
            + self.c * fd_velocity(x_i, x_im1, h)
            + self.K @ x_i
            - self.P @ u_i
        )

    def _jacobians(self, x_i, x_im1, x_im2, u_i):
        return StepJacobians(self._A.copy(), self._B.copy(), self._C.copy(), self._D.copy())

    def _second_derivatives(self, x_i, x_im1, x_im2, u_i):
        return StepSecondDerivatives(self.dims.n, self.dims.m)


class PointMass2D(DynamicalSystem):
    """Planar double integrator ``M a + c v - u = 0`` (n = m = 2)."""

    has_second_derivatives = True

    def __init__(self, T, h, M=1.0, c=0.0):
        self.dims = SystemDims(2, 2, int(T), float(h))
        self.M, self.c = float(M), float(c)
        h = self.dims.h
        I = np.eye(2)
        self._A = (self.M / h**2 + self.c / h) * I
        self._B = (-2.0 * self.M / h**2 - self.c / h) * I
        self._C = self.M / h**2 * I
        self._D = -I

    def _residual(self, x_i, x_im1, x_im2, u_i):
        h = self.dims.h
        return self.M * fd_acceleration(x_i, x_im1, x_im2, h) + self.c * fd_velocity(x_i, x_im1, h) - u_i

    def _jacobians(self, x_i, x_im1, x_im2, u_i):
        return StepJacobians(self._A.copy(), self._B.copy(), self._C.copy(), self._D.copy())

    def _second_derivatives(self, x_i, x_im1, x_im2, u_i):
        return StepSecondDerivatives(2, 2)


_REGISTRY: Dict[str, Callable[..., DynamicalSystem]] = {
    "pendulum": Pendulum,
    "mass_spring_chain": MassSpringChain,
    "point_mass_2d": PointMass2D,
}


def register_system(name: str, factory: Callable[..., DynamicalSystem]) -> None:
    """Make ``factory`` selectable by ``name`` in experiment configs."""
    _REGISTRY[name] = factory


def available_systems():
    return sorted(_REGISTRY)


def make_system(name: str, **params) -> DynamicalSystem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ContractViolationError(
            f"unknown system {name!r}; choose from {', '.join(available_systems())}"
        ) from None
    return factory(**params)
