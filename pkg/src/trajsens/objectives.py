"""Objective contract and the built-in quadratic tracking objective."""
from __future__ import annotations

import abc

import numpy as np

from .errors import ContractViolationError
from .sensitivity import ObjectiveDerivatives

__all__ = ["ObjectiveFunction", "QuadraticTrackingObjective", "evaluate", "derivatives"]


class ObjectiveFunction(abc.ABC):
    """Scalar cost ``O(x, u)`` of a ``(T, n)`` trajectory and ``(T, m)`` controls."""

    @abc.abstractmethod
    def value(self, states, u) -> float:
        ...

    @abc.abstractmethod
    def derivatives(self, states, u) -> ObjectiveDerivatives:
        ...


class QuadraticTrackingObjective(ObjectiveFunction):
    """Weighted distance to ``target`` plus ``rho/2`` times the control energy.

    In ``"terminal"`` mode only ``x_T`` is penalized; ``"full"`` sums the
    state term over every step.
    """

    MODES = ("terminal", "full")

    def __init__(self, target, Q=None, rho=1e-2, mode="terminal"):
        self.target = np.atleast_1d(np.asarray(target, dtype=float))
        n = self.target.shape[0]
        Q = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape != (n, n):
            raise ContractViolationError(f"Q has shape {Q.shape}, expected {(n, n)}")
        if not np.allclose(Q, Q.T, rtol=0, atol=0):
            raise ContractViolationError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ContractViolationError("Q must be positive semidefinite")
        if not rho >= 0:
            raise ContractViolationError(f"rho must be >= 0, got {rho}")
        if mode not in self.MODES:
            raise ContractViolationError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.Q = Q
        self.rho = float(rho)
        self.mode = mode

    def _check(self, states, u):
        states = np.asarray(getattr(states, "states", states), dtype=float)
        u = np.asarray(u, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.target.shape[0]:
            raise ContractViolationError(
                f"trajectory has shape {states.shape}, expected (T, {self.target.shape[0]})"
            )
        T = states.shape[0]
        if u.ndim == 1:
            if u.size % T:
                raise ContractViolationError(f"{u.size} controls do not split over T={T} steps")
            u = u.reshape(T, -1)
        if u.shape[0] != T:
            raise ContractViolationError(f"controls have {u.shape[0]} steps, trajectory has {T}")
        return states, u

    def value(self, states, u):
        states, u = self._check(states, u)
        err = states - self.target
        if self.mode == "terminal":
            err = err[-1:]
        state_term = 0.5 * np.einsum("ti,ij,tj->", err, self.Q, err)
        return float(state_term + 0.5 * self.rho * np.sum(u * u))

    def derivatives(self, states, u):
        states, u = self._check(states, u)
        T, n = states.shape
        m = u.shape[1]
        dOdx = np.zeros((T, n))
        d2Odx2 = np.zeros((n * T, n * T))
        err = states - self.target
        steps = [T - 1] if self.mode == "terminal" else range(T)
        for i in steps:
            dOdx[i] = self.Q @ err[i]
            d2Odx2[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.Q
        return ObjectiveDerivatives(
            dOdx=dOdx.reshape(-1),
            dOdu=self.rho * u.reshape(-1),
            d2Odx2=d2Odx2,
            d2Odxdu=np.zeros((n * T, m * T)),
            d2Odu2=self.rho * np.eye(m * T),
        )


def evaluate(obj: ObjectiveFunction, x, u) -> float:
    return obj.value(x, u)


def derivatives(obj: ObjectiveFunction, x, u) -> ObjectiveDerivatives:
    return obj.derivatives(x, u)
