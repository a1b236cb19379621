"""Forward simulation by per-step implicit Newton solves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicalSystem, StepStates, residual, step_jacobians
from .errors import ContractViolationError, LinearSolveError, NumericalDomainError, StepSolveError

STEP_TOLERANCE = 1e-10
MAX_NEWTON_ITERS = 50
MAX_HALVINGS = 30
RCOND_MIN = 1e-12


@dataclass(frozen=True)
class InitialConditions:
    """The two fixed configurations preceding the optimized horizon."""

    x0: np.ndarray
    x_neg1: np.ndarray

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        xm = np.atleast_1d(np.asarray(self.x_neg1, dtype=float))
        if x0.shape != xm.shape or x0.ndim != 1:
            raise ContractViolationError(f"x0 {x0.shape} and x_neg1 {xm.shape} must be equal-length vectors")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(xm))):
            raise ContractViolationError("initial conditions must be finite")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x_neg1", xm)

    @classmethod
    def at_rest(cls, x0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls(x0, x0.copy())

    @classmethod
    def from_velocity(cls, x0, v0, h):
        """Start at ``x0`` moving with velocity ``v0`` (``x_{-1} = x0 - h v0``)."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls(x0, x0 - h * np.atleast_1d(np.asarray(v0, dtype=float)))


@dataclass
class Trajectory:
    """States ``x_1 .. x_T`` as a ``(T, n)`` array plus the rollout certificate."""

    states: np.ndarray
    max_residual: float
    newton_iters: int = 0

    @property
    def T(self):
        return self.states.shape[0]

    def flat(self):
        return self.states.reshape(-1)


def check_condition(A, step=None, scale=0.0):
    """Return the reciprocal condition estimate of ``A`` or raise
    :class:`LinearSolveError` if it is below ``RCOND_MIN``.

    The estimate is ``sigma_min(A) / max(sigma_max(A), scale)``; passing the
    norm of the neighbouring blocks as ``scale`` catches an ``A`` that has
    cancelled to roundoff even when it is well conditioned on its own
    (always the case for 1x1 blocks).
    """
    with np.errstate(all="ignore"):
        sv = np.linalg.svd(A, compute_uv=False)
    top = max(sv[0], scale)
    rcond = sv[-1] / top if top > 0 and np.all(np.isfinite(sv)) else 0.0
    if rcond < RCOND_MIN:
        raise LinearSolveError(
            f"singular step Jacobian A at step {step} (rcond={rcond:.3e})", step=step, rcond=rcond
        )
    return rcond


def solve_step(system: DynamicalSystem, x_im1, x_im2, u_i, guess=None, step=None,
               tol=STEP_TOLERANCE, max_iters=MAX_NEWTON_ITERS):
    """Solve ``g(x, x_im1, x_im2, u_i) = 0`` for ``x`` by damped Newton.

    Returns ``(x, residual_inf_norm, iterations)``. Each Newton step is halved
    until the residual norm decreases, at most ``MAX_HALVINGS`` times.
    """
    x_im1 = np.asarray(x_im1, dtype=float)
    x_im2 = np.asarray(x_im2, dtype=float)
    u_i = np.asarray(u_i, dtype=float)
    x = np.array(x_im1 if guess is None else guess, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ContractViolationError("Newton guess must be finite")

    g = residual(system, StepStates(x, x_im1, x_im2, u_i))
    gnorm = np.max(np.abs(g))
    it = 0
    while gnorm > tol:
        if it >= max_iters:
            raise StepSolveError(
                f"Newton did not converge at step {step}: |g|={gnorm:.3e} after {it} iterations",
                step=step, residual_norm=gnorm,
            )
        jac = step_jacobians(system, StepStates(x, x_im1, x_im2, u_i))
        A = jac.A
        check_condition(A, step, scale=max(np.linalg.norm(jac.B, 2), np.linalg.norm(jac.C, 2)))
        dx = -np.linalg.solve(A, g)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_new = x + t * dx
            try:
                g_new = residual(system, StepStates(x_new, x_im1, x_im2, u_i))
            except NumericalDomainError:
                g_new = None
            if g_new is not None and np.max(np.abs(g_new)) < gnorm:
                break
            t *= 0.5
        else:
            raise StepSolveError(
                f"Newton line search stalled at step {step}: |g|={gnorm:.3e}",
                step=step, residual_norm=gnorm,
            )
        x, g = x_new, g_new
        gnorm = np.max(np.abs(g))
        it += 1
    return x, gnorm, it


def rollout(system: DynamicalSystem, u, ic: InitialConditions) -> Trajectory:
    """Simulate ``T`` steps from ``(x0, x_{-1})`` under controls ``u`` of shape ``(T, m)``."""
    n, m, T = system.dims.n, system.dims.m, system.dims.T
    u = np.asarray(u, dtype=float).reshape(T, m) if np.size(u) == T * m else None
    if u is None:
        raise ContractViolationError(f"controls must have {T * m} entries (T={T}, m={m})")
    if ic.x0.shape != (n,):
        raise ContractViolationError(f"initial conditions have length {ic.x0.shape[0]}, expected {n}")
    if not np.all(np.isfinite(u)):
        raise ContractViolationError("controls must be finite")

    states = np.empty((T, n))
    x_im2, x_im1 = ic.x_neg1, ic.x0
    worst = 0.0
    total_iters = 0
    for i in range(T):
        x_i, gnorm, it = solve_step(system, x_im1, x_im2, u[i], guess=x_im1, step=i + 1)
        states[i] = x_i
        worst = max(worst, gnorm)
        total_iters += it
        x_im2, x_im1 = x_im1, x_i
    return Trajectory(states, worst, total_iters)


def step_history(states, ic, i):
    """``(x_{i-1}, x_{i-2})`` for 0-based horizon index ``i`` (step ``i+1``)."""
    xm1 = states[i - 1] if i >= 1 else ic.x0
    if i >= 2:
        xm2 = states[i - 2]
    elif i == 1:
        xm2 = ic.x0
    else:
        xm2 = ic.x_neg1
    return xm1, xm2


def trajectory_residuals(system, states, u, ic):
    """Per-step residual vectors ``(T, n)`` of a candidate trajectory."""
    T = system.dims.T
    u = np.asarray(u, dtype=float).reshape(T, system.dims.m)
    out = np.empty((T, system.dims.n))
    for i in range(T):
        xm1, xm2 = step_history(states, ic, i)
        out[i] = residual(system, StepStates(states[i], xm1, xm2, u[i]))
    return out
