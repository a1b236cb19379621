"""Newton-type descent on the reduced objective ``O(x(u), u)``.

Every candidate control is re-simulated before the objective is read, so the
dynamics hold to the rollout tolerance at every evaluated point.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ContractViolationError,
    LinearSolveError,
    LineSearchError,
    NumericalDomainError,
    RegularizationError,
    StepSolveError,
    TrajsensError,
)
from .sensitivity import (
    adjoint_gradient,
    compute_sensitivity,
    full_hessian,
    gauss_newton_hessian,
    gradient,
    linearize,
)
from .simulate import Trajectory, rollout

logger = logging.getLogger(__name__)

HESSIAN_MODES = ("gauss_newton", "full", "gradient_descent")
MAX_REGULARIZATION = 1e12


@dataclass
class OptimizerConfig:
    hessian_mode: str = "gauss_newton"
    grad_tol: float = 1e-6
    max_iters: int = 200
    ls_alpha0: float = 1.0
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    ls_max_backtracks: int = 40
    reg_lambda0: float = 1e-6
    reg_growth: float = 10.0
    threads: int = 1
    backend: Optional[str] = None

    def __post_init__(self):
        if self.hessian_mode not in HESSIAN_MODES:
            raise ContractViolationError(f"hessian_mode must be one of {HESSIAN_MODES}, got {self.hessian_mode!r}")
        if not self.grad_tol > 0:
            raise ContractViolationError("grad_tol must be positive")
        if int(self.max_iters) < 0:
            raise ContractViolationError("max_iters must be >= 0")
        if not self.ls_alpha0 > 0:
            raise ContractViolationError("ls_alpha0 must be positive")
        if not 0 < self.ls_shrink < 1:
            raise ContractViolationError("ls_shrink must lie in (0, 1)")
        if not 0 < self.ls_c1 < 1:
            raise ContractViolationError("ls_c1 must lie in (0, 1)")
        if int(self.ls_max_backtracks) < 0:
            raise ContractViolationError("ls_max_backtracks must be >= 0")
        if not self.reg_lambda0 > 0:
            raise ContractViolationError("reg_lambda0 must be positive")
        if not self.reg_growth > 1:
            raise ContractViolationError("reg_growth must exceed 1")
        if int(self.threads) < 1:
            raise ContractViolationError("threads must be >= 1")


@dataclass
class SearchState:
    d: np.ndarray
    alpha: float
    lambda_used: float


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    grad_inf_norm: float
    alpha: float
    lambda_used: float
    millis: float


@dataclass
class OptimizationReport:
    records: List[IterationRecord] = field(default_factory=list)
    reason: str = ""
    max_rollout_residual: float = 0.0
    rollouts: int = 0
    trajectory: Optional[Trajectory] = None

    @property
    def iterations(self):
        """Number of accepted steps."""
        return max(len(self.records) - 1, 0)

    @property
    def converged(self):
        return self.reason == "grad_tol"

    def objectives(self):
        return np.array([r.objective for r in self.records])


def regularization_schedule(cfg):
    yield 0.0
    k = 0
    while True:
        lam = cfg.reg_lambda0 * cfg.reg_growth**k
        if lam > MAX_REGULARIZATION:
            return
        yield lam
        k += 1


def regularize(H, grad, cfg: OptimizerConfig):
    """Cholesky-factor ``H + lam I`` for the smallest ``lam`` in the schedule
    ``0, lambda0, lambda0*growth, ...`` that is positive definite and yields a
    descent direction. Returns ``(factor, lam)``."""
    H = np.asarray(getattr(H, "H", H), dtype=float)
    grad = np.asarray(grad, dtype=float)
    eye = np.eye(H.shape[0])
    for lam in regularization_schedule(cfg):
        try:
            factor = cho_factor(H + lam * eye, lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            continue
        if np.any(grad):
            d = -cho_solve(factor, grad)
            if not (np.all(np.isfinite(d)) and d @ grad < 0):
                continue
        return factor, lam
    raise RegularizationError(f"Hessian not positive definite for any shift up to {MAX_REGULARIZATION:g}")


def search_direction(H_factored, grad):
    """Solve ``(H + lam I) d = -grad``; ``None`` means the identity (gradient descent)."""
    grad = np.asarray(grad, dtype=float)
    if H_factored is None:
        return -grad
    d = -cho_solve(H_factored, grad)
    if not np.all(np.isfinite(d)):
        raise NumericalDomainError("search direction is not finite")
    return d


@dataclass
class LineSearchResult:
    u: np.ndarray
    trajectory: Trajectory
    objective: float
    alpha: float
    rollouts: int
    max_rollout_residual: float


def line_search(system, obj, u, d, grad, ic, cfg: OptimizerConfig, f0=None):
    """Armijo backtracking over ``alpha0 * shrink**k``; each candidate is re-simulated.

    A candidate whose rollout fails is rejected like one that violates the
    sufficient-decrease test.
    """
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float).reshape(u.shape)
    slope = float(np.dot(np.ravel(grad), np.ravel(d)))
    if not slope < 0:
        raise ContractViolationError(f"line search needs a descent direction (grad.d = {slope:.3e})")
    if f0 is None:
        f0 = obj.value(rollout(system, u, ic).states, u)
    alpha = cfg.ls_alpha0
    worst = 0.0
    evaluated = 0
    for _ in range(int(cfg.ls_max_backtracks) + 1):
        cand = u + alpha * d
        try:
            traj = rollout(system, cand, ic)
        except (StepSolveError, LinearSolveError, NumericalDomainError) as exc:
            logger.debug("candidate alpha=%g rejected: %s", alpha, exc)
        else:
            evaluated += 1
            worst = max(worst, traj.max_residual)
            f = obj.value(traj.states, cand)
            if np.isfinite(f) and f <= f0 + cfg.ls_c1 * alpha * slope:
                return LineSearchResult(cand, traj, f, alpha, evaluated, worst)
        alpha *= cfg.ls_shrink
    err = LineSearchError(f"no step satisfied the Armijo condition after {cfg.ls_max_backtracks} backtracks")
    err.rollouts = evaluated
    err.max_rollout_residual = worst
    raise err


def optimize(system, obj, u_init, ic, cfg: OptimizerConfig = None, callback=None):
    """Run the outer descent loop. Returns ``(u_opt, OptimizationReport)``.

    Terminates with reason ``grad_tol``, ``max_iters`` or
    ``line_search_failed``. Other numerical failures propagate with an
    ``iteration`` attribute set.
    """
    cfg = cfg or OptimizerConfig()
    dims = system.dims
    u = np.array(u_init, dtype=float).reshape(dims.T, dims.m)
    report = OptimizationReport()

    t0 = time.perf_counter()
    traj = rollout(system, u, ic)
    report.rollouts = 1
    report.max_rollout_residual = traj.max_residual
    f = obj.value(traj.states, u)
    alpha, lam_used = 0.0, 0.0

    it = 0
    while True:
        try:
            derivs = obj.derivatives(traj.states, u)
            blocks = linearize(system, traj.states, u, ic)
            if cfg.hessian_mode == "gradient_descent":
                S = None
                grad = adjoint_gradient(system, traj.states, u, ic, derivs, blocks=blocks, backend=cfg.backend)
            else:
                S = compute_sensitivity(system, traj.states, u, ic, blocks=blocks,
                                        threads=cfg.threads, backend=cfg.backend)
                grad = gradient(derivs, S)
            gnorm = float(np.max(np.abs(grad)))
            report.records.append(
                IterationRecord(it, f, gnorm, alpha, lam_used, 1000.0 * (time.perf_counter() - t0))
            )
            if callback is not None:
                callback(report.records[-1])
            if gnorm <= cfg.grad_tol:
                report.reason = "grad_tol"
                break
            if it >= cfg.max_iters:
                report.reason = "max_iters"
                break

            t0 = time.perf_counter()
            if cfg.hessian_mode == "gradient_descent":
                factor, lam_used = None, 0.0
            else:
                if cfg.hessian_mode == "full":
                    H = full_hessian(system, traj.states, u, ic, derivs, S, blocks=blocks, backend=cfg.backend)
                else:
                    H = gauss_newton_hessian(derivs, S)
                factor, lam_used = regularize(H, grad, cfg)
            d = search_direction(factor, grad)
            try:
                ls = line_search(system, obj, u, d, grad, ic, cfg, f0=f)
            except LineSearchError as exc:
                report.rollouts += exc.rollouts
                report.max_rollout_residual = max(report.max_rollout_residual, exc.max_rollout_residual)
                report.reason = "line_search_failed"
                break
        except TrajsensError as exc:
            exc.iteration = it
            raise
        report.rollouts += ls.rollouts
        report.max_rollout_residual = max(report.max_rollout_residual, ls.max_rollout_residual)
        u, traj, f, alpha = ls.u, ls.trajectory, ls.objective, ls.alpha
        it += 1
        logger.debug("iter %d: O=%.6e |g|=%.3e alpha=%g lambda=%g", it, f, gnorm, alpha, lam_used)

    report.trajectory = traj
    return u, report
