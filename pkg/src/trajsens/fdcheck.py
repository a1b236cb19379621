"""Central finite-difference oracles and the derivative self-check.

Every probe here goes through ``residual`` or a full re-simulation, never
through the analytic sensitivity code, so the checks are independent of what
they validate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .dynamics import StepStates, residual, step_jacobians, step_second_derivatives
from .sensitivity import (
    adjoint_gradient,
    assemble_dense_jacobians,
    compute_sensitivity,
    full_hessian,
    gradient,
    linearize,
)
from .simulate import rollout, step_history

FD_REL_STEP = 1e-6
HESSIAN_FD_REL_STEP = 1e-5

TOLERANCES = {
    "jacobian": 1e-6,
    "second_derivative": 1e-5,
    "sensitivity": 1e-10,
    "gradient": 1e-5,
    "adjoint": 1e-10,
    "full_hessian": 1e-4,
}


def fd_step(value, rel=FD_REL_STEP):
    return rel * (1.0 + abs(value))


def entrywise_rel_error(approx, exact, floor=1e-12):
    """``max_k |approx_k - exact_k| / max(|exact_k|, floor * max|exact|)``."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    scale = max(np.max(np.abs(exact)), 1e-300) if exact.size else 1.0
    denom = np.maximum(np.abs(exact), floor * scale)
    return float(np.max(np.abs(approx - exact) / denom)) if exact.size else 0.0


def normwise_rel_error(approx, exact, floor=1.0):
    """``max|approx - exact| / max(max|exact|, floor)``."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact), initial=0.0) / max(np.max(np.abs(exact), initial=0.0), floor))


def _central(f, x, k, rel):
    x = np.array(x, dtype=float)
    h = fd_step(x[k], rel)
    xp, xm = x.copy(), x.copy()
    xp[k] += h
    xm[k] -= h
    return (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)


def fd_step_jacobians(system, s: StepStates, rel=FD_REL_STEP):
    """Central differences of ``residual`` w.r.t. each argument: dict of blocks A, B, C, D."""
    names = ("x_i", "x_im1", "x_im2", "u_i")
    out = {}
    for blk, name in zip("ABCD", names):
        base = getattr(s, name)

        def g(v, name=name):
            args = {k: getattr(s, k) for k in names}
            args[name] = v
            return residual(system, StepStates(**args))

        out[blk] = np.column_stack([_central(g, base, k, rel) for k in range(base.size)])
    return out


def fd_second_derivatives(system, s: StepStates, rel=FD_REL_STEP):
    """Central differences of the analytic Jacobians, as a dense
    ``(n, 3n+m, 3n+m)`` tensor over ``(x_i, x_{i-1}, x_{i-2}, u_i)``."""
    n, m = system.dims.n, system.dims.m
    z0 = np.concatenate([s.x_i, s.x_im1, s.x_im2, s.u_i])

    def jac(z):
        st = StepStates(z[:n], z[n:2 * n], z[2 * n:3 * n], z[3 * n:])
        j = step_jacobians(system, st)
        return np.hstack([j.A, j.B, j.C, j.D])

    cols = [_central(jac, z0, k, rel) for k in range(z0.size)]
    # cols[k][r, l] = d/dz_k (dg_r/dz_l)
    return np.stack(cols, axis=2)


def analytic_second_derivatives_dense(system, s: StepStates):
    n, m = system.dims.n, system.dims.m
    sd = step_second_derivatives(system, s)
    out = np.zeros((n, 3 * n + m, 3 * n + m))
    for r in range(n):
        e = np.zeros(n)
        e[r] = 1.0
        out[r] = sd.contract(e)
    return out


def fd_gradient(system, obj, u, ic, rel=FD_REL_STEP):
    """Gradient of ``O(x(u), u)`` by central differences, re-simulating per probe."""
    shape = np.shape(u)
    flat = np.asarray(u, dtype=float).ravel()

    def f(v):
        uu = v.reshape(shape)
        return obj.value(rollout(system, uu, ic).states, uu)

    return np.array([_central(f, flat, k, rel) for k in range(flat.size)])


def fd_hessian(system, obj, u, ic, rel=HESSIAN_FD_REL_STEP):
    """Central differences of the analytic gradient, re-simulating and
    recomputing the sensitivity per probe."""
    shape = np.shape(u)
    flat = np.asarray(u, dtype=float).ravel()

    def grad(v):
        uu = v.reshape(shape)
        traj = rollout(system, uu, ic)
        d = obj.derivatives(traj.states, uu)
        return gradient(d, compute_sensitivity(system, traj.states, uu, ic))

    H = np.column_stack([_central(grad, flat, k, rel) for k in range(flat.size)])
    return 0.5 * (H + H.T)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    passed: bool
    skipped: bool = False
    detail: str = ""

    def line(self):
        if self.skipped:
            return f"SKIP {self.name}: {self.detail}"
        status = "PASS" if self.passed else "FAIL"
        msg = f"{status} {self.name}: max rel error {self.error:.3e} (tol {self.tolerance:.0e})"
        if self.detail:
            msg += f" [{self.detail}]"
        return msg


def run_checks(system, obj, u, ic, threads=1) -> List[CheckResult]:
    """Validate all analytic derivatives at control ``u``."""
    dims = system.dims
    u = np.asarray(u, dtype=float).reshape(dims.T, dims.m)
    traj = rollout(system, u, ic)
    states = traj.states
    results = []

    worst, where = 0.0, ""
    worst2, where2 = 0.0, ""
    for i in range(dims.T):
        xm1, xm2 = step_history(states, ic, i)
        s = StepStates(states[i], xm1, xm2, u[i])
        jac = step_jacobians(system, s)
        fd = fd_step_jacobians(system, s)
        for blk in "ABCD":
            e = normwise_rel_error(getattr(jac, blk), fd[blk])
            if e > worst:
                worst, where = e, f"block {blk} at step {i + 1}"
        if system.has_second_derivatives:
            e = normwise_rel_error(analytic_second_derivatives_dense(system, s), fd_second_derivatives(system, s))
            if e > worst2:
                worst2, where2 = e, f"step {i + 1}"
    tol = TOLERANCES["jacobian"]
    results.append(CheckResult("step_jacobians", worst, tol, worst <= tol, detail=where if worst > tol else ""))
    if system.has_second_derivatives:
        tol = TOLERANCES["second_derivative"]
        results.append(CheckResult("step_second_derivatives", worst2, tol, worst2 <= tol,
                                   detail=where2 if worst2 > tol else ""))
    else:
        results.append(CheckResult("step_second_derivatives", 0.0, 0.0, True, skipped=True,
                                   detail="system provides no second derivatives"))

    blocks = linearize(system, states, u, ic)
    S = compute_sensitivity(system, states, u, ic, blocks=blocks, threads=threads)
    Gx, Gu = assemble_dense_jacobians(system, states, u, ic)
    S_dense = -np.linalg.solve(Gx, Gu)
    e = float(np.max(np.abs(S.to_dense() - S_dense)))
    tol = TOLERANCES["sensitivity"]
    results.append(CheckResult("sensitivity_vs_dense", e, tol, e <= tol))

    derivs = obj.derivatives(states, u)
    g = gradient(derivs, S)
    e = entrywise_rel_error(g, fd_gradient(system, obj, u, ic))
    tol = TOLERANCES["gradient"]
    results.append(CheckResult("gradient_vs_fd", e, tol, e <= tol))

    ga = adjoint_gradient(system, states, u, ic, derivs, blocks=blocks)
    e = float(np.max(np.abs(ga - g)))
    tol = TOLERANCES["adjoint"]
    results.append(CheckResult("adjoint_vs_gradient", e, tol, e <= tol))

    if system.has_second_derivatives:
        H = full_hessian(system, states, u, ic, derivs, S, blocks=blocks).H
        e = normwise_rel_error(H, fd_hessian(system, obj, u, ic), floor=1e-300)
        tol = TOLERANCES["full_hessian"]
        results.append(CheckResult("full_hessian_vs_fd", e, tol, e <= tol))
    else:
        results.append(CheckResult("full_hessian_vs_fd", 0.0, 0.0, True, skipped=True,
                                   detail="system provides no second derivatives"))
    return results
