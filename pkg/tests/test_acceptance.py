"""Acceptance suite: one PASS/FAIL line per criterion, printed in the
terminal summary (see ``conftest.pytest_terminal_summary``)."""
import time
from pathlib import Path

import numpy as np
import pytest

from trajsens.cli import main
from trajsens.dynamics import MassSpringChain, Pendulum, PointMass2D
from trajsens.fdcheck import entrywise_rel_error, fd_gradient, fd_hessian
from trajsens.objectives import QuadraticTrackingObjective
from trajsens.optimizer import OptimizerConfig, optimize
from trajsens.sensitivity import (
    adjoint_gradient,
    assemble_dense_jacobians,
    compute_sensitivity,
    full_hessian,
    gauss_newton_hessian,
    gradient,
)
from trajsens.simulate import InitialConditions, rollout

from .conftest import BACKENDS, FIXTURES, lq_optimum, make_fixture, random_problem

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

RESULTS = {}


def record(num, title, ok, detail):
    RESULTS[num] = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} ({detail})"
    assert ok, RESULTS[num]


def tracking(system, mode="full", rho=1e-2, seed=0):
    target = np.random.default_rng(seed).normal(size=system.dims.n)
    return QuadraticTrackingObjective(target, rho=rho, mode=mode)


def swingup():
    system = Pendulum(40, 0.05)
    obj = QuadraticTrackingObjective([np.pi], [[100.0]], rho=1e-2)
    return system, obj, InitialConditions.at_rest([0.0])


def lq():
    system = PointMass2D(20, 0.1)
    target, Q, rho = np.array([1.0, -0.5]), 10 * np.eye(2), 1e-2
    obj = QuadraticTrackingObjective(target, Q, rho, "terminal")
    return system, obj, InitialConditions.at_rest([0.0, 0.0]), (target, Q, rho)


@pytest.fixture(scope="module")
def runs():
    """Optimizer runs shared by criteria 5, 6 and 7."""
    out = {}
    system, obj, ic, _ = lq()
    for mode in ("gauss_newton", "full"):
        out[f"lq/{mode}"] = optimize(system, obj, np.zeros((20, 2)), ic,
                                     OptimizerConfig(hessian_mode=mode, grad_tol=1e-8))
    system, obj, ic = swingup()
    for mode in ("gauss_newton", "gradient_descent"):
        out[f"swingup/{mode}"] = optimize(system, obj, np.zeros((40, 1)), ic,
                                          OptimizerConfig(hessian_mode=mode, grad_tol=1e-6, max_iters=500))
    system = MassSpringChain(3, 20, 0.1)
    ic = InitialConditions([0.2, -0.1, 0.0], [0.2, -0.1, 0.0])
    u0 = np.random.default_rng(7).normal(size=(20, 3))
    out["chain/full"] = optimize(system, tracking(system), u0, ic,
                                 OptimizerConfig(hessian_mode="full", grad_tol=1e-8))
    return out


def test_criterion_1_gradient_vs_fd():
    rng = np.random.default_rng(1)
    cases = [Pendulum(20, 0.05), MassSpringChain(3, 20, 0.1)]
    start = time.perf_counter()
    worst = 0.0
    for system in cases:
        n, m = system.dims.n, system.dims.m
        ic = InitialConditions(0.3 * rng.normal(size=n), 0.3 * rng.normal(size=n))
        u = rng.normal(size=(20, m))
        obj = tracking(system)
        traj = rollout(system, u, ic)
        g = gradient(obj.derivatives(traj.states, u), compute_sensitivity(system, traj, u, ic))
        worst = max(worst, entrywise_rel_error(g, fd_gradient(system, obj, u, ic)))
    elapsed = time.perf_counter() - start
    record(1, "gradient matches central FD through re-simulation", worst <= 1e-5 and elapsed < 10.0,
           f"max rel err {worst:.2e} <= 1e-5, runtime {elapsed:.2f} s < 10 s")


def test_criterion_2_adjoint_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    for name in FIXTURES:
        for _ in range(50):
            system, u, ic = random_problem(name, rng, T=15)
            obj = tracking(system, seed=int(rng.integers(1 << 30)))
            traj = rollout(system, u, ic)
            d = obj.derivatives(traj.states, u)
            g = gradient(d, compute_sensitivity(system, traj, u, ic))
            for backend in BACKENDS:
                ga = adjoint_gradient(system, traj, u, ic, d, backend=backend)
                worst = max(worst, float(np.max(np.abs(ga - g))))
    record(2, "adjoint gradient equals sensitivity gradient", worst <= 1e-10,
           f"max abs diff {worst:.2e} <= 1e-10 over 50 controls x {len(FIXTURES)} fixtures")


def test_criterion_3_sensitivity_solver():
    rng = np.random.default_rng(3)
    worst = 0.0
    structural = True
    causal = True
    for name in FIXTURES:
        for T in (1, 2, 7, 30):
            system, u, ic = random_problem(name, rng, T=T)
            n, m = system.dims.n, system.dims.m
            traj = rollout(system, u, ic)
            Gx, Gu = assemble_dense_jacobians(system, traj, u, ic)
            dense = -np.linalg.solve(Gx, Gu)
            for backend in BACKENDS:
                S = compute_sensitivity(system, traj, u, ic, backend=backend)
                worst = max(worst, float(np.max(np.abs(S.to_dense() - dense))))
                structural &= S.blocks.shape == (T * (T + 1) // 2, n, m)
                structural &= all(not np.any(S.block(i, j)) for i in range(T) for j in range(i + 1, T))
            j = T // 2
            up = u.copy()
            up[j] += 1e-3
            moved = rollout(system, up, ic).states
            causal &= moved[:j].tobytes() == traj.states[:j].tobytes()
            causal &= not np.array_equal(moved[j], traj.states[j])
    record(3, "block forward-substitution equals dense solve", worst <= 1e-10 and structural and causal,
           f"max abs diff {worst:.2e} <= 1e-10, upper blocks absent: {structural}, causality exact: {causal}")


def test_criterion_4_full_hessian():
    rng = np.random.default_rng(4)
    system, u, ic = random_problem("pendulum", rng, T=10, u_scale=3.0)
    obj = tracking(system)
    traj = rollout(system, u, ic)
    d = obj.derivatives(traj.states, u)
    S = compute_sensitivity(system, traj, u, ic)
    H = full_hessian(system, traj, u, ic, d, S).H
    fd_err = entrywise_rel_error(H, fd_hessian(system, obj, u, ic))

    gn_diff = 0.0
    for name in ("mass_spring_chain", "point_mass_2d"):
        for _ in range(5):
            system, u, ic = random_problem(name, rng, T=12)
            obj = tracking(system, seed=int(rng.integers(1 << 30)))
            traj = rollout(system, u, ic)
            d = obj.derivatives(traj.states, u)
            S = compute_sensitivity(system, traj, u, ic)
            diff = full_hessian(system, traj, u, ic, d, S).H - gauss_newton_hessian(d, S).H
            gn_diff = max(gn_diff, float(np.max(np.abs(diff))))
    record(4, "full Hessian vs FD and vs Gauss-Newton on linear fixtures", fd_err <= 1e-4 and gn_diff <= 1e-10,
           f"pendulum FD rel err {fd_err:.2e} <= 1e-4, linear |H_full - H_gn| {gn_diff:.2e} <= 1e-10")


def test_criterion_5_lq_one_step(runs):
    system, _, ic, (target, Q, rho) = lq()
    u_star, _ = lq_optimum(system, target, Q, rho, ic)
    parts = []
    ok = True
    for mode in ("full", "gauss_newton"):
        u, rep = runs[f"lq/{mode}"]
        err = float(np.max(np.abs(u - u_star)))
        gn = rep.records[-1].grad_inf_norm
        alpha = rep.records[1].alpha if rep.iterations >= 1 else float("nan")
        ok &= rep.reason == "grad_tol" and rep.iterations == 1 and alpha == 1.0 and gn <= 1e-8 and err <= 1e-8
        parts.append(f"{mode}: iters {rep.iterations}, alpha {alpha:g}, |g| {gn:.1e}, |u-u*| {err:.1e}")
    record(5, "LQ converges in one Newton step", ok, "; ".join(parts))


def test_criterion_6_second_order_advantage(runs):
    _, gn = runs["swingup/gauss_newton"]
    _, gd = runs["swingup/gradient_descent"]
    ok = gn.reason == "grad_tol" and gn.iterations < gd.iterations
    record(6, "Gauss-Newton beats gradient descent on swing-up", ok,
           f"gauss_newton {gn.iterations} iters ({gn.reason}) < gradient_descent {gd.iterations} iters ({gd.reason})")


def test_criterion_7_descent_certificate(runs):
    monotone = True
    worst = 0.0
    rollouts = 0
    for _, rep in runs.values():
        monotone &= bool(np.all(np.diff(rep.objectives()) <= 0))
        worst = max(worst, rep.max_rollout_residual)
        rollouts += rep.rollouts
    record(7, "monotone objectives and certified rollouts", monotone and worst <= 1e-10,
           f"{len(runs)} runs, {rollouts} rollouts, non-increasing: {monotone}, max |g| {worst:.2e} <= 1e-10")


def _report_without_millis(path):
    rows = path.read_text().splitlines()
    return [",".join(r.split(",")[:-1]) for r in rows]


def test_criterion_8_thread_determinism(tmp_path):
    ok = True
    names = ["pendulum_swingup.cfg", "mass_spring_chain.cfg", "lq.cfg"]
    for cfg in names:
        outs = []
        for threads in ("1", "4"):
            out = tmp_path / f"{cfg}-{threads}"
            main(["run", str(CONFIGS / cfg), "--threads", threads, "--output-dir", str(out)])
            outs.append(out)
        a, b = outs
        ok &= (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
        ok &= _report_without_millis(a / "report.csv") == _report_without_millis(b / "report.csv")
    record(8, "--threads 1 and --threads 4 outputs identical", ok,
           f"{len(names)} configs, trajectory.csv byte-equal, report.csv equal except wall-clock millis")
