import numpy as np
import pytest

from trajsens import kernels
from trajsens.dynamics import MassSpringChain, Pendulum, PointMass2D
from trajsens.simulate import InitialConditions

BACKENDS = ["python"] + (["cython"] if kernels.compiled_available() else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def make_fixture(name, T=10, h=0.05):
    if name == "pendulum":
        return Pendulum(T, h)
    if name == "mass_spring_chain":
        return MassSpringChain(3, T, h)
    if name == "point_mass_2d":
        return PointMass2D(T, h)
    raise KeyError(name)


FIXTURES = ["pendulum", "mass_spring_chain", "point_mass_2d"]


def random_problem(name, rng, T=10, h=0.05, u_scale=2.0):
    system = make_fixture(name, T, h)
    n, m = system.dims.n, system.dims.m
    ic = InitialConditions(rng.normal(size=n) * 0.3, rng.normal(size=n) * 0.3)
    u = rng.normal(size=(T, m)) * u_scale
    return system, u, ic


def dense_linear_rollout_matrices(M, c, K, P, h, T, ic):
    """Stacked linear system ``Gx x + Gu u + g0 = 0`` for a linear fixture,
    built from the physical coefficients alone."""
    n = K.shape[0]
    m = P.shape[1]
    I = np.eye(n)
    A = M / h**2 * I + c / h * I + K
    B = -2.0 * M / h**2 * I - c / h * I
    C = M / h**2 * I
    Gx = np.zeros((n * T, n * T))
    Gu = np.zeros((n * T, m * T))
    g0 = np.zeros(n * T)
    for i in range(T):
        r = slice(i * n, (i + 1) * n)
        Gx[r, r] = A
        Gu[r, i * m:(i + 1) * m] = -P
        if i >= 1:
            Gx[r, (i - 1) * n:i * n] = B
        if i >= 2:
            Gx[r, (i - 2) * n:(i - 1) * n] = C
    g0[:n] += B @ ic.x0 + C @ ic.x_neg1
    if T >= 2:
        g0[n:2 * n] += C @ ic.x0
    return Gx, Gu, g0


def linear_coefficients(system):
    """(M, c, K, P) of a built-in linear fixture."""
    n = system.dims.n
    if isinstance(system, MassSpringChain):
        K = np.zeros((n, n))
        for a in range(n):
            K[a, a] = 2 * system.k
            if a > 0:
                K[a, a - 1] = -system.k
            if a < n - 1:
                K[a, a + 1] = -system.k
        return system.M, system.c, K, system.p * np.eye(n)
    if isinstance(system, PointMass2D):
        return system.M, system.c, np.zeros((2, 2)), np.eye(2)
    raise TypeError(type(system))


def lq_optimum(system, target, Q, rho, ic):
    """Closed-form minimizer of the terminal quadratic objective over the
    stacked linear dynamics (dense normal equations)."""
    M, c, K, P = linear_coefficients(system)
    T, n, m = system.dims.T, system.dims.n, system.dims.m
    Gx, Gu, g0 = dense_linear_rollout_matrices(M, c, K, P, system.dims.h, T, ic)
    F = -np.linalg.solve(Gx, Gu)
    f0 = -np.linalg.solve(Gx, g0)
    E = np.zeros((n, n * T))
    E[:, (T - 1) * n:] = np.eye(n)
    EF = E @ F
    lhs = EF.T @ Q @ EF + rho * np.eye(m * T)
    rhs = EF.T @ Q @ (np.asarray(target) - E @ f0)
    u = np.linalg.solve(lhs, rhs)
    return u.reshape(T, m), (F @ u + f0).reshape(T, n)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[num])
