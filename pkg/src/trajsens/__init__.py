"""Trajectory optimization through first- and second-order sensitivity analysis."""
from .dynamics import (
    DynamicalSystem,
    MassSpringChain,
    Pendulum,
    PointMass2D,
    StepJacobians,
    StepSecondDerivatives,
    StepStates,
    SystemDims,
    fd_acceleration,
    fd_velocity,
    make_system,
    register_system,
    residual,
    step_jacobians,
    step_second_derivatives,
)
from .kernels import BACKEND
from .objectives import QuadraticTrackingObjective
from .optimizer import OptimizationReport, OptimizerConfig, optimize
from .sensitivity import (
    HessianMatrix,
    ObjectiveDerivatives,
    SensitivityMatrix,
    adjoint_gradient,
    compute_sensitivity,
    full_hessian,
    gauss_newton_hessian,
    gradient,
)
from .simulate import InitialConditions, Trajectory, rollout, solve_step

__version__ = "0.1.0"
