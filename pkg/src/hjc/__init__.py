"""Constrained Hamilton-Jacobi equations from selection-mutation dynamics.

Solves ``u_t = |grad u|^2 + R(x, I(t))`` with ``max_x u(t, x) = 0`` through the
optimal-trajectory representation of ``u`` and a fixed-point map for the
maximizer path, with closed forms for quadratic data and a viscous
finite-difference simulator for comparison.
"""
from .constrained import (
    ConstrainedSolution,
    SolverOptions,
    residuals,
    solve_constrained,
)
from .errors import (
    AdmissibilityError,
    BlowUpError,
    ConfigurationError,
    DegeneracyError,
    DomainError,
    HJCError,
    InternalConsistencyError,
    IntervalTooLongError,
    NonConcaveError,
    SolverError,
)
from .model import (
    GrowthConstants,
    GrowthModel,
    InitialConstants,
    InitialData,
    eval_growth,
    solve_I_from_x,
    validate_assumptions,
)
from .quadratic import (
    QuadraticProblem,
    asymptotic_limits,
    gamma_differential,
    hessian_closed_form,
    solve_quadratic_system,
)
from .trajectory import (
    TimeDependentRate,
    ValueFunction,
    hessian_at,
    solve_euler_lagrange,
    value_by_direct_maximization,
    value_from_trajectory,
)
from .viscous import ViscousConfig, concentration_diagnostics, simulate_viscous

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "BlowUpError",
    "ConfigurationError",
    "ConstrainedSolution",
    "DegeneracyError",
    "DomainError",
    "GrowthConstants",
    "GrowthModel",
    "HJCError",
    "InitialConstants",
    "InitialData",
    "InternalConsistencyError",
    "IntervalTooLongError",
    "NonConcaveError",
    "QuadraticProblem",
    "SolverError",
    "SolverOptions",
    "TimeDependentRate",
    "ValueFunction",
    "ViscousConfig",
    "asymptotic_limits",
    "concentration_diagnostics",
    "eval_growth",
    "gamma_differential",
    "hessian_at",
    "hessian_closed_form",
    "residuals",
    "simulate_viscous",
    "solve_I_from_x",
    "solve_constrained",
    "solve_euler_lagrange",
    "solve_quadratic_system",
    "validate_assumptions",
    "value_by_direct_maximization",
    "value_from_trajectory",
]
