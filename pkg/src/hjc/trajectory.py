"""Value function of ``u_t = |grad u|^2 + R(t, x)`` through optimal trajectories.

For a point ``(t, x)`` the optimal path solves the two-point problem

    gamma'' = -2 grad R(s, gamma),   gamma'(0) = -2 grad u0(gamma(0)),   gamma(t) = x,

and then ``u(t, x) = u0(gamma(0)) + int_0^t (-|gamma'|^2 / 4 + R(s, gamma)) ds``,
``grad u(t, x) = -gamma'(t) / 2``. The boundary value problem is discretized by
Chebyshev collocation and solved by Newton's method; the Hessian comes from the
linearized problem, whose matrix is the Newton Jacobian at the solution.

:func:`value_by_direct_maximization` is an independent check: it maximizes the
action over piecewise-linear paths without ever forming the optimality system.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import spsolve

from . import _spectral as spec
from .errors import ConfigurationError, DegeneracyError, DomainError, SolverError
from .model import as_vector

__all__ = [
    "TimeDependentRate",
    "Trajectory",
    "PointValue",
    "ValueFunction",
    "solve_euler_lagrange",
    "value_from_trajectory",
    "gradient_from_trajectory",
    "hessian_at",
    "hessian_bounds",
    "value_by_direct_maximization",
    "empirical_third_derivative",
]


class TimeDependentRate:
    """``R(s, x) = R_base(x, I(s))`` for a competition path known on a time grid.

    Without slopes the path is interpolated linearly; with slopes ``I'(t_k)``
    a piecewise cubic Hermite interpolant is used.

    Parameters
    ----------
    base : GrowthModel
    t_grid : array_like
        Increasing times starting at 0.
    I_values : array_like
        Competition level at each grid time, within ``[0, base.I_max]``.
    I_slopes : array_like, optional
    """

    def __init__(self, base, t_grid, I_values, I_slopes=None):
        t = np.atleast_1d(np.asarray(t_grid, dtype=float))
        I = np.atleast_1d(np.asarray(I_values, dtype=float))
        if t.shape != I.shape:
            raise ConfigurationError("t_grid and I_values must have the same length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ConfigurationError("t_grid must start at 0 and be strictly increasing")
        slack = 1e-9 * (1.0 + base.I_max)
        if np.any(I < -slack) or np.any(I > base.I_max + slack):
            raise DomainError(f"competition path leaves [0, I_max={base.I_max}]")
        self.base = base
        self.t_grid = t
        self.I_values = I
        self.I_slopes = None if I_slopes is None else np.asarray(I_slopes, dtype=float)
        if t.size == 1:
            self._interp = lambda s: np.full(np.shape(s), I[0])
        elif self.I_slopes is None:
            self._interp = lambda s: np.interp(s, t, I)
        else:
            self._interp = CubicHermiteSpline(t, I, self.I_slopes, extrapolate=False)

    @classmethod
    def constant(cls, base, I, T=np.inf):
        """Constant competition level, valid on ``[0, T]``."""
        rate = cls(base, [0.0], [I])
        rate._t_end = T
        return rate

    @property
    def t_end(self):
        return getattr(self, "_t_end", self.t_grid[-1])

    def I_at(self, s):
        s = np.asarray(s, dtype=float)
        tol = 1e-12 * (1.0 + self.t_end)
        if np.any(s < -tol) or np.any(s > self.t_end + tol):
            raise DomainError(f"rate queried outside [0, {self.t_end}]")
        return np.asarray(self._interp(np.clip(s, 0.0, self.t_grid[-1])), dtype=float)

    def breakpoints(self, t):
        """Grid times strictly inside ``(0, t)``."""
        g = self.t_grid
        return g[(g > 0.0) & (g < t * (1 - 1e-14))]

    def value(self, s, x):
        return self.base.value(x, self.I_at(s))

    def grad(self, s, x):
        return self.base.grad_x(x, self.I_at(s))

    def hess(self, s, x):
        return self.base.hess_x(x, self.I_at(s))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Discrete optimal path for one point ``(t, x)``.

    ``residual`` is the scaled E-L residual at the last Newton iterate
    (each equation divided by the magnitude of its terms).
    """

    t_grid: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    t: float
    x: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    _jacobian: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.t_grid.size - 1


class PointValue(NamedTuple):
    value: float
    grad: np.ndarray
    hess: np.ndarray
    trajectory: Trajectory | None


def _initial_guess(data, t, x, nodes, init):
    if isinstance(init, str):
        if init == "line":
            start = data.xbar0
        elif init == "constant":
            start = x
        else:
            raise ConfigurationError(f"unknown initial guess {init!r}")
        return start[None, :] + (nodes / t)[:, None] * (x - start)[None, :]
    guess = np.asarray(init, dtype=float).reshape(nodes.size, -1)
    return guess.copy()


def _el_system(rate, data, nodes, D1, D2, gamma, x):
    """Residual, Jacobian and per-equation scale of the collocated E-L system."""
    n1, d = gamma.shape
    g = rate.grad(nodes, gamma)
    H = rate.hess(nodes, gamma)
    g0 = data.grad(gamma[0])
    H0 = data.hess(gamma[0])
    F = np.empty((n1, d))
    F[0] = D1[0] @ gamma + 2.0 * g0
    F[1:-1] = D2[1:-1] @ gamma + 2.0 * g[1:-1]
    F[-1] = gamma[-1] - x
    scale = np.empty((n1, d))
    ag = np.abs(gamma)
    scale[0] = np.abs(D1[0]) @ ag + 2.0 * np.abs(g0)
    scale[1:-1] = np.abs(D2[1:-1]) @ ag + 2.0 * np.abs(g[1:-1])
    scale[-1] = np.abs(gamma[-1]) + np.abs(x)
    eye = np.eye(d)
    J = np.zeros((n1, d, n1, d))
    J[0] = D1[0][None, :, None] * eye[:, None, :]
    J[0, :, 0, :] += 2.0 * H0
    J[1:-1] = D2[1:-1][:, None, :, None] * eye[None, :, None, :]
    idx = np.arange(1, n1 - 1)
    J[idx, :, idx, :] += 2.0 * H[1:-1]
    J[-1, :, -1, :] = eye
    return F, J.reshape(n1 * d, n1 * d), scale


def solve_euler_lagrange(rate, data, t, x, n_nodes=64, tol=1e-10, max_iter=50, init="line"):
    """Optimal trajectory ending at ``(t, x)``.

    Parameters
    ----------
    rate : TimeDependentRate
    data : InitialData
    t : float
        Final time, ``t > 0``.
    x : array_like
        Endpoint.
    n_nodes : int
        Polynomial degree of the collocation (``n_nodes + 1`` points), at least 8.
    tol : float
        Bound on the scaled residual of the discrete system.
    init : {"line", "constant"} or array
        ``"line"`` interpolates affinely from ``data.xbar0`` to ``x``;
        ``"constant"`` starts from the path frozen at ``x``.

    Raises
    ------
    SolverError
        Newton did not reach ``tol`` in ``max_iter`` iterations.
    DomainError
        The rate is not defined on ``[0, t]``.
    """
    if not t > 0:
        raise DomainError("solve_euler_lagrange needs t > 0")
    if n_nodes < 8:
        raise ConfigurationError("n_nodes must be at least 8")
    if t > rate.t_end * (1 + 1e-12) + 1e-12:
        raise DomainError(f"rate defined up to {rate.t_end}, asked for t = {t}")
    x = as_vector(x, data.dim)
    nodes = spec.cheb_nodes(n_nodes, t)
    D1, D2 = spec.cheb_diff(n_nodes, t)
    gamma = _initial_guess(data, t, x, nodes, init)
    gamma[-1] = x
    res = np.inf
    for it in range(max_iter + 1):
        F, J, scale = _el_system(rate, data, nodes, D1, D2, gamma, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(F == 0.0, 0.0, np.abs(F) / np.maximum(scale, 1e-300))
        res = float(rel.max())
        if res <= tol:
            break
        if it == max_iter:
            raise SolverError(f"E-L Newton stalled after {max_iter} iterations "
                              f"(scaled residual {res:.3e})", residual=res)
        try:
            step = np.linalg.solve(J, F.ravel()).reshape(gamma.shape)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular E-L Jacobian: {exc}", residual=res) from exc
        gamma = gamma - step
        gamma[-1] = x
        if np.abs(step).max() <= 1e-15 * (1.0 + np.abs(gamma).max()):
            F, J, scale = _el_system(rate, data, nodes, D1, D2, gamma, x)
            break
    return Trajectory(nodes, gamma, D1 @ gamma, float(t), x.copy(), it, res, J)


def _quadrature(rate, traj):
    t = traj.t
    inner = rate.breakpoints(t)
    breaks = np.concatenate([[0.0], inner, [t]])
    panels = breaks.size - 1
    q = int(min(64, max(8, np.ceil((2 * traj.n_nodes + 2) / panels))))
    return spec.composite_gauss(breaks, q)


def value_from_trajectory(traj, rate, data):
    """``u(t, x)`` as the action of the optimal trajectory.

    The integral is split at the grid times of the competition path and each
    panel is integrated by Gauss-Legendre, the path being evaluated through
    its collocation polynomial.
    """
    s, w = _quadrature(rate, traj)
    M = spec.cheb_interp_matrix(traj.n_nodes, traj.t, s)
    g = M @ traj.points
    v = M @ traj.velocities
    lagr = -0.25 * np.sum(v * v, axis=1) + rate.value(s, g)
    return float(data.u0(traj.points[0]) + w @ lagr)


def gradient_from_trajectory(traj):
    """``grad u(t, x) = -gamma'(t) / 2``."""
    return -0.5 * traj.velocities[-1]


def hessian_at(rate, data, t, x, traj=None, tol=1e-10, n_nodes=64):
    """``D^2 u(t, x)`` from the linearized optimality system.

    The derivative ``Gamma`` of the optimal path with respect to the endpoint
    solves ``Gamma'' = -2 D^2R Gamma``, ``Gamma'(0) = -2 D^2u0 Gamma(0)``,
    ``Gamma(t) = Id``; then ``D^2u = -Gamma'(t) / 2`` (symmetrized).

    Raises
    ------
    DegeneracyError
        The linearized system is singular.
    """
    x = as_vector(x, data.dim)
    if t == 0:
        return data.hess(x)
    if traj is None:
        traj = solve_euler_lagrange(rate, data, t, x, n_nodes=n_nodes, tol=tol)
    J = traj._jacobian
    if J is None:
        D1, D2 = spec.cheb_diff(traj.n_nodes, traj.t)
        _, J, _ = _el_system(rate, data, traj.t_grid, D1, D2, traj.points, traj.x)
    d = data.dim
    n1 = traj.n_nodes + 1
    rhs = np.zeros((n1 * d, d))
    rhs[-d:] = np.eye(d)
    try:
        lu = lu_factor(J, check_finite=True)
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.abs(J).max():
            raise DegeneracyError("linearized E-L system is singular")
        Gam = lu_solve(lu, rhs).reshape(n1, d, d)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DegeneracyError(f"linearized E-L system is singular: {exc}") from exc
    D1 = spec.cheb_diff(traj.n_nodes, traj.t)[0]
    dGam_end = np.tensordot(D1[-1], Gam, axes=(0, 0))
    H = -0.5 * dGam_end
    return 0.5 * (H + H.T)


def hessian_bounds(model, data):
    """Interval ``(lo, hi)`` that must contain every eigenvalue of ``D^2u``."""
    K, L = model.constants, data.constants
    return -max(2 * L.L1_under, np.sqrt(K.K1_under)), -min(2 * L.L1_bar, np.sqrt(K.K1_bar))


class ValueFunction:
    """Evaluator of ``u(t, .)`` and its derivatives for a fixed rate.

    ``t = 0`` returns the initial datum directly.
    """

    def __init__(self, rate, data, n_nodes=64, tol=1e-10):
        self.rate = rate
        self.data = data
        self.n_nodes = n_nodes
        self.tol = tol

    def trajectory(self, t, x, init="line"):
        return solve_euler_lagrange(self.rate, self.data, t, x, self.n_nodes, self.tol, init=init)

    def evaluate(self, t, x, want_value=True):
        x = as_vector(x, self.data.dim)
        if t == 0:
            return PointValue(float(self.data.u0(x)), self.data.grad(x), self.data.hess(x), None)
        traj = self.trajectory(t, x)
        val = value_from_trajectory(traj, self.rate, self.data) if want_value else float("nan")
        return PointValue(val, gradient_from_trajectory(traj),
                          hessian_at(self.rate, self.data, t, x, traj), traj)

    def value(self, t, x):
        x = as_vector(x, self.data.dim)
        if t == 0:
            return float(self.data.u0(x))
        return value_from_trajectory(self.trajectory(t, x), self.rate, self.data)

    def gradient(self, t, x):
        x = as_vector(x, self.data.dim)
        if t == 0:
            return self.data.grad(x)
        return gradient_from_trajectory(self.trajectory(t, x))

    def hessian(self, t, x):
        return self.evaluate(t, x, want_value=False).hess

    def argmax(self, t, x0, tol=1e-12, max_iter=50):
        """Maximizer of ``u(t, .)`` by Newton on ``grad u = 0``."""
        x = as_vector(x0, self.data.dim).copy()
        for _ in range(max_iter):
            pv = self.evaluate(t, x, want_value=False)
            step = np.linalg.solve(pv.hess, pv.grad)
            x = x - step
            if np.abs(step).max() <= tol * (1.0 + np.abs(x).max()):
                return x
        raise SolverError("argmax search did not converge", residual=float(np.abs(step).max()))


def empirical_third_derivative(vf, t, points, h=1e-3):
    """Largest third difference quotient of ``u(t, .)`` over ``points``.

    Central differences of the Hessian along the coordinate axes; this is a
    diagnostic only, no a-priori bound is imposed.
    """
    worst = 0.0
    d = vf.data.dim
    for p in np.atleast_2d(points):
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            d3 = (vf.hessian(t, p + e) - vf.hessian(t, p - e)) / (2 * h)
            worst = max(worst, float(np.abs(d3).max()))
    return worst


def value_by_direct_maximization(rate, data, t, x, n_nodes=512, tol=1e-12, max_iter=100):
    """``u(t, x)`` by maximizing the discrete action over piecewise-linear paths.

    The path has ``n_nodes`` uniform segments and its last node pinned at ``x``;
    kinetic energy is exact for such paths and the rate integral uses the
    trapezoidal rule. The discrete action is concave, so a damped Newton ascent
    on the free nodes converges to its unique maximizer.
    """
    x = as_vector(x, data.dim)
    if t == 0:
        return float(data.u0(x))
    if n_nodes < 1:
        raise ConfigurationError("n_nodes must be >= 1")
    n, d = int(n_nodes), data.dim
    h = t / n
    s = np.linspace(0.0, t, n + 1)
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    end_term = w[-1] * float(rate.value(s[-1:], x[None, :])[0])

    def action(y):
        full = np.vstack([y, x[None, :]])
        kin = np.sum(np.diff(full, axis=0) ** 2) / (4.0 * h)
        return float(data.u0(y[0])) - kin + float(w[:-1] @ rate.value(s[:-1], y)) + end_term

    def grad_hess(y):
        full = np.vstack([y, x[None, :]])
        dif = np.diff(full, axis=0)
        g = w[:-1, None] * rate.grad(s[:-1], y)
        g += dif / (2.0 * h)
        g[1:] -= dif[:-1] / (2.0 * h)
        g[0] += data.grad(y[0])
        blocks = w[:-1, None, None] * rate.hess(s[:-1], y)
        diag = np.full(n, -1.0 / h)
        diag[0] = -0.5 / h
        blocks = blocks + diag[:, None, None] * np.eye(d)
        blocks[0] += data.hess(y[0])
        Hd = sp.block_diag(list(blocks), format="csr")
        off = sp.diags([np.full(n - 1, 0.5 / h)], [1], shape=(n, n))
        Ho = sp.kron(off + off.T, sp.identity(d), format="csr")
        return g.ravel(), (Hd + Ho).tocsc()

    y = data.xbar0[None, :] + (s[:-1] / t)[:, None] * (x - data.xbar0)[None, :]
    F = action(y)
    for _ in range(max_iter):
        g, H = grad_hess(y)
        p = -np.atleast_1d(spsolve(H, g)).reshape(n, d)
        if np.abs(p).max() <= tol * (1.0 + np.abs(y).max()):
            return max(F, action(y + p))
        slope = float(g @ p.ravel())
        if slope <= 0:
            raise SolverError("Newton direction is not an ascent direction (non-concave action)")
        alpha = 1.0
        while True:
            y_new = y + alpha * p
            F_new = action(y_new)
            if F_new >= F + 1e-4 * alpha * slope or alpha < 1e-10:
                break
            alpha *= 0.5
        y, F = y_new, F_new
        if alpha * np.abs(p).max() <= tol * (1.0 + np.abs(y).max()):
            return F
    raise SolverError("direct maximization did not converge", residual=float(np.abs(p).max()))
