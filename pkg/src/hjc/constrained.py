"""Constrained problem: ``u_t = |grad u|^2 + R(x, I)`` with ``max_x u(t, .) = 0``.

The constraint is traded for the equivalent system

    R(xbar, I) = 0,    xbar' = (-D^2u(t, xbar))^{-1} grad R(xbar, I),

with ``u`` the value function driven by the competition path ``I``. On a short
interval the maximizer path is the fixed point of

    Phi(x) = F(I[x], x, V(I[x])),

where ``I[x]`` solves ``R(x(t), I) = 0`` pointwise, ``V(I)`` is the value
function for that path and ``F`` integrates the ``xbar`` equation with the
Hessian of ``V(I)`` frozen along ``x``. Intervals are chained, each restarting
from the state reached by the previous one.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import (
    AdmissibilityError,
    ConfigurationError,
    DegeneracyError,
    InternalConsistencyError,
    IntervalTooLongError,
    SolverError,
)
from .model import as_vector, solve_I_from_x
from .trajectory import TimeDependentRate, ValueFunction, hessian_bounds

log = logging.getLogger(__name__)

__all__ = [
    "SolverOptions",
    "IterationTrace",
    "RestartState",
    "Segment",
    "ConstrainedSolution",
    "ResidualReport",
    "Geometry",
    "solve_I_from_x",
    "xbar_velocity",
    "step_xbar",
    "admissible_geometry",
    "choose_interval_length",
    "fixed_point_iterate",
    "solve_constrained",
    "residuals",
    "default_sample_points",
]


@dataclass
class SolverOptions:
    """Knobs of :func:`solve_constrained`.

    ``delta=None`` picks the interval length from the admissible-region geometry.
    ``max_step`` bounds the sub-step used to integrate the ``xbar`` equation.
    """

    delta: float | None = None
    safety: float = 0.5
    tol: float = 1e-9
    max_iter: int = 50
    n_nodes: int = 64
    max_step: float = 0.02
    max_halvings: int = 10
    strict: bool = False
    el_tol: float = 1e-10
    restart_tol: float = 1e-5


@dataclass
class IterationTrace:
    """Convergence history of the fixed-point iteration on one interval."""

    interval: int
    t0: float
    delta: float
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    note: str = ""

    @property
    def iterations(self):
        return len(self.distances)

    def to_dict(self):
        return {
            "interval": self.interval,
            "t0": self.t0,
            "delta": self.delta,
            "iterations": self.iterations,
            "distances": [float(v) for v in self.distances],
            "ratios": [float(v) for v in self.ratios],
            "converged": self.converged,
            "note": self.note,
        }


@dataclass(frozen=True, eq=False)
class RestartState:
    """State at the start of an interval plus the competition history before it."""

    t0: float
    xbar: np.ndarray
    I: float
    hist_t: np.ndarray
    hist_I: np.ndarray
    hist_slope: np.ndarray

    @classmethod
    def initial(cls, data):
        return cls(0.0, data.xbar0.copy(), float(data.I0),
                   np.array([0.0]), np.array([float(data.I0)]), np.array([0.0]))


@dataclass(frozen=True, eq=False)
class Segment:
    """Converged fixed point on one interval (grid includes both endpoints)."""

    t: np.ndarray
    xbar: np.ndarray
    xbar_slope: np.ndarray
    I: np.ndarray
    I_slope: np.ndarray
    hess: np.ndarray

    def restart(self, prev):
        return RestartState(
            float(self.t[-1]), self.xbar[-1].copy(), float(self.I[-1]),
            np.concatenate([prev.hist_t, self.t[1:]]),
            np.concatenate([prev.hist_I, self.I[1:]]),
            np.concatenate([prev.hist_slope[:-1], self.I_slope]),
        )


# --------------------------------------------------------------- small pieces


def xbar_velocity(hess, grad_R):
    """``(-hess)^{-1} grad_R``; ``hess`` must be negative definite."""
    H = np.atleast_2d(np.asarray(hess, dtype=float))
    g = np.atleast_1d(np.asarray(grad_R, dtype=float))
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))
    if lam.max() >= -1e-14 * max(1.0, abs(lam.min())):
        raise DegeneracyError(f"Hessian is not negative definite (eigenvalues {lam})")
    return np.linalg.solve(-H, g)


def step_xbar(hess, grad_R, x, dt):
    """One explicit Euler stage ``x + dt * (-hess)^{-1} grad_R``."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    return as_vector(x) + dt * xbar_velocity(hess, grad_R)


def _I_slope(model, x, I, xdot):
    return -float(model.grad_x(x, I) @ xdot) / float(model.dR_dI(x, I))


@dataclass(frozen=True)
class Geometry:
    """Admissible-region constants: ``sup |grad R|`` on Omega and the gap
    between ``Omega_0 = {R(., I0) >= 0}`` and the complement of
    ``Omega = {R(., 0) > 0}``."""

    C_M: float
    gap: float
    curvature: float

    @property
    def mu(self):
        return self.curvature / self.C_M * self.gap

    def ball_radius(self, delta):
        return self.C_M * delta / self.curvature


def admissible_geometry(model, data, box=None, resolution=None):
    """Compute :class:`Geometry`; exact for the quadratic family.

    Custom rates need ``box`` (list of ``[low, high]``) which must contain
    ``Omega``; the constants are then estimated on a uniform grid.
    """
    K, L = model.constants, data.constants
    curvature = min(2 * L.L1_bar, np.sqrt(K.K1_bar))
    if curvature <= 0:
        raise ConfigurationError("min(2 L1_bar, sqrt(K1_bar)) must be positive")
    if model.is_quadratic:
        fam = model.family
        c0 = fam.I_shift + 0.5 * fam.b @ np.linalg.solve(fam.A1, fam.b)
        if c0 <= 0:
            raise ConfigurationError("admissible region {R(x,0) > 0} is empty")
        if c0 - data.I0 < 0:
            raise ConfigurationError("region {R(x,I0) >= 0} is empty")
        lam = np.linalg.eigvalsh(fam.A1).max()
        C_M = np.sqrt(2 * c0 * lam)
        gap = (np.sqrt(2 * c0) - np.sqrt(2 * (c0 - data.I0))) / np.sqrt(lam)
        return Geometry(float(C_M), float(gap), float(curvature))
    if box is None:
        raise ConfigurationError("custom growth models need a box to estimate the geometry")
    from scipy.spatial import cKDTree

    box = np.asarray(box, dtype=float)
    n = resolution or (801 if model.dim == 1 else 161)
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dim)
    in_omega = model.value(X, 0.0) > 0
    in_omega0 = model.value(X, data.I0) >= 0
    if not in_omega0.any():
        raise ConfigurationError("region {R(x,I0) >= 0} is empty on the box")
    if in_omega.all():
        raise ConfigurationError("box does not contain the admissible region")
    C_M = 0.0
    for I in np.linspace(0.0, model.I_max, 5):
        C_M = max(C_M, float(np.linalg.norm(model.grad_x(X[in_omega], I), axis=1).max()))
    gap = float(cKDTree(X[~in_omega]).query(X[in_omega0])[0].min())
    if gap <= 0:
        raise ConfigurationError("no gap between {R(.,I0) >= 0} and the complement of Omega")
    return Geometry(C_M, gap, float(curvature))


def choose_interval_length(model, data, T, safety=0.5, box=None):
    """``safety * mu`` (capped at ``T``), with ``mu = min(2 L1_bar, sqrt(K1_bar)) / C_M * gap``.

    The further smallness needed for contraction is found adaptively by
    :func:`solve_constrained`, which halves the interval when iterates stop
    contracting.
    """
    if not 0 < safety < 1:
        raise ConfigurationError("safety must lie in (0, 1)")
    geo = admissible_geometry(model, data, box)
    return float(min(safety * geo.mu, T))


# ---------------------------------------------------------- fixed-point map


class _Phi:
    """Fixed-point map on the sub-grid of one interval."""

    def __init__(self, model, data, start, delta, n_sub, n_nodes, el_tol):
        self.model, self.data, self.start = model, data, start
        self.tau = start.t0 + delta * np.arange(n_sub + 1) / n_sub
        self.dt = delta / n_sub
        self.n_nodes, self.el_tol = n_nodes, el_tol
        self._hess0 = None

    def _rate(self, I, I_slope):
        st = self.start
        slopes = I_slope.copy()
        if st.t0 > 0:
            slopes[0] = st.hist_slope[-1]
        return TimeDependentRate(
            self.model,
            np.concatenate([st.hist_t, self.tau[1:]]),
            np.concatenate([st.hist_I, I[1:]]),
            np.concatenate([st.hist_slope[:-1], slopes]),
        )

    def competition(self, X, Xs):
        I = np.array([solve_I_from_x(self.model, x) for x in X])
        I[0] = self.start.I
        Is = np.array([_I_slope(self.model, x, i, v) for x, i, v in zip(X, I, Xs)])
        return I, Is

    def _hess(self, vf, s, x):
        if s == 0:
            return self.data.hess(x)
        return vf.hessian(s, x)

    def __call__(self, X, Xs):
        I, Is = self.competition(X, Xs)
        vf = ValueFunction(self._rate(I, Is), self.data, self.n_nodes, self.el_tol)
        spline = CubicHermiteSpline(self.tau, X, Xs, axis=0)
        mids = self.tau[:-1] + 0.5 * self.dt
        Xm = spline(mids)
        if self._hess0 is None:
            self._hess0 = self._hess(vf, self.tau[0], X[0])
        H = np.empty((len(self.tau), X.shape[1], X.shape[1]))
        H[0] = self._hess0
        for j in range(1, len(self.tau)):
            H[j] = self._hess(vf, self.tau[j], X[j])
        f = np.array([xbar_velocity(H[j], self.model.grad_x(X[j], I[j]))
                      for j in range(len(self.tau))])
        fm = np.empty_like(Xm)
        for j, (s, x) in enumerate(zip(mids, Xm)):
            Hm = self._hess(vf, s, x)
            fm[j] = xbar_velocity(Hm, self.model.grad_x(x, solve_I_from_x(self.model, x)))
        Y = np.empty_like(X)
        Y[0] = X[0]
        incr = self.dt / 6.0 * (f[:-1] + 4.0 * fm + f[1:])
        Y[1:] = X[0] + np.cumsum(incr, axis=0)
        return Y, f, H


def fixed_point_iterate(model, data, start, delta, tol=1e-9, max_iter=50, *,
                        n_nodes=64, max_step=0.02, el_tol=1e-10, interval=0,
                        geometry=None, strict=False):
    """Iterate ``x_{k+1} = Phi(x_k)`` from the constant path ``x_0 = start.xbar``.

    Paths live on a uniform sub-grid of ``[t0, t0 + delta]`` and are
    interpolated by cubic Hermite polynomials using the velocities returned by
    ``Phi``. Each application integrates the ``xbar`` equation with Simpson
    (RK4 for a path-independent right side).

    Returns
    -------
    (Segment, IterationTrace)

    Raises
    ------
    IntervalTooLongError
        Distances grew for three consecutive iterates, or ``max_iter`` was hit.
    AdmissibilityError
        An iterate left the admissible region.
    """
    n_sub = max(2, int(np.ceil(delta / max_step - 1e-9)))
    phi = _Phi(model, data, start, delta, n_sub, n_nodes, el_tol)
    trace = IterationTrace(interval, start.t0, delta)
    X = np.tile(start.xbar, (n_sub + 1, 1))
    Xs = np.zeros_like(X)
    radius = None if geometry is None else geometry.ball_radius(delta)
    growth = 0
    for _ in range(max_iter):
        Y, Ys, H = phi(X, Xs)
        dist = float(np.abs(Y - X).max())
        if trace.distances and trace.distances[-1] > 0:
            ratio = dist / trace.distances[-1]
            trace.ratios.append(ratio)
            growth = growth + 1 if ratio >= 1 else 0
        trace.distances.append(dist)
        if radius is not None:
            excursion = float(np.linalg.norm(Y - start.xbar, axis=1).max())
            if excursion > radius * (1 + 1e-9):
                msg = (f"iterate left the ball of radius {radius:.4g} around xbar "
                       f"(distance {excursion:.4g}) on interval {interval}")
                if strict:
                    raise AdmissibilityError(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
        X, Xs = Y, Ys
        if dist <= tol:
            trace.converged = True
            I, Is = phi.competition(X, Xs)
            return Segment(phi.tau.copy(), X, Xs, I, Is, H), trace
        if growth >= 3:
            trace.note = "no contraction"
            raise IntervalTooLongError(
                f"fixed-point map does not contract on [{start.t0}, {start.t0 + delta}]",
                residual=dist)
    trace.note = "max_iter reached"
    raise IntervalTooLongError(f"no convergence in {max_iter} iterations", residual=dist)


# ------------------------------------------------------------------ solution


@dataclass(eq=False)
class ConstrainedSolution:
    """Time series of the maximizer, the competition level and the Hessian.

    ``evaluator`` answers ``value/gradient/hessian(t, x)``; by default it
    re-solves the optimal-trajectory problem with the stored competition path.
    """

    t: np.ndarray
    xbar: np.ndarray
    I: np.ndarray
    hess_at_xbar: np.ndarray
    xbar_slope: np.ndarray
    I_slope: np.ndarray
    model: object
    data: object
    n_nodes: int = 64
    traces: list = field(default_factory=list)
    halvings: int = 0
    evaluator: object = None

    def __post_init__(self):
        if self.evaluator is None:
            self.evaluator = ValueFunction(self.rate, self.data, self.n_nodes)

    @property
    def rate(self):
        return TimeDependentRate(self.model, self.t, self.I, self.I_slope)

    @property
    def dim(self):
        return self.xbar.shape[1]

    def xbar_at(self, t):
        return CubicHermiteSpline(self.t, self.xbar, self.xbar_slope, axis=0)(t)

    def I_at(self, t):
        return CubicHermiteSpline(self.t, self.I, self.I_slope)(t)

    def value(self, t, x):
        return self.evaluator.value(t, x)

    def gradient(self, t, x):
        return self.evaluator.gradient(t, x)

    def hessian(self, t, x):
        return self.evaluator.hessian(t, x)

    def argmax(self, t):
        """Maximizer of ``u(t, .)`` found by Newton from the stored ``xbar``."""
        return self.evaluator.argmax(t, self.xbar_at(t))

    def hess_eigenvalues(self):
        return np.linalg.eigvalsh(self.hess_at_xbar)

    def summary(self):
        return {
            "T": float(self.t[-1]),
            "xbar_T": self.xbar[-1].tolist(),
            "I_T": float(self.I[-1]),
            "hess_T": self.hess_at_xbar[-1].tolist(),
            "n_times": int(self.t.size),
            "intervals": len(self.traces),
            "halvings": int(self.halvings),
        }


def _glue(segments, model, data, opts, traces, halvings):
    t = [segments[0].t[:1]]
    parts = {k: [getattr(segments[0], k)[:1]] for k in ("xbar", "xbar_slope", "I", "I_slope", "hess")}
    for seg in segments:
        t.append(seg.t[1:])
        for k in parts:
            parts[k].append(getattr(seg, k)[1:])
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return ConstrainedSolution(
        np.concatenate(t), cat["xbar"], cat["I"], cat["hess"], cat["xbar_slope"],
        cat["I_slope"], model, data, opts.n_nodes, traces, halvings)


def _check_initial(model, data):
    x0 = data.xbar0
    defects = {
        "R(xbar0, I0)": abs(float(model.value(x0, data.I0))),
        "|grad u0(xbar0)|": float(np.abs(data.grad(x0)).max()),
        "u0(xbar0)": abs(float(data.u0(x0))),
    }
    bad = {k: v for k, v in defects.items() if v > 1e-8}
    if bad:
        raise ConfigurationError(f"initial data incompatible with the constraint: {bad}")


def _check_restart(model, data, state, opts, vf):
    """Restart conditions: xbar in Omega_0, Hessian band, max u = 0, R = 0."""
    lo, hi = hessian_bounds(model, data)
    pv = vf.evaluate(state.t0, state.xbar)
    lam = np.linalg.eigvalsh(pv.hess)
    problems = []
    if float(model.value(state.xbar, data.I0)) < -1e-8:
        problems.append("xbar left Omega_0")
    if lam.max() >= 0:
        problems.append(f"Hessian not negative definite (eigenvalues {lam})")
    elif lam.min() < lo - 1e-6 or lam.max() > hi + 1e-6:
        # the band is only guaranteed when the declared constants are valid
        warnings.warn(f"Hessian eigenvalues {lam} at t={state.t0:.6g} outside the band "
                      f"[{lo}, {hi}] implied by the declared constants", RuntimeWarning,
                      stacklevel=3)
    if abs(pv.value) > opts.restart_tol:
        problems.append(f"u(t, xbar) = {pv.value:.3e}")
    if np.abs(pv.grad).max() > opts.restart_tol:
        problems.append(f"grad u(t, xbar) = {pv.grad}")
    if abs(float(model.value(state.xbar, state.I))) > 1e-10:
        problems.append("R(xbar, I) != 0")
    if problems:
        raise InternalConsistencyError(f"restart at t={state.t0:.6g} violates: " + "; ".join(problems))


def solve_constrained(model, data, T, options=None, box=None):
    """Solve the constrained problem on ``[0, T]``.

    Parameters
    ----------
    model : GrowthModel
    data : InitialData
        Must satisfy ``max u0 = u0(xbar0) = 0`` and ``R(xbar0, I0) = 0``.
    T : float
    options : SolverOptions, optional
    box : list of [low, high], optional
        Needed for custom growth models when ``options.delta`` is not given.

    Returns
    -------
    ConstrainedSolution

    Raises
    ------
    ConfigurationError
        Incompatible initial data or empty admissible regions.
    SolverError
        An interval still failed after ``max_halvings`` halvings.
    InternalConsistencyError
        A restart state violated its guaranteed properties.
    """
    opts = options or SolverOptions()
    if not T > 0:
        raise ConfigurationError("T must be positive")
    if model.dim != data.dim:
        raise ConfigurationError("model and initial data dimensions differ")
    _check_initial(model, data)
    try:
        geometry = admissible_geometry(model, data, box)
    except ConfigurationError:
        if opts.delta is None:
            raise
        geometry = None
    delta = opts.delta if opts.delta is not None else min(opts.safety * geometry.mu, T)
    if not delta > 0:
        raise ConfigurationError("interval length must be positive")
    state = RestartState.initial(data)
    segments, traces = [], []
    halvings, consecutive, index = 0, 0, 0
    while state.t0 < T * (1 - 1e-12):
        dl = min(delta, T - state.t0)
        if T - state.t0 - dl < 1e-9 * T:
            dl = T - state.t0
        try:
            seg, trace = fixed_point_iterate(
                model, data, state, dl, opts.tol, opts.max_iter, n_nodes=opts.n_nodes,
                max_step=opts.max_step, el_tol=opts.el_tol, interval=index,
                geometry=geometry, strict=opts.strict)
        except (IntervalTooLongError, AdmissibilityError, DegeneracyError) as exc:
            halvings += 1
            consecutive += 1
            traces.append(IterationTrace(index, state.t0, dl, note=f"halved: {exc}"))
            log.info("interval %d of length %.4g failed (%s); halving", index, dl, exc)
            if consecutive > opts.max_halvings:
                raise SolverError(f"interval at t={state.t0} failed after "
                                  f"{opts.max_halvings} halvings: {exc}") from exc
            delta = dl / 2
            continue
        consecutive = 0
        segments.append(seg)
        traces.append(trace)
        if index == 0:
            # the slope at t = 0 is only known once the first interval converged
            state = RestartState(0.0, state.xbar, state.I, state.hist_t, state.hist_I,
                                 seg.I_slope[:1].copy())
        state = seg.restart(state)
        index += 1
        if state.t0 < T * (1 - 1e-12):
            vf = ValueFunction(TimeDependentRate(model, state.hist_t, state.hist_I, state.hist_slope),
                               data, opts.n_nodes, opts.el_tol)
            _check_restart(model, data, state, opts, vf)
    return _glue(segments, model, data, opts, traces, halvings)


# ----------------------------------------------------------------- residuals


@dataclass
class ResidualReport:
    """Residuals of the identities the solution must satisfy.

    Scalars are sups over the time grid; the ``*_per_time`` arrays are aligned
    with ``sol.t``.
    """

    R: float
    grad: float
    value: float
    max_positive: float
    monotonicity_defect: float
    R_per_time: np.ndarray
    grad_per_time: np.ndarray
    value_per_time: np.ndarray

    def to_dict(self):
        return {
            "res_R": self.R,
            "res_grad": self.grad,
            "res_u_at_xbar": self.value,
            "res_max_positive_u": self.max_positive,
            "monotonicity_defect": self.monotonicity_defect,
        }

    @property
    def worst(self):
        return max(self.R, self.grad, self.value, self.max_positive, self.monotonicity_defect)


def default_sample_points(sol, n_times=5, n_space=9, seed=0):
    """Sample ``(t, x)`` pairs on a box of half-width ``3 max(|xbar0|, |peak|) + 3``."""
    model, data = sol.model, sol.data
    half = 3.0 * max(np.abs(data.xbar0).max(), np.abs(model.peak()).max()) + 3.0
    rng = np.random.default_rng(seed)
    times = np.linspace(sol.t[0], sol.t[-1], n_times)
    pts = []
    for t in times:
        for x in rng.uniform(-half, half, size=(n_space, sol.dim)):
            pts.append((float(t), x))
    return pts


def residuals(sol, model=None, data=None, sample_points=None, every=1):
    """Evaluate ``|R(xbar, I)|``, ``|grad u(t, xbar)|``, ``|u(t, xbar)|``,
    the positive part of ``u`` at ``sample_points`` and the monotonicity
    defect ``max(0, -(I_{i+1} - I_i))``.

    ``every`` subsamples the time grid for the trajectory-based residuals.
    """
    model = model or sol.model
    data = data or sol.data
    idx = np.arange(0, sol.t.size, every)
    if idx[-1] != sol.t.size - 1:
        idx = np.append(idx, sol.t.size - 1)
    res_R = np.abs(model.value(sol.xbar, sol.I))
    res_g = np.full(sol.t.size, np.nan)
    res_u = np.full(sol.t.size, np.nan)
    ev = sol.evaluator
    for i in idx:
        if hasattr(ev, "evaluate"):
            pv = ev.evaluate(sol.t[i], sol.xbar[i])
            val, grad = pv.value, pv.grad
        else:
            val, grad = ev.value(sol.t[i], sol.xbar[i]), ev.gradient(sol.t[i], sol.xbar[i])
        res_g[i] = float(np.abs(grad).max())
        res_u[i] = abs(val)
    pos = 0.0
    for t, x in sample_points or []:
        pos = max(pos, float(sol.value(t, x)))
    mono = float(max(0.0, -np.diff(sol.I).min())) if sol.I.size > 1 else 0.0
    return ResidualReport(
        float(res_R.max()), float(np.nanmax(res_g)), float(np.nanmax(res_u)), pos, mono,
        res_R, res_g, res_u)
