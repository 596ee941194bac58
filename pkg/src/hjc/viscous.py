"""Finite-difference simulator for the viscous selection-mutation model.

Density form:   n_t - eps Lap n = (n / eps) R(x, I_eps),   I_eps = int psi n dx.
Hopf-Cole form: u_t = eps Lap u + |grad u|^2 + R(x, I_eps),  n = exp(u / eps).

Both forms use explicit Euler steps on a uniform 1-d or 2-d tensor grid with
mirror (homogeneous Neumann) boundaries. The density is stored as
``l = log n``; a step applies the diffusion update ``n + dt eps Lap n`` in the
form ``l + log(1 + dt eps (sum_nb e^{l_nb - l} - 2d) / h^2)`` followed by the
exact reaction factor ``exp(dt R / eps)``, so positivity is structural.
"""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConfigurationError

__all__ = [
    "ViscousConfig",
    "ViscousState",
    "ViscousSeries",
    "DiagnosticsReport",
    "simulate_viscous",
    "simulate_sweep",
    "sweep_configs",
    "concentration_diagnostics",
    "subgrid_argmax",
    "trapezoid_weights",
]

FORMS = ("density", "hopf_cole")


@dataclass
class ViscousConfig:
    """Grid, time step and form of one viscous run.

    ``bounds`` holds one ``(low, high)`` pair per dimension and ``h`` is the
    common spacing. ``dt=None`` picks ``cfl_fraction`` of ``h^2 / (2 d eps)``.
    ``psi`` is a callable ``(n, d) -> (n,)`` or ``None`` for ``psi = 1``.
    """

    epsilon: float
    bounds: list
    h: float
    dt: float | None = None
    psi: object = None
    form: str = "density"
    cfl_fraction: float = 0.9
    snapshot_every: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigurationError("epsilon must be positive")
        b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if b.shape[0] not in (1, 2):
            raise ConfigurationError("viscous grids are limited to d = 1 or 2")
        if np.any(b[:, 1] <= b[:, 0]):
            raise ConfigurationError("bounds must satisfy low < high")
        if not self.h > 0:
            raise ConfigurationError("h must be positive")
        self.bounds = b
        self.form = self.form.lower().replace("-", "_")
        if self.form not in FORMS:
            raise ConfigurationError(f"form must be one of {FORMS}")
        if self.dt is None:
            self.dt = self.cfl_fraction * self.cfl_limit
        elif not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.dt > self.cfl_limit * (1 + 1e-12):
            raise ConfigurationError(
                f"CFL violated: dt={self.dt:g} > h^2/(2 d eps) = {self.cfl_limit:g} "
                f"(eps={self.epsilon:g}, h={self.h:g})")

    @property
    def dim(self):
        return self.bounds.shape[0]

    @property
    def cfl_limit(self):
        return self.h ** 2 / (2 * self.dim * self.epsilon)

    def axes(self):
        out = []
        for lo, hi in self.bounds:
            n = int(round((hi - lo) / self.h))
            if abs(lo + n * self.h - hi) > 1e-9 * max(1.0, abs(hi)):
                raise ConfigurationError("bounds must be a whole number of cells of size h")
            out.append(lo + self.h * np.arange(n + 1))
        return out


@dataclass(frozen=True, eq=False)
class ViscousState:
    """Snapshot: ``field`` is ``n_eps`` (density form) or ``u_eps`` (Hopf-Cole)."""

    t: float
    field: np.ndarray
    I_eps: float


@dataclass(eq=False)
class ViscousSeries:
    """Per-step scalars plus optional field snapshots of one run."""

    config: ViscousConfig
    axes: list
    t: np.ndarray
    I_eps: np.ndarray
    argmax: np.ndarray
    max_u: np.ndarray
    final_u: np.ndarray
    snapshots: list = field(default_factory=list)

    @property
    def final(self):
        return ViscousState(float(self.t[-1]), self._field(self.final_u), float(self.I_eps[-1]))

    def _field(self, u):
        if self.config.form == "density":
            return np.exp(u / self.config.epsilon)
        return u

    def field_rows(self, state=None):
        """``(coords..., value)`` rows of a field dump (default: final state)."""
        state = self.final if state is None else state
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh] + [state.field.ravel()])


def trapezoid_weights(axes):
    """Tensor trapezoid weights on the grid given by ``axes``."""
    ws = []
    for a in axes:
        h = np.diff(a)
        w = np.zeros_like(a)
        w[:-1] += h / 2
        w[1:] += h / 2
        ws.append(w)
    W = ws[0]
    for w in ws[1:]:
        W = np.multiply.outer(W, w)
    return W


def _log_integral(l, logw):
    z = l + logw
    top = z.max()
    return top + np.log(np.exp(z - top).sum())


def _shifted(f, d):
    """Yield the ``-`` and ``+`` neighbour arrays along each axis (mirror ghosts)."""
    for ax in range(d):
        pad = [(0, 0)] * d
        pad[ax] = (1, 1)
        g = np.pad(f, pad, mode="reflect")
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        yield g[tuple(lo)], g[tuple(hi)]


def _hopf_cole_rhs(u, h, eps, d):
    lap = -2.0 * d * u
    grad_sq = np.zeros_like(u)
    for lo, hi in _shifted(u, d):
        lap += lo + hi
        grad_sq += ((hi - lo) / (2 * h)) ** 2
    return eps * lap / h ** 2 + grad_sq


def _log_diffusion(l, factor, d):
    """``log(n + factor Lap_h n) - log n`` in terms of ``l = log n``; ``factor = dt eps / h^2``."""
    acc = np.full_like(l, -2.0 * d)
    for lo, hi in _shifted(l, d):
        acc += np.exp(lo - l) + np.exp(hi - l)
    return np.log(np.maximum(1.0 + factor * acc, np.finfo(float).tiny))


def subgrid_argmax(u, axes):
    """Grid argmax refined per axis by the parabola through three neighbours."""
    idx = np.unravel_index(int(np.argmax(u)), u.shape)
    pos = []
    for ax, a in enumerate(axes):
        i = idx[ax]
        x = a[i]
        if 0 < i < a.size - 1:
            lo = list(idx)
            hi = list(idx)
            lo[ax] -= 1
            hi[ax] += 1
            fm, f0, fp = u[tuple(lo)], u[idx], u[tuple(hi)]
            denom = fm - 2 * f0 + fp
            if denom < 0:
                x = x + 0.5 * (a[1] - a[0]) * (fm - fp) / denom
        pos.append(x)
    return np.array(pos)


def _initial_u(data, X, eps, logw, psi_log):
    """``u_eps(0) = u0 + eps log c`` with ``c`` chosen so that ``I_eps(0) = I0``."""
    u0 = np.asarray(data.u0(X), dtype=float).reshape(psi_log.shape)
    l = u0 / eps
    log_mass = _log_integral(l + psi_log, logw)
    return u0 + eps * (np.log(data.I0) - log_mass)


def simulate_viscous(model, data, cfg, T):
    """Run the explicit scheme on ``[0, T]``.

    Returns
    -------
    ViscousSeries
        ``t``, ``I_eps``, ``argmax`` and ``max_u = max eps log n`` at every step.

    Raises
    ------
    BlowUpError
        ``I_eps`` left ``[0, 2 I_max]`` or became non-finite.
    """
    if model.dim != cfg.dim or data.dim != cfg.dim:
        raise ConfigurationError("grid dimension differs from the model dimension")
    if not T > 0:
        raise ConfigurationError("T must be positive")
    axes = cfg.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    shape = mesh[0].shape
    X = np.column_stack([m.ravel() for m in mesh])
    d, eps, h = cfg.dim, cfg.epsilon, cfg.h
    R0_edge = _edge_values(model.value(X, 0.0).reshape(shape))
    if R0_edge.max() > -10:
        warnings.warn(f"R(x, 0) reaches {R0_edge.max():.3g} on the boundary; the box "
                      "may be too small for the boundary to be irrelevant", RuntimeWarning,
                      stacklevel=2)
    if cfg.psi is None:
        psi_log = np.zeros(shape)
    else:
        psi = np.asarray(cfg.psi(X), dtype=float).reshape(shape)
        if np.any(psi <= 0) or not np.all(np.isfinite(psi)):
            raise ConfigurationError("psi must be positive on the grid")
        psi_log = np.log(psi)
    logw = np.log(trapezoid_weights(axes))

    n_steps = max(1, int(np.ceil(T / cfg.dt - 1e-9)))
    dt = T / n_steps
    u = _initial_u(data, X, eps, logw, psi_log)
    factor = dt * eps / h ** 2
    I_cap = 2 * model.I_max

    ts = np.empty(n_steps + 1)
    Is = np.empty(n_steps + 1)
    argmaxes = np.empty((n_steps + 1, d))
    maxu = np.empty(n_steps + 1)
    snaps = []

    def record(k, t, u):
        I = float(np.exp(_log_integral(u / eps + psi_log, logw)))
        if not np.isfinite(I) or I < 0 or I > I_cap:
            raise BlowUpError(f"I_eps = {I:.6g} left [0, {I_cap:g}] at t={t:.6g} "
                              f"(eps={eps:g}); enlarge the box or reduce eps")
        ts[k], Is[k] = t, I
        argmaxes[k] = subgrid_argmax(u, axes)
        maxu[k] = float(u.max())
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            snaps.append(ViscousState(t, np.exp(u / eps) if cfg.form == "density" else u.copy(), I))
        return I

    I = record(0, 0.0, u)
    for k in range(1, n_steps + 1):
        R = np.asarray(model.value(X, min(max(I, 0.0), model.I_max)), dtype=float).reshape(shape)
        if I > model.I_max:
            # the rate is only defined up to I_max; extend it linearly in I
            R = R + (I - model.I_max) * np.asarray(
                model.dR_dI(X, model.I_max), dtype=float).reshape(shape)
        if cfg.form == "density":
            l = u / eps
            l = l + _log_diffusion(l, factor, d) + dt * R / eps
            u = eps * l
        else:
            u = u + dt * (_hopf_cole_rhs(u, h, eps, d) + R)
        I = record(k, k * dt, u)
    return ViscousSeries(cfg, axes, ts, Is, argmaxes, maxu, u, snaps)


def _edge_values(f):
    parts = []
    for ax in range(f.ndim):
        parts.append(np.take(f, 0, axis=ax).ravel())
        parts.append(np.take(f, -1, axis=ax).ravel())
    return np.concatenate(parts)


def sweep_configs(epsilons, bounds, h, dt=None, **kwargs):
    """Configurations for an epsilon sweep sharing one time step.

    The default step is ``cfl_fraction`` times the tightest CFL limit, so the
    runs differ only in ``epsilon``.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ConfigurationError("epsilon list is empty")
    if dt is None:
        probe = [ViscousConfig(e, bounds, h, **kwargs) for e in eps]
        dt = min(c.dt for c in probe)
    return [ViscousConfig(e, bounds, h, dt=dt, **kwargs) for e in eps]


def simulate_sweep(model, data, configs, T, threads=None):
    """Run several configurations, concurrently up to ``threads`` (default
    ``HJC_THREADS`` or 1). Results keep the order of ``configs``."""
    if threads is None:
        threads = int(os.environ.get("HJC_THREADS", "1") or 1)
    threads = max(1, min(threads, len(configs)))
    if threads == 1:
        return [simulate_viscous(model, data, c, T) for c in configs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: simulate_viscous(model, data, c, T), configs))


@dataclass
class DiagnosticsReport:
    """Per-time comparison of a viscous run with a constrained solution."""

    epsilon: float
    t: np.ndarray
    argmax_error: np.ndarray
    I_error: np.ndarray
    rho_hat: np.ndarray
    rho: np.ndarray
    max_u: np.ndarray

    def final(self):
        return {
            "epsilon": self.epsilon,
            "t": float(self.t[-1]),
            "argmax_error": float(self.argmax_error[-1]),
            "I_error": float(self.I_error[-1]),
            "rho_hat": float(self.rho_hat[-1]),
            "rho": float(self.rho[-1]),
            "max_eps_log_n": float(self.max_u[-1]),
        }

    def rows(self):
        return np.column_stack([self.t, self.argmax_error, self.I_error, self.rho_hat,
                                self.rho, self.max_u])


def concentration_diagnostics(series, reference, data=None):
    """Compare ``series`` against ``reference`` (a constrained solution).

    ``rho = I / psi(xbar)`` and ``rho_hat = I_eps / psi(argmax)``.
    """
    cfg = series.config
    T_ref = float(reference.t[-1])
    if series.t[-1] > T_ref * (1 + 1e-9):
        raise ConfigurationError("reference does not cover the simulated horizon")
    t = series.t
    xbar = np.asarray(reference.xbar_at(t), dtype=float).reshape(t.size, -1)
    I = np.asarray(reference.I_at(t), dtype=float)
    if cfg.psi is None:
        psi_hat = psi_ref = np.ones(t.size)
    else:
        psi_hat = np.asarray(cfg.psi(series.argmax), dtype=float)
        psi_ref = np.asarray(cfg.psi(xbar), dtype=float)
    return DiagnosticsReport(
        cfg.epsilon, t,
        np.linalg.norm(series.argmax - xbar, axis=1),
        np.abs(series.I_eps - I),
        series.I_eps / psi_hat,
        I / psi_ref,
        series.max_u,
    )
