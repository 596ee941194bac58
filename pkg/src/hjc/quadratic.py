"""Closed forms for quadratic growth rate and quadratic initial datum.

With ``R(x, I) = -1/2 A1 x.x + b.x + I0 - I`` and ``u0 = -1/2 A0 x.x`` every
``u(t, .)`` is a concave quadratic, ``u(t, x) = -1/2 C(t)(x - xbar).(x - xbar)``,
whose curvature follows from the linearized extremal ``Gamma``:

    Gamma(s) = e^{sM} B(s) B(t)^{-1} e^{-tM},   M = sqrt(2 A1),
    B(s) = Id + e^{-2sM} K,                      K = (M + 2A0)^{-1}(M - 2A0),

    C(t) = Gamma(0)' A0 Gamma(0) + int_0^t (Gamma'(s)' Gamma'(s) / 2 + Gamma(s)' A1 Gamma(s)) ds.

``Gamma`` is evaluated in the algebraically equivalent form

    Gamma(s) = [e^{(t-s)M} + e^{-tM} K e^{-sM}]^{-1} + e^{-sM} K P,   P = [e^{tM} + e^{-tM} K]^{-1},

which involves no growing exponentials.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._spectral import composite_gauss, sym_sqrt
from .constrained import ConstrainedSolution
from .errors import ConfigurationError, DegeneracyError
from .model import GrowthModel, InitialData, as_matrix, as_vector

__all__ = [
    "QuadraticProblem",
    "QuadraticProfile",
    "gamma_differential",
    "gamma_derivative",
    "hessian_closed_form",
    "solve_quadratic_system",
    "asymptotic_limits",
]


@dataclass(frozen=True, eq=False)
class QuadraticProblem:
    """``A0``, ``A1`` symmetric positive definite, ``b`` a vector, ``I0`` a scalar."""

    A0: np.ndarray
    A1: np.ndarray
    b: np.ndarray
    I0: float

    def __post_init__(self):
        A1 = as_matrix(self.A1)
        d = A1.shape[0]
        A0 = as_matrix(self.A0, d)
        b = as_vector(self.b, d)
        for name, A in (("A0", A0), ("A1", A1)):
            if not np.allclose(A, A.T, rtol=0, atol=1e-12 * (1 + np.abs(A).max())):
                raise ConfigurationError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(A).min() <= 0:
                raise ConfigurationError(f"{name} must be positive definite")
        object.__setattr__(self, "A0", 0.5 * (A0 + A0.T))
        object.__setattr__(self, "A1", 0.5 * (A1 + A1.T))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "I0", float(self.I0))
        M = sym_sqrt(2.0 * self.A1)
        m, Q = np.linalg.eigh(M)
        K = np.linalg.solve(M + 2.0 * self.A0, M - 2.0 * self.A0)
        object.__setattr__(self, "_M", M)
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_Q", Q)
        # everything below lives in the eigenbasis of M
        object.__setattr__(self, "_K", Q.T @ K @ Q)
        object.__setattr__(self, "_A0r", Q.T @ self.A0 @ Q)
        object.__setattr__(self, "_A1r", Q.T @ self.A1 @ Q)

    @property
    def dim(self):
        return self.b.size

    def model(self, constants=None, I_max=None):
        """Matching :class:`GrowthModel` (``I_shift = I0``)."""
        return GrowthModel.quadratic(self.A1, self.b, self.I0, constants=constants, I_max=I_max)

    def initial_data(self, constants=None):
        """Matching :class:`InitialData`: ``u0 = -1/2 A0 x.x``, ``xbar0 = 0``."""
        return InitialData.quadratic(self.A0, self.I0, peak=np.zeros(self.dim), constants=constants)

    @classmethod
    def from_model(cls, model, data):
        """Recover the problem from a quadratic model/datum pair centred at 0."""
        if not (model.is_quadratic and data.is_quadratic):
            raise ConfigurationError("both the growth model and the initial datum must be quadratic")
        fam, u0 = model.family, data.family
        if np.abs(u0.peak).max() > 0 or u0.offset != 0 or abs(fam.I_shift - data.I0) > 1e-14:
            raise ConfigurationError("closed forms need u0 peaked at 0 with value 0 and I_shift = I0")
        return cls(u0.A0, fam.A1, fam.b, data.I0)

    # internal, rotated ---------------------------------------------------

    def _rotated(self, s, t):
        """``Gamma`` and ``Gamma'`` at times ``s`` (1-D array) in the eigenbasis."""
        m, K = self._m, self._K
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < -1e-14 * (1 + t)) or np.any(s > t * (1 + 1e-14) + 1e-300):
            raise ConfigurationError("gamma requires 0 <= s <= t")
        emt = np.exp(-t * m)
        eye = np.eye(m.size)
        try:
            # [e^{tM} + e^{-tM}K]^{-1} = (Id + e^{-2tM}K)^{-1} e^{-tM}
            P = np.linalg.solve(eye + (emt * emt)[:, None] * K, np.diag(emt))
            ems = np.exp(-s[:, None] * m[None, :])
            edecay = np.exp(-(t - s)[:, None] * m[None, :])
            # [e^{(t-s)M} + e^{-tM}Ke^{-sM}]^{-1} = (Id + e^{-(t-s)M}e^{-tM}Ke^{-sM})^{-1} e^{-(t-s)M}
            inner = eye[None] + (edecay * emt[None, :])[:, :, None] * K[None] * ems[:, None, :]
            T1 = np.linalg.solve(inner, edecay[:, :, None] * eye[None])
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError("B(s) is singular") from exc
        T2 = ems[:, :, None] * (K @ P)[None]
        gamma = T1 + T2
        dgamma = m[None, :, None] * (T1 - T2)
        return gamma, dgamma

    def _unrotate(self, G):
        return self._Q @ G @ self._Q.T


def gamma_differential(prob, s, t):
    """``Gamma(s)`` for ``0 <= s <= t``: the derivative of the optimal path
    at time ``s`` with respect to its endpoint ``x`` at time ``t``."""
    G, _ = prob._rotated([s], t)
    return prob._unrotate(G[0])


def gamma_derivative(prob, s, t):
    """Time derivative ``d Gamma / ds``."""
    _, dG = prob._rotated([s], t)
    return prob._unrotate(dG[0])


def _C_rotated(prob, t, quad_nodes):
    G0, _ = prob._rotated([0.0], t)
    C = G0[0].T @ prob._A0r @ G0[0]
    if t == 0:
        return C
    m = prob._m
    # the integrand varies on the scale 1/max(m) and is negligible below t - 40/min(m)
    h = min(1.0, 1.0 / m.max())
    lo = max(0.0, t - 40.0 / m.min())
    n_panels = max(1, int(np.ceil((t - lo) / h)))
    breaks = np.concatenate([[0.0] if lo > 0 else [], np.linspace(lo, t, n_panels + 1)])
    s, w = composite_gauss(breaks, quad_nodes)
    G, dG = prob._rotated(s, t)
    integrand = 0.5 * np.einsum("nki,nkj->nij", dG, dG) \
        + np.einsum("nki,kl,nlj->nij", G, prob._A1r, G)
    C = C + np.einsum("n,nij->ij", w, integrand)
    return 0.5 * (C + C.T)


def hessian_closed_form(prob, t, quad_nodes=64):
    """``D^2 u(t, .) = -C(t)``, integrated by Gauss-Legendre panels of
    ``quad_nodes`` points each."""
    if t < 0:
        raise ConfigurationError("t must be nonnegative")
    return -prob._unrotate(_C_rotated(prob, float(t), quad_nodes))


def asymptotic_limits(prob):
    """Large-time limits of the maximizer, competition and Hessian."""
    xinf = np.linalg.solve(prob.A1, prob.b)
    return {
        "xbar_inf": xinf,
        "I_inf": float(prob.I0 + 0.5 * xinf @ prob.b),
        "hess_inf": -sym_sqrt(0.5 * prob.A1),
    }


class QuadraticProfile:
    """Exact evaluator ``u(t, x) = -1/2 C(t)(x - xbar(t)).(x - xbar(t))``.

    ``xbar(t)`` is interpolated from the integrated maximizer path.
    """

    def __init__(self, prob, solution_t, solution_xbar, solution_slope, quad_nodes=64):
        from scipy.interpolate import CubicHermiteSpline

        self.prob = prob
        self.quad_nodes = quad_nodes
        self._xbar = CubicHermiteSpline(solution_t, solution_xbar, solution_slope, axis=0)

    def C(self, t):
        return -hessian_closed_form(self.prob, t, self.quad_nodes)

    def xbar(self, t):
        return np.asarray(self._xbar(t), dtype=float)

    def value(self, t, x):
        y = as_vector(x, self.prob.dim) - self.xbar(t)
        return float(-0.5 * y @ self.C(t) @ y)

    def gradient(self, t, x):
        return -self.C(t) @ (as_vector(x, self.prob.dim) - self.xbar(t))

    def hessian(self, t, x):
        return -self.C(t)

    def argmax(self, t, x0=None):
        return self.xbar(t)


def solve_quadratic_system(prob, T, dt, quad_nodes=64):
    """Integrate ``xbar' = C(t)^{-1}(-A1 xbar + b)`` from ``xbar(0) = 0`` by
    classical RK4 and set ``I = I0 - 1/2 A1 xbar.xbar + b.xbar`` pointwise.

    Returns a :class:`ConstrainedSolution` whose evaluator is the exact
    quadratic profile.
    """
    if not (T > 0 and dt > 0):
        raise ConfigurationError("T and dt must be positive")
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    t = np.linspace(0.0, T, n + 1)
    h = T / n
    A1, b = prob.A1, prob.b
    Q = prob._Q
    cache = {}

    def C(s):
        key = float(s)
        if key not in cache:
            cache[key] = Q @ _C_rotated(prob, key, quad_nodes) @ Q.T
        return cache[key]

    def f(s, x):
        return np.linalg.solve(C(s), b - A1 @ x)

    X = np.zeros((n + 1, prob.dim))
    for i in range(n):
        s, x = t[i], X[i]
        k1 = f(s, x)
        k2 = f(s + h / 2, x + h / 2 * k1)
        k3 = f(s + h / 2, x + h / 2 * k2)
        k4 = f(s + h, x + h * k3)
        X[i + 1] = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    slopes = np.array([f(s, x) for s, x in zip(t, X)])
    I = prob.I0 - 0.5 * np.einsum("ni,ij,nj->n", X, A1, X) + X @ b
    I_slope = np.einsum("ni,ni->n", b - X @ A1, slopes)
    hess = np.array([-C(s) for s in t])
    model, data = prob.model(), prob.initial_data()
    profile = QuadraticProfile(prob, t, X, slopes, quad_nodes)
    return ConstrainedSolution(t, X, I, hess, slopes, I_slope, model, data, evaluator=profile)
