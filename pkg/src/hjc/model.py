"""Growth rates R(x, I), initial data u0, and checks of the standing assumptions.

Both families come in two flavours: a closed-form quadratic one whose
derivatives are exact, and a ``Custom`` one built from user callables.
Custom callables work on batches: ``x`` has shape ``(n, d)`` and ``I`` shape
``(n,)``; they return arrays of shape ``(n,)``, ``(n, d)`` or ``(n, d, d)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, DomainError, NonConcaveError

__all__ = [
    "GrowthConstants",
    "QuadraticRate",
    "CustomRate",
    "GrowthModel",
    "InitialConstants",
    "QuadraticU0",
    "CustomU0",
    "InitialData",
    "GrowthEvaluation",
    "AssumptionCheck",
    "AssumptionReport",
    "eval_growth",
    "validate_assumptions",
    "recenter_initial",
    "solve_I_from_x",
]


def as_matrix(a, d=None):
    """Coerce a scalar, vector of length 1 or nested list to a ``(d, d)`` array."""
    A = np.atleast_2d(np.asarray(a, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {A.shape}")
    if d is not None and A.shape[0] != d:
        raise ConfigurationError(f"expected a {d}x{d} matrix, got {A.shape}")
    return A


def as_vector(v, d=None):
    x = np.atleast_1d(np.asarray(v, dtype=float))
    if x.ndim != 1:
        raise ConfigurationError(f"expected a vector, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise ConfigurationError(f"expected a vector of length {d}, got {x.shape[0]}")
    return x


def _check_spd(A, name):
    if not np.allclose(A, A.T, atol=1e-12 * (1 + np.abs(A).max())):
        raise ConfigurationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(A).min() <= 0:
        raise ConfigurationError(f"{name} must be positive definite")


def _batch(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        if d == 1:
            x = x[..., None]
        else:
            raise DomainError(f"trait arrays must have trailing dimension {d}, got {x.shape}")
    lead = x.shape[:-1]
    return x.reshape(-1, d), lead


# --------------------------------------------------------------------------- R


@dataclass(frozen=True)
class GrowthConstants:
    """Constants of the growth-rate bounds (all nonnegative)."""

    K0_bar: float = 1.0
    K1_bar: float = 1.0
    K1_under: float = 1.0
    K2_bar: float = 1.0
    K2_under: float = 1.0
    K3: float = 0.0
    K4: float = 0.0

    def __post_init__(self):
        for name, val in vars(self).items():
            if not np.isfinite(val) or val < 0:
                raise ConfigurationError(f"constant {name} must be finite and >= 0, got {val}")


@dataclass(frozen=True, eq=False)
class QuadraticRate:
    """``R(x, I) = -A1 x.x / 2 + b.x + I_shift - I``."""

    A1: np.ndarray
    b: np.ndarray
    I_shift: float

    def value(self, x, I):
        return -0.5 * np.einsum("ni,ij,nj->n", x, self.A1, x) + x @ self.b + self.I_shift - I

    def grad_x(self, x, I):
        return -x @ self.A1 + self.b

    def hess_x(self, x, I):
        return np.broadcast_to(-self.A1, (x.shape[0],) + self.A1.shape).copy()

    def dR_dI(self, x, I):
        return -np.ones(x.shape[0])

    def d2_Ix(self, x, I):
        return np.zeros_like(x)

    def d3_Ixx(self, x, I):
        d = x.shape[1]
        return np.zeros((x.shape[0], d, d))

    def d3_x(self, x, I):
        d = x.shape[1]
        return np.zeros((x.shape[0], d, d, d))


@dataclass(frozen=True, eq=False)
class CustomRate:
    """Growth rate given by batched callables ``f(x, I)``.

    ``d2_Ix`` (shape ``(n, d)``), ``d3_Ixx`` (``(n, d, d)``) and ``d3_x``
    (``(n, d, d, d)``) are optional; when absent they are approximated by
    central differences of the lower derivatives and used only by
    :func:`validate_assumptions`.
    """

    value: Callable
    grad_x: Callable
    hess_x: Callable
    dR_dI: Callable
    d2_Ix: Callable | None = None
    d3_Ixx: Callable | None = None
    d3_x: Callable | None = None


@dataclass(frozen=True, eq=False)
class GrowthModel:
    """Growth rate together with its assumption constants.

    Use :meth:`quadratic` or :meth:`custom` rather than the raw constructor.
    ``origin`` is the point from which the quadratic-growth bounds are measured
    (the maximizer of ``R(., I_max)``).
    """

    family: QuadraticRate | CustomRate
    dim: int
    I_max: float
    constants: GrowthConstants = field(default_factory=GrowthConstants)
    origin: np.ndarray | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be a positive integer")
        if not (np.isfinite(self.I_max) and self.I_max > 0):
            raise ConfigurationError(f"I_max must be positive, got {self.I_max}")
        if self.origin is None:
            object.__setattr__(self, "origin", np.zeros(self.dim))

    @classmethod
    def quadratic(cls, A1, b, I_shift, constants=None, I_max=None):
        """Quadratic family; ``I_max`` defaults to ``I_shift + b.A1^{-1}b / 2``."""
        b = as_vector(b)
        A1 = as_matrix(A1, b.shape[0])
        _check_spd(A1, "A1")
        peak = np.linalg.solve(A1, b)
        if I_max is None:
            I_max = float(I_shift + 0.5 * b @ peak)
        fam = QuadraticRate(A1=A1, b=b, I_shift=float(I_shift))
        return cls(fam, b.shape[0], float(I_max), constants or GrowthConstants(), peak)

    @classmethod
    def custom(cls, value, grad_x, hess_x, dR_dI, *, dim, I_max, constants=None,
               origin=None, d2_Ix=None, d3_Ixx=None, d3_x=None):
        fam = CustomRate(value, grad_x, hess_x, dR_dI, d2_Ix, d3_Ixx, d3_x)
        origin = None if origin is None else as_vector(origin, dim)
        return cls(fam, int(dim), float(I_max), constants or GrowthConstants(), origin)

    @property
    def is_quadratic(self):
        return isinstance(self.family, QuadraticRate)

    def _call(self, name, x, I, tail):
        xb, lead = _batch(x, self.dim)
        Ib = np.broadcast_to(np.asarray(I, dtype=float), lead).reshape(-1)
        out = np.asarray(getattr(self.family, name)(xb, Ib), dtype=float)
        return out.reshape(lead + tail)

    def value(self, x, I):
        return self._call("value", x, I, ())

    def grad_x(self, x, I):
        return self._call("grad_x", x, I, (self.dim,))

    def hess_x(self, x, I):
        return self._call("hess_x", x, I, (self.dim, self.dim))

    def dR_dI(self, x, I):
        return self._call("dR_dI", x, I, ())

    def d2_Ix(self, x, I):
        if getattr(self.family, "d2_Ix", None) is not None:
            return self._call("d2_Ix", x, I, (self.dim,))
        return self._fd_in_I(self.grad_x, x, I)

    def d3_Ixx(self, x, I):
        if getattr(self.family, "d3_Ixx", None) is not None:
            return self._call("d3_Ixx", x, I, (self.dim, self.dim))
        return self._fd_in_I(self.hess_x, x, I)

    def d3_x(self, x, I):
        if getattr(self.family, "d3_x", None) is not None:
            return self._call("d3_x", x, I, (self.dim,) * 3)
        x = np.asarray(x, dtype=float)
        h = 1e-5 * (1.0 + np.abs(x).max())
        parts = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            parts.append((self.hess_x(x + e, I) - self.hess_x(x - e, I)) / (2 * h))
        return np.stack(parts, axis=-1)

    def _fd_in_I(self, fn, x, I):
        I = np.asarray(I, dtype=float)
        h = 1e-6 * (1.0 + self.I_max)
        lo = np.clip(I - h, 0.0, self.I_max)
        hi = np.clip(I + h, 0.0, self.I_max)
        span = hi - lo
        expand = (slice(None),) * np.ndim(span) + (None,) * (np.ndim(fn(x, lo)) - np.ndim(span))
        return (fn(x, hi) - fn(x, lo)) / np.asarray(span)[expand]

    def peak(self, I=None):
        """Maximizer of ``R(., I)`` (default ``I = I_max``)."""
        I = self.I_max if I is None else I
        if self.is_quadratic:
            return np.linalg.solve(self.family.A1, self.family.b)
        return _newton_argmax(lambda z: self.grad_x(z, I), lambda z: self.hess_x(z, I),
                              self.origin.copy())


# -------------------------------------------------------------------------- u0


@dataclass(frozen=True)
class InitialConstants:
    """Constants of the initial-datum bounds."""

    L0_under: float = 1.0
    L0_bar: float = 1.0
    L1_under: float = 0.5
    L1_bar: float = 0.5
    L2: float = 1.0
    L3: float = 0.0

    def __post_init__(self):
        for name, val in vars(self).items():
            if not np.isfinite(val) or val < 0:
                raise ConfigurationError(f"constant {name} must be finite and >= 0, got {val}")


@dataclass(frozen=True, eq=False)
class QuadraticU0:
    """``u0(x) = -A0 (x - peak).(x - peak) / 2 + offset``."""

    A0: np.ndarray
    peak: np.ndarray
    offset: float = 0.0

    def value(self, x):
        y = x - self.peak
        return -0.5 * np.einsum("ni,ij,nj->n", y, self.A0, y) + self.offset

    def grad(self, x):
        return -(x - self.peak) @ self.A0

    def hess(self, x):
        return np.broadcast_to(-self.A0, (x.shape[0],) + self.A0.shape).copy()

    def d3(self, x):
        d = x.shape[1]
        return np.zeros((x.shape[0], d, d, d))


@dataclass(frozen=True, eq=False)
class CustomU0:
    """Initial datum from batched callables; ``offset`` is added to ``value``."""

    value_fn: Callable
    grad_fn: Callable
    hess_fn: Callable
    d3_fn: Callable | None = None
    offset: float = 0.0

    def value(self, x):
        return np.asarray(self.value_fn(x), dtype=float) + self.offset

    def grad(self, x):
        return self.grad_fn(x)

    def hess(self, x):
        return self.hess_fn(x)

    def d3(self, x):
        if self.d3_fn is not None:
            return self.d3_fn(x)
        h = 1e-5 * (1.0 + np.abs(x).max())
        parts = []
        for k in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[k] = h
            parts.append((np.asarray(self.hess_fn(x + e)) - np.asarray(self.hess_fn(x - e))) / (2 * h))
        return np.stack(parts, axis=-1)


@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial datum ``u0``, competition level ``I0`` and maximizer ``xbar0``."""

    family: QuadraticU0 | CustomU0
    I0: float
    xbar0: np.ndarray
    constants: InitialConstants = field(default_factory=InitialConstants)

    def __post_init__(self):
        if not (np.isfinite(self.I0) and self.I0 > 0):
            raise ConfigurationError(f"I0 must be positive, got {self.I0}")
        object.__setattr__(self, "xbar0", as_vector(self.xbar0))

    @classmethod
    def quadratic(cls, A0, I0, peak=None, offset=0.0, xbar0=None, constants=None):
        A0 = as_matrix(A0)
        d = A0.shape[0]
        _check_spd(A0, "A0")
        peak = np.zeros(d) if peak is None else as_vector(peak, d)
        xbar0 = peak.copy() if xbar0 is None else as_vector(xbar0, d)
        return cls(QuadraticU0(A0, peak, float(offset)), float(I0), xbar0,
                   constants or InitialConstants())

    @classmethod
    def custom(cls, value, grad, hess, *, I0, xbar0, constants=None, d3=None):
        return cls(CustomU0(value, grad, hess, d3), float(I0), as_vector(xbar0),
                   constants or InitialConstants())

    @property
    def dim(self):
        return self.xbar0.shape[0]

    @property
    def is_quadratic(self):
        return isinstance(self.family, QuadraticU0)

    def _call(self, name, x, tail):
        xb, lead = _batch(x, self.dim)
        return np.asarray(getattr(self.family, name)(xb), dtype=float).reshape(lead + tail)

    def u0(self, x):
        return self._call("value", x, ())

    def grad(self, x):
        return self._call("grad", x, (self.dim,))

    def hess(self, x):
        return self._call("hess", x, (self.dim, self.dim))

    def d3(self, x):
        return self._call("d3", x, (self.dim,) * 3)


# ------------------------------------------------------------------ operations


class GrowthEvaluation(NamedTuple):
    value: float
    grad_x: np.ndarray
    hess_x: np.ndarray
    dR_dI: float


def _check_I(model, I):
    slack = 1e-12 * (1.0 + model.I_max)
    if not (-slack <= I <= model.I_max + slack):
        raise DomainError(f"I = {I} outside [0, I_max = {model.I_max}]")


def eval_growth(model, x, I):
    """Value and derivatives of ``R`` at a single trait ``x`` and level ``I``.

    Raises
    ------
    DomainError
        If ``I`` lies outside ``[0, model.I_max]``.
    """
    _check_I(model, I)
    x = as_vector(x, model.dim)
    return GrowthEvaluation(
        float(model.value(x, I)),
        model.grad_x(x, I),
        model.hess_x(x, I),
        float(model.dR_dI(x, I)),
    )


def solve_I_from_x(model, x):
    """Unique ``I`` in ``[0, I_max]`` with ``R(x, I) = 0``.

    Requires ``x`` admissible, i.e. ``R(x, 0) > 0 >= R(x, I_max)``; otherwise an
    :class:`~hjc.errors.AdmissibilityError` is raised.
    """
    from .errors import AdmissibilityError

    x = as_vector(x, model.dim)
    r0 = float(model.value(x, 0.0))
    rM = float(model.value(x, model.I_max))
    tol = 1e-12 * (1.0 + model.I_max)
    if not (r0 > 0.0 and rM <= tol):
        raise AdmissibilityError(
            f"trait {x} outside the admissible region: R(x,0)={r0:.3g}, R(x,I_max)={rM:.3g}")
    if model.is_quadratic:
        fam = model.family
        I = float(-0.5 * x @ fam.A1 @ x + fam.b @ x + fam.I_shift)
    elif rM >= 0.0:
        I = model.I_max
    else:
        I = brentq(lambda s: float(model.value(x, s)), 0.0, model.I_max, xtol=1e-15, rtol=1e-15)
        for _ in range(3):
            I -= float(model.value(x, I)) / float(model.dR_dI(x, I))
    return min(max(I, 0.0), model.I_max)


def _newton_argmax(grad, hess, x, max_iter=100, tol=1e-13):
    for _ in range(max_iter):
        g = np.atleast_1d(grad(x))
        H = np.atleast_2d(hess(x))
        if np.linalg.eigvalsh(0.5 * (H + H.T)).max() >= 0:
            raise NonConcaveError(f"Hessian not negative definite at {x}")
        step = np.linalg.solve(H, g)
        x = x - step
        if np.abs(step).max() <= tol * (1.0 + np.abs(x).max()):
            return x
    raise NonConcaveError("Newton search for the maximizer did not converge in "
                          f"{max_iter} iterations", residual=float(np.abs(g).max()))


def recenter_initial(data, model=None, *, match_I0=False):
    """Shift ``u0`` so that its maximum is exactly 0 and locate ``xbar0``.

    With ``match_I0=True`` the competition level is also reset to the root of
    ``R(xbar0, I) = 0`` (requires ``model``).
    """
    fam = data.family
    if isinstance(fam, QuadraticU0):
        xbar = fam.peak.copy()
        new = replace(fam, offset=0.0)
    else:
        g = lambda z: data.grad(z)
        h = lambda z: data.hess(z)
        xbar = _newton_argmax(g, h, data.xbar0.copy())
        peak_value = float(fam.value(xbar[None, :])[0])
        new = replace(fam, offset=fam.offset - peak_value)
    I0 = data.I0
    if match_I0:
        if model is None:
            raise ConfigurationError("match_I0 requires the growth model")
        I0 = solve_I_from_x(model, xbar)
    return replace(data, family=new, xbar0=xbar, I0=I0)


# ----------------------------------------------------------- assumption checks


@dataclass(frozen=True)
class AssumptionCheck:
    """Outcome of one assumption.

    ``margin`` is the worst slack: nonnegative when the inequality holds,
    negative by the amount of the worst violation otherwise.
    """

    name: str
    passed: bool
    margin: float
    location: tuple | None = None
    note: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "margin": float(self.margin),
            "location": None if self.location is None else [float(v) for v in self.location],
            "note": self.note,
        }


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def __str__(self):
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"{flag}  {c.name:<10} margin={c.margin + 0.0: .3e}  {c.note}".rstrip())
        lines.append("all assumptions hold" if self.passed else
                     f"{len(self.failures)} assumption(s) violated")
        return "\n".join(lines)


_ATOL = 1e-10


def _worst(name, slack, points, note=""):
    """Build a check from a slack array aligned with ``points`` (rows)."""
    slack = np.asarray(slack, dtype=float).ravel()
    k = int(np.nanargmin(slack)) if slack.size else 0
    margin = float(slack[k]) if slack.size else float("inf")
    loc = None if points is None else tuple(np.atleast_1d(points[k]))
    return AssumptionCheck(name, bool(margin >= -_ATOL), margin, loc, note)


def _exact(name, slack, note=""):
    slack = float(slack)
    return AssumptionCheck(name, bool(slack >= -_ATOL), slack, None, note)


def _sample_box(box, samples, rng, extra):
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] < box[:, 0]):
        raise ConfigurationError("box must be a list of [low, high] pairs")
    lo, hi = box[:, 0], box[:, 1]
    corners = np.array(list(itertools.product(*box)))
    pts = [corners, 0.5 * (lo + hi)[None, :], lo + (hi - lo) * rng.random((samples, box.shape[0]))]
    for p in extra:
        if np.all(p >= lo) and np.all(p <= hi):
            pts.append(p[None, :])
    return np.vstack(pts)


def validate_assumptions(model, data, box, samples=256, seed=0, n_levels=5):
    """Check every standing assumption on R, u0 and I0.

    Matrix inequalities of the quadratic families are checked exactly through
    eigenvalues. Pointwise bounds are checked at the corners, the centre and
    ``samples`` uniform random points of ``box``, and at ``n_levels`` values of
    ``I`` spread over ``[0, I_max]``. Growth bounds are measured from
    ``model.origin``.
    """
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    if model.dim != data.dim:
        raise ConfigurationError(f"model has d={model.dim} but initial data has d={data.dim}")
    rng = np.random.default_rng(seed)
    o = model.origin
    X = _sample_box(box, samples, rng, [o, data.xbar0])
    levels = np.linspace(0.0, model.I_max, max(2, n_levels))
    XI = np.repeat(X, len(levels), axis=0)
    II = np.tile(levels, len(X))
    P = np.column_stack([XI, II])
    K, L = model.constants, data.constants
    r2 = np.sum((XI - o) ** 2, axis=1)
    quad_R = model.is_quadratic
    quad_u = data.is_quadratic
    checks = []

    # max_x R(x, I_max) = 0
    try:
        xs = model.peak()
        rmax = float(model.value(xs, model.I_max))
        note = (f"maximizer {np.round(xs, 12).tolist()}; origin condition "
                f"{'holds' if np.allclose(xs, 0) else 'not met (informative only)'}")
        checks.append(AssumptionCheck("asrmax", abs(rmax) <= 1e-10 * (1 + model.I_max),
                                      -abs(rmax), tuple(xs), note))
    except NonConcaveError as exc:
        checks.append(AssumptionCheck("asrmax", False, float("-inf"), None, str(exc)))

    R = model.value(XI, II)
    lower = R + K.K1_under * r2
    upper = K.K0_bar - K.K1_bar * r2 - R
    checks.append(_worst("asr", np.minimum(lower, upper), P))

    if quad_R:
        lam = np.linalg.eigvalsh(-model.family.A1)
        slack = min(lam.min() + 2 * K.K1_under, -2 * K.K1_bar - lam.max())
        if K.K1_bar <= 0:
            slack = min(slack, -abs(slack) - 1.0)
        checks.append(_exact("asrD2", slack, "exact eigenvalue check"))
        checks.append(_exact("asrDi", min(-1.0 + K.K2_under, -K.K2_bar + 1.0), "exact"))
        checks.append(_exact("asr23", K.K3, "exact"))
        checks.append(_exact("asRD3", K.K4, "exact"))
    else:
        lam = np.linalg.eigvalsh(model.hess_x(XI, II))
        slack = np.minimum(lam[:, 0] + 2 * K.K1_under, -2 * K.K1_bar - lam[:, -1])
        checks.append(_worst("asrD2", slack, P))
        dI = model.dR_dI(XI, II)
        checks.append(_worst("asrDi", np.minimum(dI + K.K2_under, -K.K2_bar - dI), P))
        mixed = np.abs(model.d2_Ix(XI, II))[:, :, None] + np.abs(model.d3_Ixx(XI, II))
        checks.append(_worst("asr23", K.K3 - mixed.reshape(len(P), -1).max(axis=1), P))
        d3 = np.abs(model.d3_x(XI, II)).reshape(len(P), -1).max(axis=1)
        checks.append(_worst("asRD3", K.K4 - d3, P))

    u = data.u0(X)
    ru = np.sum((X - o) ** 2, axis=1)
    lower = u + L.L0_under + L.L1_under * ru
    upper = L.L0_bar - L.L1_bar * ru - u
    checks.append(_worst("asu", np.minimum(lower, upper), X))

    if quad_u:
        lam = np.linalg.eigvalsh(-data.family.A0)
        checks.append(_exact("asuD2", min(lam.min() + 2 * L.L1_under, -2 * L.L1_bar - lam.max()),
                             "exact eigenvalue check"))
        checks.append(_exact("asuD3", L.L3, "exact"))
    else:
        lam = np.linalg.eigvalsh(data.hess(X))
        checks.append(_worst("asuD2", np.minimum(lam[:, 0] + 2 * L.L1_under,
                                                 -2 * L.L1_bar - lam[:, -1]), X))
        d3 = np.abs(data.d3(X)).reshape(len(X), -1).max(axis=1)
        checks.append(_worst("asuD3", L.L3 - d3, X))

    gnorm = np.linalg.norm(data.grad(X), axis=1)
    checks.append(_worst("asuD1", L.L2 * (1.0 + np.sqrt(ru)) - gnorm, X))

    x0 = data.xbar0
    defects = {
        "u0(xbar0)": abs(float(data.u0(x0))),
        "grad u0(xbar0)": float(np.abs(data.grad(x0)).max()),
        "R(xbar0, I0)": abs(float(model.value(x0, data.I0))),
    }
    worst_key = max(defects, key=defects.get)
    worst = defects[worst_key]
    checks.append(AssumptionCheck("as:u0-I0", worst <= 1e-10, -worst, tuple(x0),
                                  f"largest defect {worst_key} = {worst:.3g}"))
    return AssumptionReport(tuple(checks))
