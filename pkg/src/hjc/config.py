"""JSON run configuration for the command-line front end."""
from __future__ import annotations

import dataclasses
import importlib
import math
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Discriminator, Field, Tag, field_validator

from .constrained import SolverOptions
from .errors import ConfigurationError
from .model import GrowthConstants, GrowthModel, InitialConstants, InitialData

__all__ = [
    "RunConfig",
    "canonical_config",
    "load_config",
    "build_model",
    "build_initial",
    "resolve_factory",
]

Matrix = Union[float, list[float], list[list[float]]]
Vector = Union[float, list[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


def _finite(v):
    if isinstance(v, (list, tuple)):
        for item in v:
            _finite(item)
    elif isinstance(v, float) and not math.isfinite(v):
        raise ValueError("must be finite")
    return v


class GrowthConstantsSpec(_Strict):
    K0_bar: float = Field(1.0, ge=0)
    K1_bar: float = Field(1.0, ge=0)
    K1_under: float = Field(1.0, ge=0)
    K2_bar: float = Field(1.0, ge=0)
    K2_under: float = Field(1.0, ge=0)
    K3: float = Field(0.0, ge=0)
    K4: float = Field(0.0, ge=0)


class InitialConstantsSpec(_Strict):
    L0_under: float = Field(1.0, ge=0)
    L0_bar: float = Field(1.0, ge=0)
    L1_under: float = Field(0.5, ge=0)
    L1_bar: float = Field(0.5, ge=0)
    L2: float = Field(1.0, ge=0)
    L3: float = Field(0.0, ge=0)


class QuadraticModelSpec(_Strict):
    family: Literal["quadratic"] = "quadratic"
    A1: Matrix
    b: Vector
    I_shift: float
    I_max: Optional[float] = Field(None, gt=0)
    constants: GrowthConstantsSpec = GrowthConstantsSpec()

    _check = field_validator("A1", "b", "I_shift")(_finite)


class CustomModelSpec(_Strict):
    family: Literal["custom"]
    factory: str = Field(description="'module:function' returning a GrowthModel")
    params: dict = {}
    constants: Optional[GrowthConstantsSpec] = None


class QuadraticInitialSpec(_Strict):
    family: Literal["quadratic"] = "quadratic"
    A0: Matrix
    I0: float = Field(gt=0)
    peak: Optional[Vector] = None
    offset: float = 0.0
    xbar0: Optional[Vector] = None
    constants: InitialConstantsSpec = InitialConstantsSpec()

    _check = field_validator("A0", "peak", "offset", "xbar0")(_finite)


class CustomInitialSpec(_Strict):
    family: Literal["custom"]
    factory: str = Field(description="'module:function' returning an InitialData")
    params: dict = {}
    constants: Optional[InitialConstantsSpec] = None


def _family(v):
    # "family" may be omitted and then means quadratic
    if isinstance(v, dict):
        return v.get("family", "quadratic")
    return getattr(v, "family", None)


ModelSpec = Annotated[
    Union[Annotated[QuadraticModelSpec, Tag("quadratic")], Annotated[CustomModelSpec, Tag("custom")]],
    Discriminator(_family),
]
InitialSpec = Annotated[
    Union[Annotated[QuadraticInitialSpec, Tag("quadratic")], Annotated[CustomInitialSpec, Tag("custom")]],
    Discriminator(_family),
]


class SolverSpec(_Strict):
    T: float = Field(5.0, gt=0)
    delta: Optional[float] = Field(None, gt=0)
    safety: float = Field(0.5, gt=0, lt=1)
    tol: float = Field(1e-9, gt=0)
    max_iter: int = Field(50, ge=1)
    n_nodes: int = Field(64, ge=4)
    max_step: float = Field(0.02, gt=0)
    max_halvings: int = Field(10, ge=0)
    strict: bool = False
    residual_every: int = Field(1, ge=1)

    def options(self):
        return SolverOptions(delta=self.delta, safety=self.safety, tol=self.tol,
                             max_iter=self.max_iter, n_nodes=self.n_nodes,
                             max_step=self.max_step, max_halvings=self.max_halvings,
                             strict=self.strict)


class ValidationSpec(_Strict):
    box: Optional[list[tuple[float, float]]] = None
    samples: int = Field(256, ge=1)


class OracleSpec(_Strict):
    dt: float = Field(0.01, gt=0)
    quad_nodes: int = Field(64, ge=2)
    tolerance: float = Field(1e-5, gt=0)


class ViscousSpec(_Strict):
    epsilons: list[float] = [0.1, 0.05]
    bounds: list[tuple[float, float]] = [(-3.0, 4.0)]
    h: float = Field(0.01, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    T: float = Field(1.0, gt=0)
    form: Literal["density", "hopf_cole"] = "density"
    cfl_fraction: float = Field(0.9, gt=0, le=1)
    psi: Optional[str] = Field(None, description="'module:function' mapping (n, d) points to weights")
    dump_every: int = Field(0, ge=0)

    @field_validator("epsilons")
    @classmethod
    def _eps(cls, v):
        if any(not (math.isfinite(e) and e > 0) for e in v):
            raise ValueError("every epsilon must be positive and finite")
        return v


class RunConfig(_Strict):
    """Complete description of a run; see docs/config.md."""

    model: ModelSpec
    initial: InitialSpec
    solver: SolverSpec = SolverSpec()
    validation: ValidationSpec = ValidationSpec()
    oracle: OracleSpec = OracleSpec()
    viscous: ViscousSpec = ViscousSpec()
    out_dir: str = "out"
    seed: int = 0


def canonical_config():
    """``A0 = 1, A1 = 2, b = 1, I0 = 1`` in one dimension with constants that
    pass every assumption check on the box ``[-2, 3]``."""
    return RunConfig(
        model=QuadraticModelSpec(A1=2.0, b=1.0, I_shift=1.0,
                                 constants=GrowthConstantsSpec(K0_bar=2.0)),
        initial=QuadraticInitialSpec(A0=1.0, I0=1.0, peak=0.0,
                                     constants=InitialConstantsSpec(L0_under=2.0, L0_bar=2.0)),
        validation=ValidationSpec(box=[(-2.0, 3.0)]),
    )


PRESETS = {"canonical": canonical_config}


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return RunConfig.model_validate_json(fh.read())


def resolve_factory(ref):
    """Import ``module:function``."""
    mod, sep, name = ref.partition(":")
    if not sep or not mod or not name:
        raise ConfigurationError(f"factory must look like 'module:function', got {ref!r}")
    try:
        return getattr(importlib.import_module(mod), name)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot import factory {ref!r}: {exc}") from exc


def build_model(cfg):
    spec = cfg.model
    if spec.family == "quadratic":
        return GrowthModel.quadratic(spec.A1, spec.b, spec.I_shift,
                                     constants=GrowthConstants(**spec.constants.model_dump()),
                                     I_max=spec.I_max)
    model = resolve_factory(spec.factory)(**spec.params)
    if not isinstance(model, GrowthModel):
        raise ConfigurationError(f"factory {spec.factory!r} did not return a GrowthModel")
    if spec.constants is not None:
        model = dataclasses.replace(model, constants=GrowthConstants(**spec.constants.model_dump()))
    return model


def build_initial(cfg):
    spec = cfg.initial
    if spec.family == "quadratic":
        return InitialData.quadratic(spec.A0, spec.I0, peak=spec.peak, offset=spec.offset,
                                     xbar0=spec.xbar0,
                                     constants=InitialConstants(**spec.constants.model_dump()))
    data = resolve_factory(spec.factory)(**spec.params)
    if not isinstance(data, InitialData):
        raise ConfigurationError(f"factory {spec.factory!r} did not return an InitialData")
    if spec.constants is not None:
        data = dataclasses.replace(data, constants=InitialConstants(**spec.constants.model_dump()))
    return data
