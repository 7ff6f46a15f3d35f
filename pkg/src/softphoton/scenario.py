"""Scenario files: a versioned YAML schema with strict validation.

Unknown keys are errors. Validation failures are raised as ``ScenarioError``
with the dotted path of the offending entry, e.g. ``run.dt: ...``.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _vec3(v):
    v = [float(x) for x in v]
    if len(v) != 3:
        raise ValueError("expected a 3-vector")
    return v


class ModelSpec(_Strict):
    e: float = 0.3
    m: float = Field(1.0, gt=0)
    r_phi: float = Field(1.0, gt=0)


class GridSpec(_Strict):
    n_radial: int = Field(128, ge=4)
    k_min: float = Field(1e-3, gt=0)
    k_max: float = 8.0
    n_polar: int = Field(8, ge=2)
    n_azimuth: int = Field(8, ge=2)
    k_knee: Optional[float] = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.k_max > self.k_min:
            raise ValueError("k_max must exceed k_min")
        if self.n_polar % 2 or self.n_azimuth % 2:
            raise ValueError("n_polar and n_azimuth must be even (antipodal symmetry)")
        return self


class PulseSpec(_Strict):
    k0: float = 2.0
    width: float = Field(0.6, gt=0)
    amplitude: float = 1.0
    polarization: list[float] = [1.0, 0.0, 0.0]
    direction: list[float] = [0.0, 0.0, 1.0]
    center: list[float] = [0.0, 0.0, 0.0]

    _v = field_validator("polarization", "direction", "center")(_vec3)

    @model_validator(mode="after")
    def _check(self):
        if not self.k0 > 3.0 * self.width:
            raise ValueError(f"k0={self.k0} must exceed 3*width={3 * self.width}")
        d = np.asarray(self.direction)
        p = np.asarray(self.polarization)
        if np.linalg.norm(d) == 0:
            raise ValueError("direction must be nonzero")
        d = d / np.linalg.norm(d)
        if np.linalg.norm(p - d * (p @ d)) < 1e-8:
            raise ValueError("polarization must not be parallel to direction")
        return self


class InitialSpec(_Strict):
    v0: list[float] = [0.0, 0.0, 0.0]
    q0: list[float] = [0.0, 0.0, 0.0]
    pulse: Optional[PulseSpec] = None

    _v = field_validator("v0", "q0")(_vec3)

    @field_validator("v0")
    @classmethod
    def _subluminal(cls, v):
        if not np.dot(v, v) < 1.0:
            raise ValueError(f"|v0| must be < 1, got {np.linalg.norm(v)}")
        return v


class RunSpec(_Strict):
    t_forward: float = Field(40.0, gt=0)
    t_backward: float = Field(40.0, ge=0)
    dt: float = Field(0.02, gt=0)
    sample_every: int = Field(100, ge=1)
    max_energy_drift: float = Field(1e-2, gt=0)
    fit_window: Optional[list[float]] = [10.0, 40.0]

    @model_validator(mode="after")
    def _check(self):
        for name in ("t_forward", "t_backward"):
            t = getattr(self, name)
            n = round(t / self.dt)
            if abs(n * self.dt - t) > 1e-9 * max(1.0, t):
                raise ValueError(f"{name}={t} is not a multiple of dt={self.dt}")
        if self.fit_window is not None:
            lo, hi = self.fit_window
            if not hi > lo > 0:
                raise ValueError("fit_window must satisfy 0 < lo < hi")
        return self


class SpatialTailSpec(_Strict):
    enabled: bool = True
    times: list[float] = [0.0, 10.0]
    radii: list[float] = [20.0, 25.0, 30.0]

    @field_validator("radii")
    @classmethod
    def _radii(cls, r):
        if len(r) < 2 or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("radii must be at least two increasing values")
        return r


class ObservableSpec(_Strict):
    ir_nodes: int = Field(4, ge=3)
    k_ir: Optional[float] = None
    coherent_directions: int = Field(16, ge=1)
    coherent_times: list[float] = [0.0, 7.3]
    spatial_tail: SpatialTailSpec = SpatialTailSpec()


class AcceptanceProfile(_Strict):
    """Thresholds applied to the measured report; measurement never uses these."""

    energy_drift: float = 1e-4
    momentum_drift: float = 1e-4
    ir_transverse_drift: float = 1e-3
    ir_longitudinal_drift: float = 1e-12
    soft_photon_relative: float = 5e-2
    transverse_formula_relative: float = 5e-2
    wave_operator_ratio: float = 0.25
    wave_operator_monotone_points: int = 4
    wave_operator_reference_time: float = 10.0
    tail_exponent: float = -1.5
    coherent_residual: float = 1e-10
    coherent_t_independence: float = 1e-10
    spatial_tail_relative: float = 5e-2
    flux_relative: float = 2e-2


class Scenario(_Strict):
    schema_version: int = SCHEMA_VERSION
    name: str = "scenario"
    seed: int = 0
    model: ModelSpec = ModelSpec()
    grid: GridSpec = GridSpec()
    initial: InitialSpec = InitialSpec()
    run: RunSpec = RunSpec()
    observables: ObservableSpec = ObservableSpec()
    acceptance: AcceptanceProfile = AcceptanceProfile()

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v} (expected {SCHEMA_VERSION})")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        if abs(self.model.e) > 0.5:
            warnings.warn(f"model.e={self.model.e}: couplings above 0.5 are outside the "
                          "range where velocity convergence is expected", RuntimeWarning,
                          stacklevel=2)
        if self.observables.k_ir is not None:
            from .spectral import build_kgrid

            g = self.grid
            nodes = build_kgrid(g.n_radial, g.k_min, g.k_max, 2, 2, g.k_knee).radial_nodes
            if np.count_nonzero(nodes < self.observables.k_ir) < self.observables.ir_nodes:
                raise ValueError(f"fewer than {self.observables.ir_nodes} radial nodes below "
                                 f"observables.k_ir={self.observables.k_ir}")
        st = self.observables.spatial_tail
        if st.enabled and max(st.times) > self.run.t_forward:
            raise ValueError("observables.spatial_tail.times must lie within run.t_forward")
        return self

    def config_hash(self) -> str:
        canon = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_scenario(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data or {})
    except ValidationError as err:
        raise ScenarioError(_format_errors(err)) from None


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ScenarioError(f"{path}: not valid YAML ({err})") from None
    if data is not None and not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return parse_scenario(data)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.model_dump(mode="json"), sort_keys=False)


def save_scenario(scenario: Scenario, path):
    Path(path).write_text(dump_scenario(scenario))


def reference_scenario() -> Scenario:
    """Rest charge hit by a transverse pulse, run forward and backward to |t| = 40."""
    return Scenario(name="reference-pulse", initial=InitialSpec(pulse=PulseSpec()))


def soliton_scenario(v0=(0.0, 0.0, 0.3), t_final: float = 20.0) -> Scenario:
    return Scenario(
        name="soliton",
        initial=InitialSpec(v0=list(v0)),
        run=RunSpec(t_forward=t_final, t_backward=0.0, fit_window=None),
        observables=ObservableSpec(spatial_tail=SpatialTailSpec(enabled=False)),
    )
