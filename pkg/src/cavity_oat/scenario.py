"""Declarative scenario schema.

A scenario is a strict JSON document (unknown keys are rejected). Times are
in units of ``1/U`` unless the ``physical`` section rescales couplings.
Quantities naturally expressed through the crossover time scales can be
written as ``{"multiple": x, "of": "tau_a" | "tau_b"}``: a time becomes
``x * tau`` and a rate (``kappa``) becomes ``x / tau``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .metrology import crossover_times
from .model import ModelParams, PhotonInput

ENGINES = ("closed_form", "exact_sum", "closed_form_approx", "lindblad_blocks", "lindblad_dense", "oat_baseline")
OBSERVABLES = ("qfi_eigen", "qfi_variance", "xi2", "n_mean", "purity")
STATE_ENGINES = ("closed_form", "lindblad_blocks", "lindblad_dense", "oat_baseline")
SWEEP_FIELDS = ("kappa", "eta", "W0", "U", "delta_c", "J", "N", "n_bar")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TauMultiple(_Strict):
    multiple: float
    of: Literal["tau_a", "tau_b"]


Scalar = Union[float, TauMultiple]


class ParamsConfig(_Strict):
    N: int = Field(ge=1)
    U: float = 1.0
    W0: float = 1.0
    delta_c: float = 1.0
    eta: float = 0.0
    kappa: Scalar = 0.0
    J: float = 0.0
    epsilon: float = 0.0


class PhotonConfig(_Strict):
    kind: Literal["vacuum", "coherent", "fock"] = "vacuum"
    alpha: float | tuple[float, float] | None = None
    n_bar: float | None = Field(default=None, ge=0)
    n: int | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.kind == "coherent":
            if (self.alpha is None) == (self.n_bar is None):
                raise ValueError("coherent input needs exactly one of 'alpha' or 'n_bar'")
        elif self.alpha is not None or self.n_bar is not None:
            raise ValueError(f"'{self.kind}' input takes no 'alpha'/'n_bar'")
        if self.kind == "fock" and self.n is None:
            raise ValueError("fock input needs 'n'")
        if self.kind != "fock" and self.n is not None:
            raise ValueError("'n' is only valid for a fock input")
        return self

    def to_input(self, n_bar_override: float | None = None) -> PhotonInput:
        if self.kind == "vacuum":
            return PhotonInput.vacuum()
        if self.kind == "fock":
            return PhotonInput.fock(self.n)
        if n_bar_override is not None:
            return PhotonInput.coherent(math.sqrt(n_bar_override))
        if self.n_bar is not None:
            return PhotonInput.coherent(math.sqrt(self.n_bar))
        a = self.alpha
        return PhotonInput.coherent(complex(a[0], a[1]) if isinstance(a, tuple) else complex(a))


class TimeGrid(_Strict):
    t_start: Scalar = 0.0
    t_end: Scalar
    points: int = Field(ge=1)


class IntegratorSection(_Strict):
    dt: float | None = Field(default=None, gt=0)
    safety: float = Field(default=0.02, gt=0)
    cutoff_tolerance: float = Field(default=1e-8, gt=0)
    hermitize_every: int = Field(default=50, ge=1)
    frame: Literal["fock", "displaced"] = "fock"
    workers: int = Field(default=1, ge=1)
    n_max: int | None = Field(default=None, ge=1)


class HusimiSection(_Strict):
    times: list[Scalar]
    engines: list[Literal["closed_form", "oat_baseline", "lindblad_blocks", "lindblad_dense"]] = ["closed_form"]
    n_theta: int = Field(default=128, ge=2)
    n_phi: int = Field(default=256, ge=2)


class SweepSection(_Strict):
    field: Literal[SWEEP_FIELDS]  # type: ignore[valid-type]
    values: list[Scalar] = Field(min_length=1)


class TauReference(_Strict):
    n_bar: float | None = Field(default=None, gt=0)
    eta: float | None = None


class PhysicalSection(_Strict):
    Omega_0_kHz: float = Field(gt=0)
    Delta_A_kHz: float
    R_0_a0: float = Field(gt=0)
    m_atom_u: float = Field(gt=0)
    a_s_a0: float = Field(gt=0)
    wavelength_nm: float = Field(default=780.0, gt=0)
    sigma_um: float = Field(default=50.0, gt=0)
    L_mm: float = Field(default=10.0, gt=0)
    l_H_nm: float = Field(default=20.0, gt=0)
    well_sep_um: float = Field(default=1.0, gt=0)
    well_width_nm: float = Field(default=50.0, gt=0)
    derive_w0: bool = False

    @field_validator("Delta_A_kHz")
    @classmethod
    def _nonzero(cls, v):
        if v == 0:
            raise ValueError("Delta_A_kHz must be nonzero")
        return v


Op = Literal["<", "<=", ">", ">=", "between"]
Reference = Literal["N", "N^2", "N^2/2", "N^2/4", "N^2/2+N/2"]


class RefValue(_Strict):
    multiple: float = 1.0
    of: Reference


Bound = Union[float, RefValue]


class ValueAssertion(_Strict):
    kind: Literal["value"]
    column: str
    t: Scalar
    op: Op
    value: Bound | tuple[Bound, Bound]
    sweep_index: int | None = None


class MaxAssertion(_Strict):
    kind: Literal["max"]
    column: str
    op: Op
    value: Bound | tuple[Bound, Bound]
    t_max: Scalar | None = None
    sweep_index: int | None = None


class CompareAssertion(_Strict):
    kind: Literal["compare"]
    column: str
    t: Scalar
    left_sweep: int
    op: Literal["<", "<=", ">", ">="]
    right_sweep: int


class RelDiffAssertion(_Strict):
    kind: Literal["relative_difference"]
    columns: tuple[str, str]
    t_range: tuple[Scalar, Scalar]
    op: Literal["<", "<="]
    value: float
    sweep_index: int | None = None


class CrossingAssertion(_Strict):
    kind: Literal["crossing"]
    column: str
    level: Bound
    within: tuple[Scalar, Scalar]
    sweep_index: int | None = None


class HusimiAssertion(_Strict):
    kind: Literal["husimi"]
    metric: Literal["circular_variance_phi", "integral"]
    t: Scalar
    left: str
    op: Literal["<", "<=", ">", ">="]
    right: str | float


class PhysicalAssertion(_Strict):
    kind: Literal["physical"]
    quantity: Literal["u0_over_g", "overlap_factor", "w0_over_u"]
    op: Op
    value: float | tuple[float, float]


Assertion = Annotated[
    Union[ValueAssertion, MaxAssertion, CompareAssertion, RelDiffAssertion, CrossingAssertion,
          HusimiAssertion, PhysicalAssertion],
    Field(discriminator="kind"),
]


class Scenario(_Strict):
    """Validated scenario. See ``docs/schema.md`` for the field reference."""

    name: str
    description: str = ""
    params: ParamsConfig
    photon_input: PhotonConfig = PhotonConfig()
    time_grid: TimeGrid
    engines: list[Literal[ENGINES]] = Field(min_length=1)  # type: ignore[valid-type]
    observables: list[Literal[OBSERVABLES]] = []  # type: ignore[valid-type]
    husimi: HusimiSection | None = None
    sweep: SweepSection | None = None
    integrator: IntegratorSection = IntegratorSection()
    physical: PhysicalSection | None = None
    tau_reference: TauReference = TauReference()
    assertions: list[Assertion] = []

    @model_validator(mode="after")
    def _compatibility(self):
        check_compatibility(self)
        return self

    # -- resolution helpers -------------------------------------------------

    def base_params(self) -> ModelParams:
        """Model parameters before any sweep, with ``kappa`` resolved."""
        base = self._unswept_params()
        return base.with_(kappa=self.resolve(self.params.kappa, rate=True, params=base))

    def taus(self, params: ModelParams | None = None, n_bar: float | None = None):
        params = params or self._unswept_params()
        if n_bar is None:
            n_bar = self.tau_reference.n_bar
        if n_bar is None and self.photon_input.kind == "coherent":
            n_bar = self.photon_input.to_input().mean_photons
        eta = self.tau_reference.eta if self.tau_reference.eta is not None else params.eta
        return crossover_times(params.with_(eta=eta), n_bar=n_bar)

    def _unswept_params(self) -> ModelParams:
        p = self.params
        W0 = p.W0
        if self.physical is not None and self.physical.derive_w0:
            W0 = derived_w0_over_u(self.physical) * p.U
        return ModelParams(N=p.N, U=p.U, W0=W0, delta_c=p.delta_c, eta=p.eta, kappa=0.0, J=p.J, epsilon=p.epsilon)

    def resolve(self, value, *, rate: bool = False, params: ModelParams | None = None) -> float:
        if isinstance(value, TauMultiple):
            taus = self.taus(params)
            tau = getattr(taus, value.of)
            if not math.isfinite(tau):
                raise ConfigError(f"{value.of} is undefined for this scenario (needs W0 != 0 and "
                                  f"{'n_bar > 0' if value.of == 'tau_a' else 'eta != 0'})")
            return value.multiple / tau if rate else value.multiple * tau
        return float(value)

    def times(self) -> np.ndarray:
        g = self.time_grid
        t0, t1 = self.resolve(g.t_start), self.resolve(g.t_end)
        if t1 < t0 or t0 < 0:
            raise ConfigError(f"time_grid must satisfy 0 <= t_start <= t_end, got {t0}, {t1}")
        return np.linspace(t0, t1, g.points)

    def sweep_points(self) -> list[tuple[ModelParams, PhotonInput, float | None]]:
        """``(params, photon_input, raw sweep value)`` for every sweep entry."""
        base = self.base_params()
        photon = self.photon_input.to_input()
        if self.sweep is None:
            return [(base, photon, None)]
        out = []
        f = self.sweep.field
        for v in self.sweep.values:
            if f == "n_bar":
                if self.photon_input.kind != "coherent":
                    raise ConfigError("sweep over n_bar needs a coherent photon input")
                val = self.resolve(v)
                out.append((base, self.photon_input.to_input(val), val))
            elif f == "N":
                if isinstance(v, TauMultiple) or float(v) != int(v):
                    raise ConfigError("N sweep values must be integers")
                out.append((base.with_(N=int(v)), photon, int(v)))
            else:
                val = self.resolve(v, rate=(f == "kappa"), params=base)
                out.append((base.with_(**{f: val}), photon, val))
        return out


def derived_w0_over_u(section: PhysicalSection) -> float:
    from .physical import ExperimentalInputs, two_mode_couplings

    inputs = ExperimentalInputs.from_lab_units(**section.model_dump(exclude={"derive_w0"}))
    return two_mode_couplings(inputs).w0_over_u


def _closed_form_ok(params: ModelParams, photon: PhotonConfig) -> str | None:
    if params.J != 0:
        return "requires J = 0"
    if params.kappa != 0:
        return "requires kappa = 0"
    if params.eta == 0 and photon.kind in ("coherent", "vacuum"):
        return None
    if params.eta != 0 and photon.kind == "vacuum":
        return None
    return "supports only (eta = 0, coherent/vacuum input) or (eta != 0, vacuum input)"


def check_compatibility(s: Scenario) -> None:
    """Raise ``ValueError`` for any engine/feature combination that cannot run."""
    points = s.sweep_points() if s.sweep is not None else [(s.base_params(), None, None)]
    for params, _, value in points:
        where = "" if value is None else f" (sweep {s.sweep.field}={value})"
        for eng in s.engines:
            if eng in ("closed_form", "exact_sum", "closed_form_approx"):
                why = _closed_form_ok(params, s.photon_input)
                if why:
                    raise ValueError(f"engine '{eng}' {why}{where}")
            if eng == "closed_form_approx":
                taus = s.taus(params)
                tau = taus.tau_a if params.eta == 0 else taus.tau_b
                if not math.isfinite(tau):
                    raise ValueError(f"engine 'closed_form_approx' needs a finite crossover time{where}")
            if eng == "lindblad_blocks" and params.J != 0:
                raise ValueError(
                    f"engine 'lindblad_blocks' requires J = 0 (BlockFormInvalid); use 'lindblad_dense'{where}")
            if eng == "lindblad_dense" and s.integrator.n_max is not None:
                dim = (params.N + 1) * (s.integrator.n_max + 1)
                if dim > 4096:
                    raise ValueError(f"engine 'lindblad_dense' dimension {dim} exceeds 4096{where}")
    if s.husimi is not None:
        for eng in s.husimi.engines:
            if eng == "closed_form":
                for params, _, _ in points:
                    why = _closed_form_ok(params, s.photon_input)
                    if why:
                        raise ValueError(f"husimi engine 'closed_form' {why}")
    state_engines = [e for e in s.engines if e in STATE_ENGINES]
    if s.observables and not state_engines:
        raise ValueError("observables need at least one state engine: " + ", ".join(STATE_ENGINES))
    for a in s.assertions:
        if a.kind in ("compare",):
            n = len(s.sweep.values) if s.sweep else 1
            if not (0 <= a.left_sweep < n and 0 <= a.right_sweep < n):
                raise ValueError(f"compare assertion sweep index out of range (have {n} sweep values)")
    s.times()


def _format_error(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def scenario_from_dict(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None
    except ConfigError:
        raise
    except ValueError as exc:  # pragma: no cover - pydantic wraps these
        raise ConfigError(str(exc)) from None


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if isinstance(node, list):
                node = node[int(p)]
            else:
                node = node.setdefault(p, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return data


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def parse_scenario(path, overrides: list[str] | None = None) -> Scenario:
    """Load, override and validate a JSON scenario file."""
    return scenario_from_dict(apply_overrides(load_config(path), overrides or []))
