"""Scenario execution, output writing and embedded assertions."""

from __future__ import annotations

import hashlib
import json
import math
import operator
import subprocess
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import evolve_closed_form, oat_state, spectral_coefficients
from .errors import CavityOATError, ConfigError, DepolarizedState, EngineError
from .husimi import HusimiMap, SphereGrid, husimi_q
from .lindblad import (
    IntegratorConfig,
    choose_fock_cutoff,
    evolve_blocks,
    evolve_dense,
    initial_block_state,
    initial_dense_state,
    partial_trace_photons,
    photon_observables,
)
from .metrology import (
    RegimeWarning,
    qfi_closed_form_no_pump,
    qfi_closed_form_pumped,
    qfi_eigen,
    qfi_exact_sum,
    qfi_variance,
    spin_squeezing_xi2,
)
from .model import ModelParams, PhotonInput
from .scenario import (
    STATE_ENGINES,
    CompareAssertion,
    CrossingAssertion,
    HusimiAssertion,
    MaxAssertion,
    PhysicalAssertion,
    RefValue,
    RelDiffAssertion,
    Scenario,
    ValueAssertion,
)
from .spin import AtomicDensityMatrix, purity

T_MATCH_REL = 1e-9


@dataclass
class OutputRecord:
    """One time point of one sweep value."""

    t: float
    values: dict[str, float]
    warnings: tuple[str, ...] = ()


@dataclass
class SweepResult:
    index: int
    field: str | None
    value: float | None
    params: ModelParams
    photon: PhotonInput
    columns: list[tuple[str, str]]
    records: list[OutputRecord]
    n_max: dict[str, int] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name not in dict(self.columns):
            raise ConfigError(f"unknown column '{name}'; available: {', '.join(c for c, _ in self.columns)}")
        return np.array([r.values[name] for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])


@dataclass
class HusimiResult:
    sweep_index: int
    engine: str
    t: float
    map: HusimiMap

    @property
    def metrics(self) -> dict[str, float]:
        return {"circular_variance_phi": self.map.circular_variance_phi(), "integral": self.map.integral()}


@dataclass
class RunResult:
    scenario: Scenario
    sweeps: list[SweepResult]
    husimi: list[HusimiResult]
    physical: dict | None


@dataclass
class AssertionOutcome:
    index: int
    kind: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# Columns


def _columns(s: Scenario, params: ModelParams) -> list[tuple[str, str]]:
    cols = [("t", "1/U")]
    for eng in s.engines:
        if eng == "exact_sum":
            cols.append(("F_exact_sum", "1"))
        elif eng == "closed_form_approx":
            cols.append(("F_closed_form_approx", "1"))
            if params.eta != 0:
                cols.append(("F_closed_form_approx_with_u", "1"))
        elif eng == "oat_baseline":
            cols.append(("F_oat_baseline", "1"))
        if eng in STATE_ENGINES:
            for obs in s.observables:
                if obs == "qfi_eigen":
                    cols.append((f"F_eigen_{eng}", "1"))
                elif obs == "qfi_variance":
                    cols.append((f"F_variance_{eng}", "1"))
                    cols.append((f"eq_residual_{eng}", "1"))
                elif obs == "xi2":
                    cols.append((f"xi2_{eng}", "1"))
                    cols.append((f"xi2_perp_{eng}", "1"))
                elif obs == "n_mean":
                    cols.append((f"n_mean_{eng}", "photons"))
                elif obs == "purity":
                    cols.append((f"purity_{eng}", "1"))
            if eng.startswith("lindblad"):
                cols.append((f"top_level_population_{eng}", "1"))
    return cols


def _state_observables(s: Scenario, eng: str, rho: AtomicDensityMatrix, n_mean: float,
                       out: dict, notes: list[str]) -> None:
    for obs in s.observables:
        if obs == "qfi_eigen":
            out[f"F_eigen_{eng}"] = qfi_eigen(rho).value
        elif obs == "qfi_variance":
            r = qfi_variance(rho)
            out[f"F_variance_{eng}"] = r.value
            out[f"eq_residual_{eng}"] = r.diagnostics.equality_residual
        elif obs == "xi2":
            try:
                out[f"xi2_{eng}"] = spin_squeezing_xi2(rho, "literal")
                out[f"xi2_perp_{eng}"] = spin_squeezing_xi2(rho, "perpendicular-min")
            except DepolarizedState:
                out[f"xi2_{eng}"] = math.nan
                out[f"xi2_perp_{eng}"] = math.nan
                notes.append(f"xi2 undefined for {eng} (depolarized)")
        elif obs == "n_mean":
            out[f"n_mean_{eng}"] = n_mean
        elif obs == "purity":
            out[f"purity_{eng}"] = purity(rho)


def _closed_form_photons(params: ModelParams, photon: PhotonInput, rho: AtomicDensityMatrix, t: float) -> float:
    if params.eta == 0:
        return photon.mean_photons
    g = spectral_coefficients(params).gamma(t)
    return float(np.sum(np.real(np.diag(rho.rho)) * np.abs(g) ** 2))


def _integrator(s: Scenario) -> IntegratorConfig:
    i = s.integrator
    return IntegratorConfig(dt=i.dt, safety=i.safety, cutoff_tolerance=i.cutoff_tolerance,
                            hermitize_every=i.hermitize_every, frame=i.frame, workers=i.workers)


class _LindbladStream:
    """Advance a block or dense state through increasing times."""

    def __init__(self, s: Scenario, eng: str, params: ModelParams, photon: PhotonInput, t_end: float):
        self.eng = eng
        self.params = params
        self.config = _integrator(s)
        if eng == "lindblad_dense":
            self.config = IntegratorConfig(dt=self.config.dt, safety=self.config.safety,
                                           cutoff_tolerance=self.config.cutoff_tolerance,
                                           hermitize_every=self.config.hermitize_every)
        frame = self.config.frame
        self.n_max = s.integrator.n_max or choose_fock_cutoff(params, photon, t_end, frame)
        if eng == "lindblad_blocks":
            self.state = initial_block_state(params, photon, self.n_max, frame)
        else:
            self.state = initial_dense_state(params, photon, self.n_max)

    def advance(self, t: float):
        if self.eng == "lindblad_blocks":
            self.state = evolve_blocks(self.state, self.params, self.config, t)
        else:
            self.state = evolve_dense(self.state, self.params, self.config, t)
        rho = partial_trace_photons(self.state)
        return rho, photon_observables(self.state)


def _run_sweep(s: Scenario, index: int, params: ModelParams, photon: PhotonInput,
               value, times: np.ndarray) -> SweepResult:
    cols = _columns(s, params)
    taus = s.taus(params, n_bar=photon.mean_photons if photon.kind == "coherent" else None)
    streams = {}
    for eng in s.engines:
        if eng.startswith("lindblad"):
            try:
                streams[eng] = _LindbladStream(s, eng, params, photon, float(times[-1]))
            except CavityOATError as exc:
                raise EngineError(f"{eng}: {exc}", sweep_index=index, t=0.0, cause=exc) from exc
    oat_params = params.with_(W0=0.0, eta=0.0, kappa=0.0, J=0.0)
    records = []
    for t in times:
        t = float(t)
        out: dict[str, float] = {"t": t}
        notes: list[str] = []
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RegimeWarning)
                for eng in s.engines:
                    if eng == "exact_sum":
                        out["F_exact_sum"] = qfi_exact_sum(params, photon, t).value
                    elif eng == "closed_form_approx":
                        if params.eta == 0:
                            out["F_closed_form_approx"] = qfi_closed_form_no_pump(params, photon.mean_photons, t).value
                        else:
                            out["F_closed_form_approx"] = qfi_closed_form_pumped(params, t, "tau_b").value
                            out["F_closed_form_approx_with_u"] = qfi_closed_form_pumped(params, t, "with_u").value
                    elif eng == "oat_baseline":
                        out["F_oat_baseline"] = qfi_exact_sum(oat_params, PhotonInput.vacuum(), t).value
                        if s.observables:
                            _state_observables(s, eng, oat_state(params, t), 0.0, out, notes)
                    elif eng == "closed_form":
                        rho = evolve_closed_form(params, photon, t)
                        _state_observables(s, eng, rho, _closed_form_photons(params, photon, rho, t), out, notes)
                    else:
                        rho, ph = streams[eng].advance(t)
                        _state_observables(s, eng, rho, ph.n_mean, out, notes)
                        out[f"top_level_population_{eng}"] = ph.top_level_population
            notes.extend(sorted({str(w.message) for w in caught if issubclass(w.category, RegimeWarning)}))
        except EngineError:
            raise
        except CavityOATError as exc:
            raise EngineError(f"{exc}", sweep_index=index, t=t, cause=exc) from exc
        bad = [k for k, v in out.items() if not math.isfinite(v) and not k.startswith("xi2")]
        if bad:
            raise EngineError(f"non-finite values in {bad}", sweep_index=index, t=t)
        records.append(OutputRecord(t, out, tuple(notes)))
    _ = taus
    n_max = {eng: st.n_max for eng, st in streams.items()}
    field_name = s.sweep.field if s.sweep else None
    return SweepResult(index, field_name, value, params, photon, cols, records, n_max)


def _husimi_state(s: Scenario, eng: str, params: ModelParams, photon: PhotonInput, t: float):
    if eng == "closed_form":
        return evolve_closed_form(params, photon, t)
    if eng == "oat_baseline":
        return oat_state(params, t)
    stream = _LindbladStream(s, eng, params, photon, t)
    rho, _ = stream.advance(t)
    return rho


def run_scenario(s: Scenario) -> RunResult:
    """Run every sweep value over the time grid; deterministic for a given config.

    Raises
    ------
    EngineError
        Tagged with the sweep index and time of the failure.
    """
    times = s.times()
    sweeps = []
    husimi = []
    for index, (params, photon, value) in enumerate(s.sweep_points()):
        sweeps.append(_run_sweep(s, index, params, photon, value, times))
        if s.husimi is not None:
            grid = SphereGrid.gauss_legendre(s.husimi.n_theta, s.husimi.n_phi)
            for t_spec in s.husimi.times:
                t = s.resolve(t_spec)
                for eng in s.husimi.engines:
                    try:
                        rho = _husimi_state(s, eng, params, photon, t)
                    except CavityOATError as exc:
                        raise EngineError(f"husimi {eng}: {exc}", sweep_index=index, t=t, cause=exc) from exc
                    husimi.append(HusimiResult(index, eng, t, husimi_q(rho, grid)))
    physical = _physical_summary(s) if s.physical is not None else None
    return RunResult(s, sweeps, husimi, physical)


def _physical_summary(s: Scenario) -> dict:
    from .physical import ExperimentalInputs, two_mode_couplings, u0_over_g

    inputs = ExperimentalInputs.from_lab_units(**s.physical.model_dump(exclude={"derive_w0"}))
    c = two_mode_couplings(inputs)
    return {
        "u0_over_g": u0_over_g(inputs),
        "overlap_factor": c.overlap_factor,
        "w0_over_u": c.w0_over_u,
        "U_rad_per_s": c.U,
        "W0_rad_per_s": c.W_0,
    }


# ---------------------------------------------------------------------------
# Output


def git_describe() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _sweep_filename(s: Scenario, sw: SweepResult) -> str:
    return f"{s.name}_sweep{sw.index}.csv"


def _husimi_filename(h: HusimiResult) -> str:
    return f"husimi_sweep{h.sweep_index}_{h.engine}_t{h.t:.17g}.csv"


def write_outputs(result: RunResult, out_dir, assertions: list[AssertionOutcome] | None = None) -> list[Path]:
    """One CSV per sweep value, Husimi CSVs and ``manifest.json`` with checksums."""
    s = result.scenario
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for sw in result.sweeps:
        path = out / _sweep_filename(s, sw)
        header = [f"{name} [{unit}]" for name, unit in sw.columns] + ["warnings [text]"]
        lines = [",".join(header)]
        for r in sw.records:
            row = [_fmt(r.values[name]) for name, _ in sw.columns]
            row.append('"' + "; ".join(r.warnings).replace('"', "'") + '"')
            lines.append(",".join(row))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    for h in result.husimi:
        path = out / _husimi_filename(h)
        h.map.to_csv(path)
        written.append(path)
    manifest = {
        "name": s.name,
        "version": git_describe(),
        "package_version": __version__,
        "config": s.model_dump(mode="json"),
        "resolved": {
            "times": [float(t) for t in s.times()],
            "sweeps": [
                {
                    "index": sw.index,
                    "field": sw.field,
                    "value": sw.value,
                    "params": {k: v for k, v in vars(sw.params).items()},
                    "photon_input": {"kind": sw.photon.kind, "alpha": [sw.photon.alpha.real, sw.photon.alpha.imag],
                                     "n": sw.photon.n},
                    "n_max": sw.n_max,
                    "file": _sweep_filename(s, sw),
                }
                for sw in result.sweeps
            ],
        },
        "husimi": [
            {"sweep_index": h.sweep_index, "engine": h.engine, "t": h.t, "file": _husimi_filename(h), **h.metrics}
            for h in result.husimi
        ],
        "physical": result.physical,
        "assertions": [vars(a) for a in (assertions or [])],
        "files": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in written},
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written + [mpath]


# ---------------------------------------------------------------------------
# Assertions

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


def _ref(value, N: int) -> float:
    if isinstance(value, RefValue):
        base = {"N": N, "N^2": N * N, "N^2/2": N * N / 2, "N^2/4": N * N / 4, "N^2/2+N/2": N * N / 2 + N / 2}
        return value.multiple * base[value.of]
    return float(value)


def _check(x: float, op: str, value, N: int) -> tuple[bool, str]:
    if op == "between":
        lo, hi = (_ref(v, N) for v in value)
        return lo <= x <= hi, f"{x:.6g} in [{lo:.6g}, {hi:.6g}]"
    target = _ref(value, N)
    return bool(_OPS[op](x, target)), f"{x:.6g} {op} {target:.6g}"


def _time_index(sw: SweepResult, t: float) -> int:
    times = sw.times
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > T_MATCH_REL * max(1.0, abs(t), float(np.max(np.abs(times)))):
        raise ConfigError(f"assertion time {t:.6g} is not on the time grid")
    return k


def _selected(result: RunResult, idx: int | None) -> list[SweepResult]:
    if idx is None:
        return result.sweeps
    if not 0 <= idx < len(result.sweeps):
        raise ConfigError(f"sweep_index {idx} out of range")
    return [result.sweeps[idx]]


def evaluate_assertions(result: RunResult) -> list[AssertionOutcome]:
    s = result.scenario
    outcomes = []
    for i, a in enumerate(s.assertions):
        ok, details = True, []
        if isinstance(a, ValueAssertion):
            t = s.resolve(a.t)
            for sw in _selected(result, a.sweep_index):
                x = sw.column(a.column)[_time_index(sw, t)]
                good, msg = _check(x, a.op, a.value, sw.params.N)
                ok &= good
                details.append(f"sweep {sw.index}: {a.column}(t={t:.6g}) = {msg}")
        elif isinstance(a, MaxAssertion):
            for sw in _selected(result, a.sweep_index):
                col = sw.column(a.column)
                if a.t_max is not None:
                    col = col[sw.times <= s.resolve(a.t_max) * (1 + T_MATCH_REL)]
                good, msg = _check(float(np.max(col)), a.op, a.value, sw.params.N)
                ok &= good
                details.append(f"sweep {sw.index}: max {a.column} = {msg}")
        elif isinstance(a, CompareAssertion):
            t = s.resolve(a.t)
            left, right = result.sweeps[a.left_sweep], result.sweeps[a.right_sweep]
            x = left.column(a.column)[_time_index(left, t)]
            y = right.column(a.column)[_time_index(right, t)]
            ok = bool(_OPS[a.op](x, y))
            details.append(f"{a.column}(t={t:.6g}): sweep {a.left_sweep} {x:.6g} {a.op} sweep {a.right_sweep} {y:.6g}")
        elif isinstance(a, RelDiffAssertion):
            lo, hi = (s.resolve(v) for v in a.t_range)
            for sw in _selected(result, a.sweep_index):
                x, y = sw.column(a.columns[0]), sw.column(a.columns[1])
                mask = (sw.times >= lo * (1 - T_MATCH_REL)) & (sw.times <= hi * (1 + T_MATCH_REL))
                rel = np.abs(x[mask] - y[mask]) / np.abs(y[mask])
                worst = float(np.max(rel))
                good = bool(_OPS[a.op](worst, a.value))
                ok &= good
                details.append(f"sweep {sw.index}: max rel diff {worst:.4g} {a.op} {a.value}")
        elif isinstance(a, CrossingAssertion):
            lo, hi = (s.resolve(v) for v in a.within)
            for sw in _selected(result, a.sweep_index):
                level = _ref(a.level, sw.params.N)
                col = sw.column(a.column)
                above = np.flatnonzero(col >= level)
                if above.size == 0:
                    ok = False
                    details.append(f"sweep {sw.index}: {a.column} never reaches {level:.6g}")
                    continue
                k = above[0]
                if k == 0:
                    tc = sw.times[0]
                else:
                    t0, t1, f0, f1 = sw.times[k - 1], sw.times[k], col[k - 1], col[k]
                    tc = t0 + (level - f0) * (t1 - t0) / (f1 - f0)
                good = lo <= tc <= hi
                ok &= good
                details.append(f"sweep {sw.index}: crosses {level:.6g} at t={tc:.6g}, window [{lo:.6g}, {hi:.6g}]")
        elif isinstance(a, HusimiAssertion):
            t = s.resolve(a.t)
            by_key = {(h.sweep_index, h.engine): h for h in result.husimi if abs(h.t - t) <= T_MATCH_REL * max(1, t)}
            for sw in result.sweeps:
                left = by_key.get((sw.index, a.left))
                if left is None:
                    raise ConfigError(f"no Husimi map for engine '{a.left}' at t={t}")
                x = left.metrics[a.metric]
                if isinstance(a.right, str):
                    right = by_key.get((sw.index, a.right))
                    if right is None:
                        raise ConfigError(f"no Husimi map for engine '{a.right}' at t={t}")
                    y = right.metrics[a.metric]
                else:
                    y = float(a.right)
                good = bool(_OPS[a.op](x, y))
                ok &= good
                details.append(f"sweep {sw.index}: {a.metric} {x:.6g} {a.op} {y:.6g}")
        elif isinstance(a, PhysicalAssertion):
            if result.physical is None:
                raise ConfigError("physical assertion needs a 'physical' section")
            x = result.physical[a.quantity]
            ok, msg = _check(x, a.op, a.value, 0)
            details.append(f"{a.quantity} = {msg}")
        outcomes.append(AssertionOutcome(i, a.kind, bool(ok), "; ".join(details)))
    return outcomes
