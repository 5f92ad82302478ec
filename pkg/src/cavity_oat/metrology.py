"""Quantum Fisher information, squeezing parameter and crossover time scales.

Four QFI routes are provided:

``Eigen``
    Spectral formula on an arbitrary density matrix.
``Variance``
    ``4 Var(G)``; an upper bound that is tight when ``Tr[(rho G)^2] = 0``
    for the centered generator.
``ExactSum``
    ``4 <Jy^2>`` for the closed-form states, summed over the Dicke basis in
    O(N) using only the two stripes of the density matrix that enter.
``ClosedForm``
    Large-N formulas interpolating between ``N`` and ``N^2/2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .closed_form import _ProductForm
from .errors import DepolarizedState, NonPhysicalState
from .model import ModelParams, PhotonInput
from .spin import (
    PSD_FLOOR,
    AtomicDensityMatrix,
    AtomicState,
    CollectiveSpinOperator,
    DickeBasis,
    _ladder_coefficients,
    jx_matrix,
    jy_matrix,
    jz_matrix,
)

EIGEN_FLOOR = 1e-12
REGIME_RATIO = 0.1

Route = Literal["Eigen", "Variance", "ExactSum", "ClosedForm"]


class RegimeWarning(UserWarning):
    """A closed-form formula is evaluated outside its stated validity regime."""


@dataclass(frozen=True)
class QfiDiagnostics:
    jy_mean: float = float("nan")
    equality_residual: float = float("nan")
    equality_residual_raw: float = float("nan")
    floor_count: int = 0


@dataclass(frozen=True)
class QfiResult:
    """QFI value with its route tag, diagnostics and any regime warnings."""

    value: float
    route: Route
    diagnostics: QfiDiagnostics = field(default_factory=QfiDiagnostics)
    warnings: tuple[str, ...] = ()

    def __float__(self) -> float:
        return float(self.value)


def _rho_and_gen(rho, generator):
    r = rho.rho if isinstance(rho, AtomicDensityMatrix) else np.asarray(rho, dtype=complex)
    if generator is None:
        n = r.shape[0] - 1
        g = jy_matrix(n).matrix
    else:
        g = generator.matrix if isinstance(generator, CollectiveSpinOperator) else np.asarray(generator)
    if g.shape != r.shape:
        raise ValueError(f"generator shape {g.shape} does not match state shape {r.shape}")
    if np.max(np.abs(g - g.conj().T)) > 1e-10:
        raise ValueError("generator must be Hermitian")
    return r, g


def _equality_residuals(r, g):
    mean = float(np.real(np.sum(r * g.T)))
    rg = r @ g
    raw = abs(np.sum(rg * rg.T))
    gc = g - mean * np.eye(g.shape[0])
    rgc = r @ gc
    centered = abs(np.sum(rgc * rgc.T))
    return mean, float(centered), float(raw)


def qfi_eigen(rho, generator=None) -> QfiResult:
    """QFI from the spectral decomposition of ``rho``.

    ``F = 2 sum_ij (l_i - l_j)^2 / (l_i + l_j) |<i|G|j>|^2``, skipping pairs whose
    ``l_i + l_j`` is below ``1e-12`` (their count lands in the diagnostics).

    Parameters
    ----------
    rho : AtomicDensityMatrix or ndarray
    generator : CollectiveSpinOperator or ndarray, optional
        Defaults to ``Jy``.

    Raises
    ------
    NonPhysicalState
        If an eigenvalue is below ``-1e-8``.
    """
    r, g = _rho_and_gen(rho, generator)
    lam, vec = np.linalg.eigh(0.5 * (r + r.conj().T))
    if lam[0] < PSD_FLOOR:
        raise NonPhysicalState(f"eigenvalue {lam[0]:.3e} below PSD floor {PSD_FLOOR}")
    lam = np.clip(lam, 0.0, None)
    gm = vec.conj().T @ g @ vec
    s = lam[:, None] + lam[None, :]
    d = lam[:, None] - lam[None, :]
    keep = s > EIGEN_FLOOR
    terms = np.zeros_like(s)
    terms[keep] = d[keep] ** 2 / s[keep]
    value = 2.0 * float(np.sum(terms * np.abs(gm) ** 2))
    mean, centered, raw = _equality_residuals(r, g)
    diag = QfiDiagnostics(mean, centered, raw, int(np.count_nonzero(~keep)))
    return QfiResult(value, "Eigen", diag)


def qfi_variance(rho, generator=None) -> QfiResult:
    """``4 (<G^2> - <G>^2)``, with ``|Tr[(rho G)^2]|`` in the diagnostics.

    ``equality_residual`` uses the centered generator ``G - <G>``, the
    condition under which this route equals :func:`qfi_eigen`;
    ``equality_residual_raw`` uses ``G`` itself.
    """
    r, g = _rho_and_gen(rho, generator)
    mean, centered, raw = _equality_residuals(r, g)
    g2 = float(np.real(np.sum(r * (g @ g).T)))
    value = 4.0 * (g2 - mean**2)
    return QfiResult(value, "Variance", QfiDiagnostics(mean, centered, raw, 0))


def qfi_exact_sum(params: ModelParams, photon_input: PhotonInput, t: float,
                  initial: AtomicState | None = None) -> QfiResult:
    """``4 Var(Jy)`` of the closed-form state, summed exactly over the Dicke basis.

    Uses ``4<Jy^2> = 2 (j(j+1) - <Jz^2>) - 2 Re <J+^2>``; only the main diagonal
    and the first two super-diagonals of the closed-form matrix are evaluated.
    For the coherent spin state this is ``N(N+1)/2 - 2 Re I`` with
    ``I = sum_m rho[m, m+2] sqrt((N/2-m)(N/2+m+1)(N/2-m-1)(N/2+m+2))``.
    """
    form = _ProductForm(params, photon_input, t, initial)
    N = params.N
    j = N / 2
    m = params.m
    ell = _ladder_coefficients(DickeBasis(N))
    diag = np.real(form.stripe(0))
    jz2 = float(np.sum(diag * m**2))
    jy_mean = float(np.sum(ell * np.imag(form.stripe(1))))
    if N >= 2:
        jp2 = complex(np.sum(form.stripe(2) * ell[:-1] * ell[1:]))
    else:
        jp2 = 0j
    jy2 = 0.5 * (j * (j + 1) - jz2) - 0.5 * jp2.real
    value = 4.0 * (jy2 - jy_mean**2)
    return QfiResult(value, "ExactSum", QfiDiagnostics(jy_mean=jy_mean))


def _interpolate(N: int, f) -> np.ndarray:
    return 0.5 * N * (1 + f) + 0.5 * N**2 * (1 - f)


def _emit(flags: list[str]) -> tuple[str, ...]:
    for msg in flags:
        warnings.warn(msg, RegimeWarning, stacklevel=3)
    return tuple(flags)


def _no_pump_flags(params: ModelParams, n_bar: float, t: float) -> list[str]:
    flags = []
    x = 4 * abs(params.W0) * t * math.sqrt(params.N)
    if x >= REGIME_RATIO:
        flags.append(f"4 W0 t sqrt(N) = {x:.3g} is not << 1")
    if n_bar > 0 and abs(params.U) / (abs(params.W0) * n_bar) >= REGIME_RATIO:
        flags.append(f"W0 n_bar = {abs(params.W0) * n_bar:.3g} is not >> U = {params.U:.3g}")
    if n_bar <= 0 or 1.0 / n_bar >= REGIME_RATIO:
        flags.append(f"n_bar = {n_bar:.3g} is not >> 1")
    return flags


def qfi_closed_form_no_pump(params: ModelParams, n_bar: float, t: float) -> QfiResult:
    """Large-N crossover formula for a coherent seed with ``n_bar`` photons.

    ``F = N(1+f)/2 + N^2(1-f)/2`` with ``f = exp(-2 t^2 / tau_a^2)``.
    Regime violations are reported as :class:`RegimeWarning`, never raised.
    """
    tau = crossover_times(params, n_bar=n_bar).tau_a
    f = math.exp(-2 * (t / tau) ** 2) if math.isfinite(tau) else 1.0
    flags = _emit(_no_pump_flags(params, n_bar, t))
    return QfiResult(float(_interpolate(params.N, f)), "ClosedForm", warnings=flags)


def qfi_closed_form_pumped(params: ModelParams, t: float,
                           form: Literal["tau_b", "with_u"] = "tau_b") -> QfiResult:
    """Large-N crossover formula for the pumped cavity.

    ``form="tau_b"`` uses ``f = exp(-2 t^6 / tau_b^6)``; ``form="with_u"`` keeps the
    bare interaction, ``f = exp(-2N (U t + (2/3) eta^2 W0 t^3)^2)``.
    """
    N = params.N
    if form == "tau_b":
        tau = crossover_times(params).tau_b
        f = math.exp(-2 * (t / tau) ** 6) if math.isfinite(tau) else 1.0
    elif form == "with_u":
        chi = params.U * t + (2.0 / 3.0) * params.eta**2 * params.W0 * t**3
        f = math.exp(-2 * N * chi**2)
    else:
        raise ValueError(f"unknown form {form!r}")
    flags = []
    if abs(params.delta_c) * t >= REGIME_RATIO:
        flags.append(f"delta_c t = {abs(params.delta_c) * t:.3g} is not << 1")
    return QfiResult(float(_interpolate(N, f)), "ClosedForm", warnings=_emit(flags))


def qfi_gaussian_integral_no_pump(params: ModelParams, n_bar: float, t: float,
                                  variant: Literal["literal", "exact-gaussian"] = "literal") -> QfiResult:
    """Gaussian-integral approximation of the no-pump Dicke sum.

    With ``sigma = 2/N + 8 n_bar (W0 t)^2``, ``a = -4 W0 t n_bar - 4 U t`` and
    ``b = 8 n_bar (W0 t)^2``::

        F = N(N+1)/2 - 2 sqrt(2/(sigma N)) exp(-(a^2 - 4b^2)/(4 sigma)) exp(-b)
            * [cos(a - ab/sigma) (N^2/4 - 1/(2 sigma) + (a^2 - 4b^2)/(4 sigma^2))
               - q sin(a - ab/sigma)]

    ``variant="literal"`` takes ``q = ab/sigma``; ``variant="exact-gaussian"``
    takes ``q = ab/sigma^2``, which is what the Gaussian moment integral gives.
    """
    N = params.N
    W0t = params.W0 * t
    sigma = 2.0 / N + 8 * n_bar * W0t**2
    a = -4 * W0t * n_bar - 4 * params.U * t
    b = 8 * n_bar * W0t**2
    theta = a - a * b / sigma
    if variant == "literal":
        q = a * b / sigma
    elif variant == "exact-gaussian":
        q = a * b / sigma**2
    else:
        raise ValueError(f"unknown variant {variant!r}")
    poly = N**2 / 4 - 1 / (2 * sigma) + (a * a - 4 * b * b) / (4 * sigma**2)
    env = math.sqrt(2 / (sigma * N)) * math.exp(-(a * a - 4 * b * b) / (4 * sigma) - b)
    value = 0.5 * N * (N + 1) - 2 * env * (math.cos(theta) * poly - q * math.sin(theta))
    flags = _emit(_no_pump_flags(params, n_bar, t))
    return QfiResult(value, "ClosedForm", warnings=flags)


def spin_squeezing_xi2(rho, variant: Literal["literal", "perpendicular-min"] = "literal") -> float:
    """Spin-squeezing parameter.

    ``variant="literal"``: ``N Var(Jz) / (<Jx>^2 + <Jy>^2)``. Under dynamics that
    conserve ``Jz`` this never drops below its initial value.

    ``variant="perpendicular-min"``: ``N min Var(J_perp) / (<Jx>^2 + <Jy>^2)``, the
    minimum taken over spin components orthogonal to the mean spin.

    Raises
    ------
    DepolarizedState
        If ``<Jx>^2 + <Jy>^2 <= 1e-12``.
    """
    r = rho.rho if isinstance(rho, AtomicDensityMatrix) else np.asarray(rho, dtype=complex)
    N = r.shape[0] - 1
    ops = [jx_matrix(N).matrix, jy_matrix(N).matrix, jz_matrix(N).matrix]
    mean = np.array([np.real(np.sum(r * o.T)) for o in ops])
    pol = mean[0] ** 2 + mean[1] ** 2
    if pol <= 1e-12:
        raise DepolarizedState(f"transverse polarization {pol:.3e} too small for a squeezing parameter")
    if variant == "literal":
        jz = ops[2]
        var = float(np.real(np.sum(r * (jz @ jz).T))) - mean[2] ** 2
        return N * var / pol
    if variant != "perpendicular-min":
        raise ValueError(f"unknown variant {variant!r}")
    n = mean / np.linalg.norm(mean)
    # orthonormal pair spanning the plane perpendicular to the mean spin
    helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    a = sum(c * o for c, o in zip(e1, ops))
    b = sum(c * o for c, o in zip(e2, ops))
    ea = np.real(np.sum(r * a.T))
    eb = np.real(np.sum(r * b.T))
    caa = np.real(np.sum(r * (a @ a).T)) - ea**2
    cbb = np.real(np.sum(r * (b @ b).T)) - eb**2
    cab = 0.5 * np.real(np.sum(r * (a @ b + b @ a).T)) - ea * eb
    vmin = float(np.linalg.eigvalsh(np.array([[caa, cab], [cab, cbb]]))[0])
    return N * vmin / pol


@dataclass(frozen=True)
class CrossoverParams:
    """Time scales of the two crossover functions; ``inf`` where undefined."""

    tau_a: float
    tau_b: float

    def f_a(self, t):
        if not math.isfinite(self.tau_a):
            return np.ones_like(np.asarray(t, dtype=float))
        return np.exp(-2 * (np.asarray(t, dtype=float) / self.tau_a) ** 2)

    def f_b(self, t):
        if not math.isfinite(self.tau_b):
            return np.ones_like(np.asarray(t, dtype=float))
        return np.exp(-2 * (np.asarray(t, dtype=float) / self.tau_b) ** 6)


def crossover_times(params: ModelParams, n_bar: float | None = None) -> CrossoverParams:
    """``tau_a = 1/(sqrt(N) W0 n_bar)`` and ``tau_b = (9/(4 N W0^2 eta^4))^(1/6)``.

    ``tau_a`` needs ``n_bar > 0``; ``tau_b`` needs ``eta != 0``. Missing inputs or
    ``W0 = 0`` give ``inf``.
    """
    N, W0 = params.N, abs(params.W0)
    if n_bar is not None and n_bar < 0:
        raise ValueError(f"n_bar must be non-negative, got {n_bar}")
    tau_a = math.inf
    if n_bar and W0 > 0:
        tau_a = 1.0 / (math.sqrt(N) * W0 * n_bar)
    tau_b = math.inf
    if params.eta != 0 and W0 > 0:
        tau_b = (9.0 / (4.0 * N * W0**2 * params.eta**4)) ** (1.0 / 6.0)
    return CrossoverParams(tau_a, tau_b)
