"""Analytic reduced atomic state for the two solvable photon inputs.

With ``J = 0`` every Dicke block ``m`` sees its own driven harmonic oscillator
``H_m = omega_m n + U m**2 - i eta (a^dag - a)``, so the photons can be traced
out exactly. Two inputs are supported:

* no pump, coherent seed ``alpha``;
* pump ``eta``, vacuum seed.

Every element has the product form ``rho[m, m'] = A_m conj(A_m') exp(X_mm')``,
which lets callers evaluate a single diagonal stripe in O(N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ResonanceError
from .model import ModelParams, PhotonInput
from .spin import AtomicDensityMatrix, AtomicState, DickeBasis, coherent_spin_state

RESONANCE_REL = 1e-9


@dataclass(frozen=True, eq=False)
class SpectralCoefficients:
    """Per-block photon frequency ``omega_m`` and pump displacement ``beta_m``."""

    m: np.ndarray
    omega: np.ndarray
    beta: np.ndarray
    eta: float = 0.0

    def gamma(self, t: float) -> np.ndarray:
        """``beta_m (exp(-i omega_m t) - 1)``, written as ``eta t (exp(-i x) - 1) / x``.

        The rewritten form stays finite as ``omega_m -> 0``.
        """
        return self.eta * t * _expm1_i_over_x(-self.omega * t)


def _expm1_i(x):
    # exp(i x) - 1 without cancellation for small x
    return -2.0 * np.sin(x / 2) ** 2 + 1j * np.sin(x)


def _expm1_i_over_x(x):
    """``(exp(i x) - 1) / x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    h = np.sinc(x / (2 * np.pi))  # sin(x/2) / (x/2)
    return -0.5 * x * h**2 + 1j * np.sinc(x / np.pi)


def _x_minus_sin_over_x2(x):
    """``(x - sin x) / x**2``, accurate near zero."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-2
    xs = x[small]
    x2 = xs * xs
    out[small] = xs / 6 * (1 - x2 / 20 * (1 - x2 / 42 * (1 - x2 / 72)))
    xl = x[~small]
    out[~small] = (xl - np.sin(xl)) / xl**2
    return out


def spectral_coefficients(params: ModelParams, m_list=None) -> SpectralCoefficients:
    """Block frequencies and pump displacements.

    Raises
    ------
    ResonanceError
        If ``eta != 0`` and some ``|omega_m|`` falls below ``1e-9 * max(|delta_c|, W0)``.
    """
    m = params.m if m_list is None else np.asarray(m_list, dtype=float)
    omega = -params.delta_c + 2.0 * params.W0 * m**2
    if params.eta == 0.0:
        beta = np.zeros_like(omega)
    else:
        thresh = RESONANCE_REL * max(abs(params.delta_c), abs(params.W0))
        bad = np.abs(omega) <= thresh
        if np.any(bad):
            raise ResonanceError(
                f"omega_m vanishes for m = {m[bad].tolist()}; the pumped displacement diverges"
            )
        beta = params.eta / omega
    return SpectralCoefficients(m=m, omega=omega, beta=beta, eta=float(params.eta))


def _initial_amplitudes(params: ModelParams, initial: AtomicState | None) -> np.ndarray:
    if initial is None:
        return coherent_spin_state(params.N).amplitudes
    if initial.basis.N != params.N:
        raise ValueError(f"initial state has N={initial.basis.N}, params have N={params.N}")
    return initial.amplitudes


def _check_common(params: ModelParams, t: float):
    if params.J != 0.0:
        raise ValueError("closed forms require J = 0")
    if params.kappa != 0.0:
        raise ValueError("closed forms require kappa = 0")
    if not t >= 0:
        raise ValueError(f"t must be non-negative, got {t}")


class _ProductForm:
    """Holds ``A_m`` and the ingredients of ``X_mm'`` for one scenario and time."""

    def __init__(self, params: ModelParams, photon: PhotonInput, t: float, initial=None):
        _check_common(params, t)
        self.params = params
        self.t = float(t)
        C = _initial_amplitudes(params, initial)
        m = params.m
        # Jz is conserved, so populations never move
        self.populations = np.abs(C) ** 2
        if params.eta == 0.0:
            if photon.kind not in ("coherent", "vacuum"):
                raise ValueError("no-pump closed form needs a coherent (or vacuum) photon input")
            self.pumped = False
            self.n_bar = abs(photon.alpha) ** 2
            self.omega = params.omega()
            self.A = C * np.exp(-1j * params.U * m**2 * self.t)
        else:
            if photon.kind != "vacuum":
                raise ValueError("pumped closed form needs a vacuum photon input")
            self.pumped = True
            sc = spectral_coefficients(params)
            self.gamma = sc.gamma(self.t)
            # U m^2 t - beta^2 (omega t - sin omega t); the eta t beta piece enters with + sign
            x = sc.omega * self.t
            phase = params.U * m**2 * self.t - (params.eta * self.t) ** 2 * _x_minus_sin_over_x2(x)
            self.A = C * np.exp(-1j * phase)

    def exponent(self, i, j):
        """``X`` for index arrays ``i`` (rows) and ``j`` (columns)."""
        if self.pumped:
            gi, gj = self.gamma[i], self.gamma[j]
            return -0.5 * (np.abs(gi) ** 2 + np.abs(gj) ** 2) + gi * np.conj(gj)
        d = (self.omega[i] - self.omega[j]) * self.t
        return self.n_bar * _expm1_i(-d)

    def matrix(self) -> np.ndarray:
        """Upper triangle evaluated, lower mirrored; diagonal pinned to ``|C_m|^2``."""
        n = self.params.N + 1
        i, j = np.triu_indices(n, 1)
        rho = np.zeros((n, n), complex)
        rho[i, j] = self.A[i] * np.conj(self.A[j]) * np.exp(self.exponent(i, j))
        rho[j, i] = np.conj(rho[i, j])
        rho[np.diag_indices(n)] = self.populations
        return rho

    def stripe(self, offset: int) -> np.ndarray:
        """Elements ``rho[k, k + offset]`` for all valid ``k``."""
        if offset == 0:
            return self.populations.astype(complex)
        n = self.params.N + 1
        i = np.arange(n - offset)
        j = i + offset
        return self.A[i] * np.conj(self.A[j]) * np.exp(self.exponent(i, j))


def _to_density(params: ModelParams, rho: np.ndarray) -> AtomicDensityMatrix:
    np.fill_diagonal(rho, np.real(np.diag(rho)))
    return AtomicDensityMatrix(DickeBasis(params.N), rho)


def evolve_no_pump(params: ModelParams, alpha: complex, t: float,
                   initial: AtomicState | None = None) -> AtomicDensityMatrix:
    """Reduced atomic state for a coherent cavity seed without pump.

    ``rho[m, m'] = C_m C_m' exp(-i U (m^2 - m'^2) t) exp(|alpha|^2 (exp(-i(omega_m - omega_m') t) - 1))``.

    Parameters
    ----------
    params : ModelParams
        Must have ``eta = 0``, ``J = 0`` and ``kappa = 0``.
    alpha : complex
        Coherent amplitude; only ``|alpha|^2`` enters.
    t : float
        Time, ``>= 0``.
    initial : AtomicState, optional
        Atomic amplitudes; the coherent spin state by default.
    """
    if params.eta != 0.0:
        raise ValueError("evolve_no_pump requires eta = 0")
    form = _ProductForm(params, PhotonInput.coherent(alpha) if alpha else PhotonInput.vacuum(), t, initial)
    return _to_density(params, form.matrix())


def evolve_pumped(params: ModelParams, t: float,
                  initial: AtomicState | None = None) -> AtomicDensityMatrix:
    """Reduced atomic state for a pumped cavity starting in vacuum.

    ``rho[m, m'] = C_m(t) conj(C_m'(t)) exp(Gamma_mm')`` with
    ``C_m(t) = C_m exp(-i U m^2 t) exp(+i eta t beta_m) exp(-i beta_m^2 sin(omega_m t))`` and
    ``Gamma_mm' = -(|gamma_m|^2 + |gamma_m'|^2)/2 + gamma_m conj(gamma_m')``.

    The ``+i eta t beta_m`` sign is the one reproduced by direct numerical
    integration of the joint atom-photon dynamics.
    """
    if params.eta == 0.0:
        raise ValueError("evolve_pumped requires eta != 0")
    form = _ProductForm(params, PhotonInput.vacuum(), t, initial)
    return _to_density(params, form.matrix())


def evolve_closed_form(params: ModelParams, photon: PhotonInput, t: float,
                       initial: AtomicState | None = None) -> AtomicDensityMatrix:
    """Dispatch to the matching closed form for ``(params, photon)``."""
    if params.eta == 0.0:
        if photon.kind == "fock":
            raise ValueError("no closed form for a Fock input")
        return evolve_no_pump(params, photon.alpha, t, initial)
    if photon.kind != "vacuum":
        raise ValueError("pumped closed form requires a vacuum photon input")
    return evolve_pumped(params, t, initial)


def oat_state(params: ModelParams, t: float, initial: AtomicState | None = None) -> AtomicDensityMatrix:
    """Bare one-axis twisting, ``exp(-i U Jz^2 t)`` on the initial state."""
    C = _initial_amplitudes(params, initial)
    psi = C * np.exp(-1j * params.U * params.m**2 * t)
    rho = np.outer(psi, np.conj(psi))
    np.fill_diagonal(rho, np.abs(C) ** 2)
    return _to_density(params, rho)
