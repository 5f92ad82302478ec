"""Laboratory parameters to effective-model couplings.

Everything here is SI (frequencies in rad/s, lengths in m, masses in kg) with
``hbar`` restored explicitly. The chain is::

    xi = 2 sqrt(2 pi) R_0^(3/2)          molecular overlap, m^(3/2)
    Omega_R = Omega_0 xi / 2             rad/s m^(3/2)
    U_0 = hbar Omega_R^2 / Delta_A       J m^3
    g = 4 pi hbar^2 a_s / m              J m^3

Two-mode couplings use a Gaussian Wannier ansatz ``w_j(x)`` of width
``well_width`` centered at ``-/+ well_sep/2``, transverse ground states of
length ``l_H`` and the standing-wave Gaussian cavity mode
``f = cos(k y) exp(-(x^2 + z^2) / (2 sigma^2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import constants
from scipy.integrate import quad, simpson

from .errors import QuadratureError

HBAR = constants.hbar
A0 = constants.physical_constants["Bohr radius"][0]
AMU = constants.physical_constants["atomic mass constant"][0]
M_E = constants.m_e
T_AU = constants.physical_constants["atomic unit of time"][0]

QUAD_ABS_TOL = 1e-10
GRID_REL_TOL = 1e-6


@dataclass(frozen=True)
class ExperimentalInputs:
    """Laboratory inputs in SI units.

    Parameters
    ----------
    Omega_0 : float
        Single-photon single-pair Rabi coupling, rad/s.
    Delta_A : float
        Pump detuning from the molecular state, rad/s (sign kept).
    R_0 : float
        Molecular length scale, m.
    m_atom : float
        Atomic mass, kg.
    a_s : float
        s-wave scattering length, m.
    k : float
        Cavity wavenumber, 1/m.
    sigma : float
        Cavity mode waist, m.
    L : float
        Cavity length, m (only used by the printed-form reference value).
    l_H : float
        Transverse harmonic-oscillator length, m.
    well_sep, well_width : float
        Separation and width of the Gaussian Wannier functions, m.
    """

    Omega_0: float
    Delta_A: float
    R_0: float
    m_atom: float
    a_s: float
    k: float = 2 * math.pi / 780e-9
    sigma: float = 50e-6
    L: float = 1e-2
    l_H: float = 20e-9
    well_sep: float = 1e-6
    well_width: float = 50e-9

    def __post_init__(self):
        for name in ("Omega_0", "R_0", "m_atom", "a_s", "k", "sigma", "L", "l_H", "well_sep", "well_width"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if not math.isfinite(self.Delta_A) or self.Delta_A == 0:
            raise ValueError("Delta_A must be finite and nonzero")

    @classmethod
    def from_lab_units(cls, *, Omega_0_kHz: float, Delta_A_kHz: float, R_0_a0: float,
                       m_atom_u: float, a_s_a0: float, wavelength_nm: float = 780.0,
                       sigma_um: float = 50.0, L_mm: float = 10.0, l_H_nm: float = 20.0,
                       well_sep_um: float = 1.0, well_width_nm: float = 50.0) -> "ExperimentalInputs":
        """Frequencies as ``2 pi x kHz``, atomic lengths in Bohr radii, mass in u."""
        return cls(
            Omega_0=2 * math.pi * 1e3 * Omega_0_kHz,
            Delta_A=2 * math.pi * 1e3 * Delta_A_kHz,
            R_0=R_0_a0 * A0,
            m_atom=m_atom_u * AMU,
            a_s=a_s_a0 * A0,
            k=2 * math.pi / (wavelength_nm * 1e-9),
            sigma=sigma_um * 1e-6,
            L=L_mm * 1e-3,
            l_H=l_H_nm * 1e-9,
            well_sep=well_sep_um * 1e-6,
            well_width=well_width_nm * 1e-9,
        )


def rubidium_reference() -> ExperimentalInputs:
    """87Rb estimate: 2 pi x 750 kHz coupling, 2 pi x 2 MHz detuning, a = 100 a0, R_0 = 250 a0."""
    return ExperimentalInputs.from_lab_units(
        Omega_0_kHz=750.0, Delta_A_kHz=2000.0, R_0_a0=250.0, m_atom_u=87.0, a_s_a0=100.0
    )


def lithium_reference() -> ExperimentalInputs:
    """Same coupling and detuning with a 7 u atom and a = 25 a0."""
    return ExperimentalInputs.from_lab_units(
        Omega_0_kHz=750.0, Delta_A_kHz=2000.0, R_0_a0=250.0, m_atom_u=7.0, a_s_a0=25.0
    )


def xi_gaussian(R_0: float) -> float:
    """``2 sqrt(2 pi) R_0^(3/2)``: volume integral of the molecular wavefunction.

    Corresponds to ``phi_m(r) = A exp(-r^2/R_0^2) / r`` with
    ``A = sqrt(2/pi) R_0^(-1/2)`` (see :func:`molecular_normalization`).
    """
    if not R_0 > 0:
        raise ValueError("R_0 must be positive")
    return 2 * math.sqrt(2 * math.pi) * R_0**1.5


def molecular_normalization(R_0: float) -> float:
    """Prefactor ``A`` of the Gaussian molecular ansatz that reproduces :func:`xi_gaussian`."""
    return math.sqrt(2 / math.pi) / math.sqrt(R_0)


def omega_r(Omega_0: float, xi: float) -> float:
    """``Omega_0 xi / 2``."""
    return Omega_0 * xi / 2


def u0(Omega_R: float, Delta_A: float) -> float:
    """``Omega_R^2 / Delta_A`` (``hbar = 1``); the sign follows the detuning."""
    if Delta_A == 0:
        raise ValueError("Delta_A must be nonzero")
    return Omega_R**2 / Delta_A


def contact_coupling(a_s: float, m_atom: float, hbar: float = HBAR) -> float:
    """``g = 4 pi hbar^2 a_s / m``."""
    return 4 * math.pi * hbar**2 * a_s / m_atom


def _ratio(Omega_0, Delta_A, R_0, m_atom, a_s, hbar):
    U0 = hbar * u0(omega_r(Omega_0, xi_gaussian(R_0)), Delta_A)
    return U0 / contact_coupling(a_s, m_atom, hbar)


def u0_over_g(inputs: ExperimentalInputs) -> float:
    """Dimensionless ``U_0 / g = Omega_0^2 xi^2 m / (16 pi hbar Delta_A a_s)``."""
    return _ratio(inputs.Omega_0, inputs.Delta_A, inputs.R_0, inputs.m_atom, inputs.a_s, HBAR)


def u0_over_g_atomic_units(inputs: ExperimentalInputs) -> float:
    """Same ratio evaluated in Hartree atomic units (``hbar = m_e = a_0 = 1``)."""
    return _ratio(inputs.Omega_0 * T_AU, inputs.Delta_A * T_AU, inputs.R_0 / A0,
                  inputs.m_atom / M_E, inputs.a_s / A0, 1.0)


# ---------------------------------------------------------------------------
# Two-mode couplings


def gaussian_wannier(x, center: float, width: float):
    """Normalized ``(pi s^2)^(-1/4) exp(-(x - x0)^2 / (2 s^2))``."""
    x = np.asarray(x, dtype=float)
    return (math.pi * width**2) ** -0.25 * np.exp(-((x - center) ** 2) / (2 * width**2))


def _gaussian_wannier_d2(x, center: float, width: float):
    u = (np.asarray(x, dtype=float) - center) / width
    return gaussian_wannier(x, center, width) * (u * u - 1) / width**2


def quartic_overlap(width: float, center: float = 0.0, sigma: float | None = None) -> float:
    """``int |w(x)|^4 exp(-x^2/sigma^2) dx`` by adaptive quadrature (no factor if ``sigma`` is None)."""
    # work in u = (x - center)/width so the integrand is O(1)
    def f(u):
        x = center + width * u
        val = math.pi**-1 * math.exp(-2 * u * u)
        if sigma is not None:
            val *= math.exp(-(x / sigma) ** 2)
        return val

    val, err = quad(f, -12.0, 12.0, epsabs=QUAD_ABS_TOL, epsrel=1e-12, limit=200)
    if err > 1e-8:
        raise QuadratureError(f"quartic overlap did not converge (error estimate {err:.2e})")
    return val / width


@dataclass(frozen=True)
class TwoModeCouplings:
    """Couplings in rad/s (energies divided by ``hbar``).

    ``epsilon`` and ``J`` are ``None`` unless a double-well potential is given.
    ``overlap_factor`` is ``(W_0/U) / (U_0/g)``. ``w0_printed`` is the
    printed closed form taken literally in SI, kept for reference only: it
    does not have frequency units.
    """

    U: float
    W_0: float
    overlap_factor: float
    epsilon: float | None = None
    J: float | None = None
    w0_printed: float | None = None

    @property
    def w0_over_u(self) -> float:
        return self.W_0 / self.U


def _grid_integral(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int) -> float:
    coarse = np.linspace(lo, hi, n + 1)
    fine = np.linspace(lo, hi, 2 * n + 1)
    a = simpson(fn(coarse), x=coarse)
    b = simpson(fn(fine), x=fine)
    if abs(a - b) > GRID_REL_TOL * max(abs(b), 1e-300):
        raise QuadratureError(f"grid quadrature not converged: {a:.12g} vs {b:.12g}")
    return float(b)


def two_mode_couplings(inputs: ExperimentalInputs, U_0: float | None = None,
                       V_DW: Callable[[np.ndarray], np.ndarray] | None = None,
                       grid_points: int = 4000) -> TwoModeCouplings:
    """Bare and cavity-assisted couplings of the two localized modes.

    ``U = g / (2 pi l_H^2) int |w|^4 dx`` and ``W_0 = U_0 int f^2 |phi|^4 d^3r``
    which, for the mode functions above, is::

        W_0 = U_0 (1 + exp(-k^2 l_H^2 / 2)) sigma
              / (2 pi l_H^2 sqrt(2 (l_H^2 + 2 sigma^2))) int |w|^4 exp(-x^2/sigma^2) dx

    Parameters
    ----------
    inputs : ExperimentalInputs
    U_0 : float, optional
        Cavity interaction per photon in J m^3; derived from ``inputs`` if omitted.
    V_DW : callable, optional
        Double-well potential ``V(x)`` in J. When given, ``epsilon`` and ``J`` are
        obtained by grid quadrature checked at two resolutions.

    Raises
    ------
    QuadratureError
        If a quadrature fails its convergence check.
    """
    if U_0 is None:
        U_0 = HBAR * u0(omega_r(inputs.Omega_0, xi_gaussian(inputs.R_0)), inputs.Delta_A)
    s, x0, l, sig, k = inputs.well_width, inputs.well_sep / 2, inputs.l_H, inputs.sigma, inputs.k
    g = contact_coupling(inputs.a_s, inputs.m_atom)
    bare = quartic_overlap(s, x0)
    dressed = quartic_overlap(s, x0, sig)
    U = g / (2 * math.pi * l * l) * bare / HBAR
    transverse = (1 + math.exp(-(k * l) ** 2 / 2)) * sig / (2 * math.pi * l * l * math.sqrt(2 * (l * l + 2 * sig * sig)))
    W_0 = U_0 * transverse * dressed / HBAR
    factor = (W_0 / U) / (U_0 / g)
    printed = U_0 * (1 + math.exp(-(k * l) ** 2 / 2)) / (
        inputs.L * math.pi**2 * sig * l * l * math.sqrt(2 * (l * l + 2 * sig * sig))) * dressed
    eps = J = None
    if V_DW is not None:
        m = inputs.m_atom
        lo, hi = -x0 - 12 * s, x0 + 12 * s
        omega_h = HBAR / (m * l * l)

        def h_on(center):
            return lambda x: -HBAR**2 / (2 * m) * _gaussian_wannier_d2(x, center, s) + V_DW(x) * gaussian_wannier(x, center, s)

        h2 = h_on(x0)
        eps = omega_h + _grid_integral(lambda x: gaussian_wannier(x, x0, s) * h2(x), lo, hi, grid_points) / HBAR
        J = -_grid_integral(lambda x: gaussian_wannier(x, -x0, s) * h2(x), lo, hi, grid_points) / HBAR
    return TwoModeCouplings(U=U, W_0=W_0, overlap_factor=factor, epsilon=eps, J=J, w0_printed=printed)


def mode_overlap_factor(inputs: ExperimentalInputs) -> float:
    """``int f^2 |phi|^4 / int |phi|^4``, the factor relating ``W_0/U`` to ``U_0/g``.

    Equals ``(1 + exp(-k^2 l_H^2/2)) / 2 * sqrt(2 sigma^2 / (2 sigma^2 + l_H^2))``
    times the longitudinal ratio; tends to 1 for ``k l_H -> 0`` and a broad waist.
    """
    return two_mode_couplings(inputs).overlap_factor
