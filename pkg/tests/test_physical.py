import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from cavity_oat.errors import QuadratureError
from cavity_oat.physical import (
    HBAR,
    ExperimentalInputs,
    contact_coupling,
    gaussian_wannier,
    lithium_reference,
    mode_overlap_factor,
    molecular_normalization,
    omega_r,
    quartic_overlap,
    rubidium_reference,
    two_mode_couplings,
    u0,
    u0_over_g,
    u0_over_g_atomic_units,
    xi_gaussian,
)


def test_xi_values_and_scaling():
    assert xi_gaussian(1.0) == pytest.approx(5.0133, abs=1e-4)
    assert xi_gaussian(1.0) == pytest.approx(2 * math.sqrt(2 * math.pi), rel=1e-15)
    for R in (0.3, 1.0, 7.0):
        assert xi_gaussian(4 * R) == pytest.approx(8 * xi_gaussian(R), rel=1e-13)


@pytest.mark.parametrize("R0", [0.5, 1.0, 3.0])
def test_xi_radial_quadrature(R0):
    A = molecular_normalization(R0)
    # integral of A exp(-r^2/R0^2)/r over all space
    val, _ = quad(lambda r: 4 * math.pi * r * A * math.exp(-(r / R0) ** 2), 0, 20 * R0, epsabs=1e-14)
    assert val == pytest.approx(xi_gaussian(R0), rel=1e-6)


def test_omega_r_and_u0_identities():
    assert omega_r(1.0, 2.0) == 1.0
    assert omega_r(2.0, 2.0) == 2.0
    assert u0(1.0, 1.0) == 1.0
    assert u0(1.0, -1.0) == -1.0
    assert u0(3.0, 2.0) == pytest.approx(4.5)
    with pytest.raises(ValueError):
        u0(1.0, 0.0)


def test_rubidium_ratio_band():
    r = u0_over_g(rubidium_reference())
    assert 0.2 <= r <= 1.0
    assert r == pytest.approx(0.5, rel=0.1)


def test_lithium_ratio_tenth_scale():
    r = u0_over_g(lithium_reference())
    assert 0.03 < r < 0.3
    assert r < u0_over_g(rubidium_reference())


def test_ratio_scales_as_r0_cubed():
    rb = rubidium_reference()
    half = dataclasses.replace(rb, R_0=rb.R_0 / 2)
    assert u0_over_g(half) == pytest.approx(u0_over_g(rb) / 8, rel=1e-12)


@given(st.floats(10, 5000), st.floats(-1e4, 1e4).filter(lambda x: abs(x) > 1), st.floats(10, 1000),
       st.floats(1, 250), st.floats(1, 500))
def test_units_self_test(omega, delta, R0, mass, a_s):
    inputs = ExperimentalInputs.from_lab_units(Omega_0_kHz=omega, Delta_A_kHz=delta, R_0_a0=R0,
                                               m_atom_u=mass, a_s_a0=a_s)
    assert u0_over_g_atomic_units(inputs) == pytest.approx(u0_over_g(inputs), rel=1e-10)


def test_contact_coupling_value():
    assert contact_coupling(1.0, 1.0, hbar=1.0) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("s", [10e-9, 50e-9, 200e-9])
def test_bare_coupling_gaussian_moment(s):
    rb = dataclasses.replace(rubidium_reference(), well_width=s)
    c = two_mode_couplings(rb)
    g = contact_coupling(rb.a_s, rb.m_atom)
    analytic = g / (2 * math.pi * rb.l_H**2) / (math.sqrt(2 * math.pi) * s) / HBAR
    assert c.U == pytest.approx(analytic, rel=1e-8)


def test_overlap_factor_tight_trap_broad_waist():
    rb = dataclasses.replace(rubidium_reference(), l_H=1e-9, sigma=1e-3, well_width=20e-9, well_sep=200e-9)
    c = two_mode_couplings(rb)
    assert c.overlap_factor == pytest.approx(1.0, abs=1e-3)
    assert c.w0_over_u == pytest.approx(u0_over_g(rb), rel=1e-3)
    assert mode_overlap_factor(rubidium_reference()) == pytest.approx(1.0, abs=0.05)


def test_overlap_factor_closed_expression():
    rb = rubidium_reference()
    k, l, sig = rb.k, rb.l_H, rb.sigma
    expected = 0.5 * (1 + math.exp(-(k * l) ** 2 / 2)) * math.sqrt(2 * sig**2 / (2 * sig**2 + l * l))
    expected *= quartic_overlap(rb.well_width, rb.well_sep / 2, sig) / quartic_overlap(rb.well_width, rb.well_sep / 2)
    assert two_mode_couplings(rb).overlap_factor == pytest.approx(expected, rel=1e-12)


def test_broad_waist_limit():
    s, x0 = 50e-9, 0.5e-6
    bare = quartic_overlap(s, x0)
    for sigma, tol in ((1e-4, 1e-4), (1e-2, 1e-8)):
        assert quartic_overlap(s, x0, sigma) == pytest.approx(bare, rel=tol)
    assert bare == pytest.approx(1 / (math.sqrt(2 * math.pi) * s), rel=1e-10)


def test_gaussian_wannier_normalized():
    x = np.linspace(-1e-6, 1e-6, 20001)
    w = gaussian_wannier(x, 1e-7, 5e-8)
    assert np.trapezoid(w * w, x) == pytest.approx(1.0, rel=1e-9)


def test_tunneling_free_particle_overlap():
    rb = rubidium_reference()
    s, d, m = rb.well_width, rb.well_sep, rb.m_atom
    # narrow separation so the overlap is not negligible
    rb = dataclasses.replace(rb, well_sep=2 * s)
    d = rb.well_sep
    c = two_mode_couplings(rb, V_DW=lambda x: np.zeros_like(x))
    J = -(HBAR / (2 * m)) / (2 * s * s) * (1 - d * d / (2 * s * s)) * math.exp(-d * d / (4 * s * s))
    eps = HBAR / (m * rb.l_H**2) + HBAR / (4 * m * s * s)
    assert c.J == pytest.approx(J, rel=1e-6)
    assert c.epsilon == pytest.approx(eps, rel=1e-6)


def test_grid_quadrature_converges_under_refinement():
    rb = dataclasses.replace(rubidium_reference(), well_sep=120e-9)
    m, w = rb.m_atom, 2 * math.pi * 5e3

    def V(x):
        return 0.5 * m * w**2 * (np.abs(x) - rb.well_sep / 2) ** 2

    a = two_mode_couplings(rb, V_DW=V, grid_points=4000)
    b = two_mode_couplings(rb, V_DW=V, grid_points=8000)
    assert a.J == pytest.approx(b.J, rel=1e-6)
    assert a.epsilon == pytest.approx(b.epsilon, rel=1e-6)
    with pytest.raises(QuadratureError):
        two_mode_couplings(rb, V_DW=V, grid_points=6)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        ExperimentalInputs(Omega_0=1.0, Delta_A=0.0, R_0=1.0, m_atom=1.0, a_s=1.0)
    with pytest.raises(ValueError):
        ExperimentalInputs(Omega_0=1.0, Delta_A=1.0, R_0=-1.0, m_atom=1.0, a_s=1.0)
    with pytest.raises(ValueError):
        xi_gaussian(0.0)
