import math
import warnings

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from cavity_oat.closed_form import evolve_closed_form, evolve_no_pump, evolve_pumped, oat_state
from cavity_oat.errors import DepolarizedState, NonPhysicalState
from cavity_oat.metrology import (
    RegimeWarning,
    crossover_times,
    qfi_closed_form_no_pump,
    qfi_closed_form_pumped,
    qfi_eigen,
    qfi_exact_sum,
    qfi_gaussian_integral_no_pump,
    qfi_variance,
    spin_squeezing_xi2,
)
from cavity_oat.model import ModelParams, PhotonInput
from cavity_oat.spin import AtomicDensityMatrix, AtomicState, DickeBasis, coherent_spin_state, jz_matrix, maximally_mixed
from oracles import oat_pure_state, qfi_from_spectrum, spin_matrices

FIG_A = ModelParams(N=100, U=1.0, W0=1.0, delta_c=1.0)
FIG_B = FIG_A.with_(eta=320.0)
NBAR = 40.0
SEED_A = PhotonInput.coherent(math.sqrt(NBAR))
TAU_A = 0.0025
TAU_B = crossover_times(FIG_B).tau_b


def _quiet(fn, *args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        return fn(*args, **kw)


def _crossover_level(N, f):
    return 0.5 * N * (1 + f) + 0.5 * N**2 * (1 - f)


# -- eigen / variance routes ----------------------------------------------------

@pytest.mark.parametrize("N", [1, 2, 5, 40, 100])
def test_css_qfi_is_n(N):
    rho = coherent_spin_state(N).density_matrix()
    assert qfi_eigen(rho).value == pytest.approx(N, rel=1e-10)
    v = qfi_variance(rho)
    assert v.value == pytest.approx(N, rel=1e-12)
    assert v.diagnostics.equality_residual_raw < 1e-12 * N**2


@pytest.mark.parametrize("N", [1, 4, 9])
def test_maximally_mixed_qfi_zero(N):
    assert qfi_eigen(maximally_mixed(N)).value == pytest.approx(0.0, abs=1e-12)
    assert qfi_eigen(maximally_mixed(N), jz_matrix(N)).value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("N", [2, 7, 30])
def test_noon_state_heisenberg(N):
    c = np.zeros(N + 1, complex)
    c[0] = c[-1] = 1 / math.sqrt(2)
    rho = AtomicState(DickeBasis(N), c).density_matrix()
    assert qfi_eigen(rho, jz_matrix(N)).value == pytest.approx(N**2, rel=1e-12)


def test_nonphysical_rejected():
    bad = np.diag([0.5, 0.5 + 1e-6, -1e-6]).astype(complex)
    with pytest.raises(NonPhysicalState):
        qfi_eigen(bad)


@given(st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_pure_states_routes_agree(N, seed):
    r = np.random.default_rng(seed)
    c = r.normal(size=N + 1) + 1j * r.normal(size=N + 1)
    rho = AtomicState(DickeBasis(N), c / np.linalg.norm(c)).density_matrix()
    e, v = qfi_eigen(rho).value, qfi_variance(rho).value
    assert abs(e - v) <= 1e-8 * max(1.0, v)
    assert e == pytest.approx(qfi_from_spectrum(rho.rho, spin_matrices(N)[1]), abs=1e-8 * max(1, e))


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_route_hierarchy_mixed(N, seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(N + 1, 3)) + 1j * r.normal(size=(N + 1, 3))
    rho = X @ X.conj().T
    rho = AtomicDensityMatrix(DickeBasis(N), rho / np.trace(rho))
    e, v = qfi_eigen(rho), qfi_variance(rho)
    assert e.value <= v.value + 1e-6
    assert -1e-9 <= e.value <= N**2 + 1e-6
    assert e.value == pytest.approx(qfi_from_spectrum(rho.rho, spin_matrices(N)[1]), abs=1e-8 * max(1, N**2))


@pytest.mark.parametrize("params,photon,tau", [(FIG_A, SEED_A, TAU_A), (FIG_B, PhotonInput.vacuum(), TAU_B)])
def test_equality_condition_closed_forms(params, photon, tau):
    r = np.random.default_rng(7)
    N = params.N
    for t in r.uniform(0, 4 * tau, 20):
        rho = evolve_closed_form(params, photon, t)
        e, v = qfi_eigen(rho), qfi_variance(rho)
        assert e.diagnostics.equality_residual_raw < 1e-10 * N**2
        assert abs(e.value - v.value) / e.value < 1e-6


# -- exact Dicke sum -----------------------------------------------------------------

@pytest.mark.parametrize("N", range(2, 11))
def test_t0_sum_identity_exact_arithmetic(N):
    j = sp.Rational(N, 2)
    ms = [-j + k for k in range(N + 1)]
    C2 = [sp.Rational(sp.binomial(N, k), 2**N) for k in range(N + 1)]
    total = 0
    for k in range(N - 1):
        m = ms[k]
        ladder = sp.sqrt((j - m) * (j + m + 1) * (j - m - 1) * (j + m + 2))
        total += sp.sqrt(C2[k] * C2[k + 2]) * ladder
    assert sp.simplify(2 * total - sp.Rational(N * (N - 1), 2)) == 0
    assert qfi_exact_sum(ModelParams(N=N), PhotonInput.vacuum(), 0.0).value == pytest.approx(N, rel=1e-13)


@given(st.integers(1, 40), st.floats(0, 2), st.floats(-1, 1), st.floats(0, 3), st.floats(0, 0.5))
def test_exact_sum_equals_variance_of_state(N, U, W0, amp, t):
    params = ModelParams(N=N, U=U, W0=W0, delta_c=0.7)
    photon = PhotonInput.coherent(amp)
    ref = qfi_variance(evolve_no_pump(params, amp, t)).value
    assert qfi_exact_sum(params, photon, t).value == pytest.approx(ref, rel=1e-8, abs=1e-9)


@pytest.mark.parametrize("t", [0.0, 0.004, 0.011, 0.03])
def test_exact_sum_equals_variance_pumped(t):
    ref = qfi_variance(evolve_pumped(FIG_B, t)).value
    assert qfi_exact_sum(FIG_B, PhotonInput.vacuum(), t).value == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("t", [0.0, 0.01, 0.1, 0.4])
def test_exact_sum_bare_oat(t):
    p = FIG_A.with_(W0=0.0, N=30)
    ref = qfi_eigen(oat_pure_state(30, 1.0, t)).value
    assert qfi_exact_sum(p, PhotonInput.coherent(3.0), t).value == pytest.approx(ref, rel=1e-8)


def test_crossover_level_at_tau_a():
    assert _crossover_level(100, math.exp(-2)) == pytest.approx(4380.09, abs=0.01)
    assert _quiet(qfi_closed_form_no_pump, FIG_A, NBAR, TAU_A).value == pytest.approx(_crossover_level(100, math.exp(-2)), rel=1e-14)


def test_exact_sum_near_crossover_level_at_tau_a():
    """Exact sum within 5% of the crossover-formula level at t = tau_a for the fig2-left parameters."""
    exact = qfi_exact_sum(FIG_A, SEED_A, TAU_A).value
    target = _crossover_level(100, math.exp(-2))
    assert abs(exact - target) / target < 0.05


# -- large-N closed forms ------------------------------------------------------------

def test_no_pump_closed_form_limits():
    assert _quiet(qfi_closed_form_no_pump, FIG_A, NBAR, 0.0).value == 100
    assert _quiet(qfi_closed_form_no_pump, FIG_A, NBAR, 1.0).value == pytest.approx(5050, rel=1e-12)


def test_crossover_times_reference_values():
    assert crossover_times(FIG_A, n_bar=NBAR).tau_a == pytest.approx(0.0025, rel=1e-12)
    assert crossover_times(FIG_B).tau_b == pytest.approx(0.0114, abs=0.0005)


def test_tau_b_printed_digits():
    """The quoted expansion 0.01137... for N=100, W0=1, eta=320."""
    tau_b = crossover_times(FIG_B).tau_b
    assert 0.01137 <= tau_b < 0.01138


@given(st.integers(1, 1000), st.floats(0.01, 10), st.floats(0.1, 100))
def test_tau_a_sqrt_law(N, W0, n_bar):
    p = ModelParams(N=N, W0=W0)
    assert crossover_times(p.with_(N=4 * N), n_bar).tau_a == pytest.approx(crossover_times(p, n_bar).tau_a / 2, rel=1e-12)


@given(st.integers(1, 200), st.floats(0.01, 5), st.floats(0.1, 100), st.floats(1, 500))
def test_crossover_functions_monotone(N, W0, n_bar, eta):
    c = crossover_times(ModelParams(N=N, W0=W0, eta=eta), n_bar)
    t = np.linspace(0, 5 * max(c.tau_a, c.tau_b), 200)
    for f in (c.f_a(t), c.f_b(t)):
        assert f[0] == 1.0
        assert np.all(f > 0) or np.all(f[f <= 0] == 0)
        assert np.all(f <= 1) and np.all(np.diff(f) <= 0)


def test_pumped_closed_form_t0_and_regime_warning():
    assert _quiet(qfi_closed_form_pumped, FIG_B, 0.0).value == 100
    with pytest.warns(RegimeWarning):
        r = qfi_closed_form_pumped(FIG_B, 0.5)
    assert r.warnings


def test_no_pump_regime_warnings():
    with pytest.warns(RegimeWarning):
        r = qfi_closed_form_no_pump(FIG_A, NBAR, 0.01)
    assert any("<< 1" in w for w in r.warnings)


def test_pumped_forms_agree_reference_parameters():
    ts = np.linspace(0, 4 * TAU_B, 400)
    for t in ts:
        if FIG_B.W0 * FIG_B.eta**2 * t**2 >= 100 * FIG_B.U:
            a = _quiet(qfi_closed_form_pumped, FIG_B, t, "with_u").value
            b = _quiet(qfi_closed_form_pumped, FIG_B, t, "tau_b").value
            assert abs(a - b) / b < 0.01


def test_pumped_forms_agree_parameter_sweep():
    """Relative difference < 1% whenever W0 eta^2 t^2 >= 100 U, over a parameter sweep."""
    worst = 0.0
    for N in (10, 100, 1000):
        for eta in (10.0, 320.0, 1e3, 1e4, 1e5):
            p = ModelParams(N=N, eta=eta)
            t0 = math.sqrt(100 * p.U / (p.W0 * eta**2))
            for t in t0 * np.linspace(1.0, 4.0, 60):
                a = _quiet(qfi_closed_form_pumped, p, t, "with_u").value
                b = _quiet(qfi_closed_form_pumped, p, t, "tau_b").value
                worst = max(worst, abs(a - b) / b)
    assert worst < 0.01


@pytest.mark.parametrize("params,photon,tau,closed", [
    (FIG_A, SEED_A, TAU_A, lambda t: qfi_closed_form_no_pump(FIG_A, NBAR, t).value),
    (FIG_B, PhotonInput.vacuum(), TAU_B, lambda t: qfi_closed_form_pumped(FIG_B, t).value),
])
def test_closed_forms_track_exact_sum(params, photon, tau, closed):
    """|closed - exact| / exact < 5% on [0, 2 tau] for the reference parameters."""
    for t in np.linspace(0, 2 * tau, 81):
        exact = qfi_exact_sum(params, photon, t).value
        assert abs(_quiet(closed, t) - exact) / exact < 0.05


# -- Gaussian-integral form ------------------------------------------------------------

@pytest.mark.parametrize("variant", ["literal", "exact-gaussian"])
@pytest.mark.parametrize("N", [2, 10, 100])
def test_gaussian_integral_t0(variant, N):
    assert _quiet(qfi_gaussian_integral_no_pump, ModelParams(N=N), NBAR, 0.0, variant).value == pytest.approx(N, rel=1e-12)


def test_gaussian_integral_t0_exact_arithmetic():
    N = sp.Symbol("N", positive=True)
    sigma = 2 / N
    value = N * (N + 1) / 2 - 2 * sp.sqrt(2 / (sigma * N)) * (N**2 / 4 - 1 / (2 * sigma))
    assert sp.simplify(value - N) == 0


@pytest.mark.parametrize("variant", ["literal", "exact-gaussian"])
def test_gaussian_integral_vs_final_form_small_u(variant):
    """U = W0 n_bar / 1000: Gaussian-integral form within 1% of the final form for t <= 2 tau_a."""
    p = FIG_A.with_(U=FIG_A.W0 * NBAR / 1000)
    for t in np.linspace(0, 2 * TAU_A, 101):
        g = _quiet(qfi_gaussian_integral_no_pump, p, NBAR, t, variant).value
        f = _quiet(qfi_closed_form_no_pump, p, NBAR, t).value
        assert abs(g - f) / f < 0.01


@pytest.mark.parametrize("variant", ["literal", "exact-gaussian"])
def test_gaussian_integral_vs_exact_sum(variant):
    """Within 3% of the exact sum for N = 100 with the reference parameters, t <= tau_a."""
    for t in np.linspace(0, TAU_A, 51):
        g = _quiet(qfi_gaussian_integral_no_pump, FIG_A, NBAR, t, variant).value
        exact = qfi_exact_sum(FIG_A, SEED_A, t).value
        assert abs(g - exact) / exact < 0.03


def test_gaussian_integral_variants_differ_only_through_sine_weight():
    t = 0.3 * TAU_A
    a = _quiet(qfi_gaussian_integral_no_pump, FIG_A, NBAR, t, "literal").value
    b = _quiet(qfi_gaussian_integral_no_pump, FIG_A, NBAR, t, "exact-gaussian").value
    assert a != b and abs(a - b) / b < 1e-3
    with pytest.raises(ValueError):
        qfi_gaussian_integral_no_pump(FIG_A, NBAR, t, "other")


# -- squeezing -----------------------------------------------------------------------

@pytest.mark.parametrize("N", [1, 10, 100])
def test_xi2_css_is_one(N):
    rho = coherent_spin_state(N).density_matrix()
    assert spin_squeezing_xi2(rho) == pytest.approx(1.0, rel=1e-12)
    assert spin_squeezing_xi2(rho, "perpendicular-min") == pytest.approx(1.0, rel=1e-12)


def test_xi2_depolarized():
    with pytest.raises(DepolarizedState):
        spin_squeezing_xi2(maximally_mixed(6))


def test_xi2_oat_perpendicular_min_squeezed():
    t = 0.25 * 100 ** (-2 / 3)
    rho = oat_state(ModelParams(N=100), t)
    assert spin_squeezing_xi2(rho, "perpendicular-min") < 1
    # brute-force minimum over the perpendicular angle of Jy cos(a) + Jz sin(a)
    _, jy, jz = spin_matrices(100)
    r = oat_pure_state(100, 1.0, t)
    jx = spin_matrices(100)[0]
    pol = np.real(np.trace(r @ jx)) ** 2
    var = [np.real(np.trace(r @ (np.cos(a) * jy + np.sin(a) * jz) @ (np.cos(a) * jy + np.sin(a) * jz)))
           for a in np.linspace(0, np.pi, 20001)]
    assert spin_squeezing_xi2(rho, "perpendicular-min") == pytest.approx(100 * min(var) / pol, rel=1e-6)


@given(st.integers(2, 40), st.floats(0, 1))
def test_literal_xi2_never_below_start_under_twisting(N, t):
    rho = oat_state(ModelParams(N=N), t)
    try:
        assert spin_squeezing_xi2(rho) >= 1 - 1e-9
    except DepolarizedState:
        pass


@given(st.integers(1, 60), st.floats(0, 3), st.floats(0, 0.05))
def test_qfi_bounds_on_scenario_states(N, amp, t):
    rho = evolve_no_pump(ModelParams(N=N), amp, t)
    f = qfi_eigen(rho).value
    assert N - 1e-6 <= f <= N**2 + 1e-6
