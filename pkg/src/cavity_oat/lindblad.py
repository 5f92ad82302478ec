"""Lossy joint atom-photon dynamics.

At ``J = 0`` the Hamiltonian commutes with ``Jz`` and the only jump operator
``a`` acts on photons, so the joint state splits into photonic coherence
blocks ``rho^(mm')`` that evolve independently::

    d/dt rho^(mm') = -i (H_m rho^(mm') - rho^(mm') H_m')
                     + kappa (a rho^(mm') a^dag - {n, rho^(mm')}/2)

with ``H_m = omega_m n + U m^2 - i eta (a^dag - a)``. Only ``m <= m'`` is stored.

Two frames are available.

``fock``
    Blocks are stored directly in the truncated Fock basis.
``displaced``
    Each block is written as
    ``rho^(ij) = exp(L_ij) D(alpha_i) r^(ij) D(alpha_j)^dag``, where
    ``alpha_m(t)`` is the damped, driven mean field of block ``m``. The
    mean-field motion and the scalar weight ``L_ij`` are integrated in
    closed form, so only the residual ``r^(ij)`` needs a Fock basis. For
    vacuum or coherent input the residual stays ``|0><0|`` exactly and no
    time stepping happens at all. This is what makes hundreds of photons
    affordable.

A dense path on the full tensor-product space supports ``J != 0`` and
serves as an oracle for small systems.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .errors import (
    BlockFormInvalid,
    CutoffExceeded,
    DimensionTooLarge,
    ResonanceError,
    StepTooLarge,
)
from .model import ModelParams, PhotonInput
from .spin import (
    AtomicDensityMatrix,
    AtomicState,
    DickeBasis,
    coherent_spin_state,
    jx_matrix,
    jz_matrix,
)

DENSE_DIM_LIMIT = 4096
COHERENT_NORM_FLOOR = 1 - 1e-10
TRACE_DRIFT_LIMIT = 1e-6

Frame = Literal["fock", "displaced"]


@dataclass(frozen=True)
class FockSpace:
    """Photon space truncated at ``n_max`` (dimension ``n_max + 1``)."""

    n_max: int

    def __post_init__(self):
        if isinstance(self.n_max, bool) or int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")
        object.__setattr__(self, "n_max", int(self.n_max))

    @property
    def dim(self) -> int:
        return self.n_max + 1

    def annihilation(self) -> np.ndarray:
        return np.diag(np.sqrt(np.arange(1, self.dim)), 1).astype(complex)

    def number(self) -> np.ndarray:
        return np.diag(np.arange(self.dim, dtype=float)).astype(complex)


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings.

    Parameters
    ----------
    dt : float, optional
        Maximum step. ``None`` picks ``safety / R`` with ``R`` an upper bound on
        the generator's spectral radius; the actual step is shrunk so that
        every segment ends exactly on its target time.
    safety : float
        Target ``R * dt`` when ``dt`` is automatic.
    cutoff_tolerance : float
        Largest allowed summed population of the top Fock level.
    hermitize_every : int
        Re-symmetrize diagonal blocks every this many steps.
    frame : {"fock", "displaced"}
    workers : int
        Threads over independent block chunks.
    """

    dt: float | None = None
    safety: float = 0.02
    cutoff_tolerance: float = 1e-8
    hermitize_every: int = 50
    frame: Frame = "fock"
    workers: int = 1
    method: Literal["rk4"] = "rk4"

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.safety > 0:
            raise ValueError("safety must be positive")
        if self.hermitize_every < 1:
            raise ValueError("hermitize_every must be >= 1")
        if self.frame not in ("fock", "displaced"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.method != "rk4":
            raise ValueError("only fixed-step RK4 is supported")


@dataclass(frozen=True, eq=False)
class JointBlockState:
    """Photonic coherence blocks for every Dicke pair ``i <= j``.

    ``blocks[p]`` belongs to the pair ``(rows[p], cols[p])`` from
    ``np.triu_indices(N + 1)``. In the displaced frame ``alpha`` holds the
    per-``m`` displacement and ``log_weight`` the per-pair scalar weight; both
    are zero in the Fock frame.
    """

    basis: DickeBasis
    fock: FockSpace
    blocks: np.ndarray
    t: float = 0.0
    frame: Frame = "fock"
    alpha: np.ndarray | None = None
    log_weight: np.ndarray | None = None
    coherent_norm: float = 1.0

    def __post_init__(self):
        P = self.basis.dim * (self.basis.dim + 1) // 2
        d = self.fock.dim
        if self.blocks.shape != (P, d, d):
            raise ValueError(f"blocks shape {self.blocks.shape} != {(P, d, d)}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", np.zeros(self.basis.dim, complex))
        if self.log_weight is None:
            object.__setattr__(self, "log_weight", np.zeros(P, complex))

    @property
    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.basis.dim)

    @property
    def diagonal_index(self) -> np.ndarray:
        """Position in ``blocks`` of each diagonal pair ``(m, m)``."""
        i, j = self.pairs
        return np.flatnonzero(i == j)

    def block(self, i: int, j: int) -> np.ndarray:
        """Block ``(i, j)`` in the state's own frame; lower pairs via ``adjoint``."""
        if i > j:
            return self.block(j, i).conj().T
        n = self.basis.dim
        p = i * n - i * (i - 1) // 2 + (j - i)
        return self.blocks[p]


@dataclass(frozen=True, eq=False)
class DenseJointState:
    """Full density matrix on ``Dicke (x) Fock``, atom index major."""

    basis: DickeBasis
    fock: FockSpace
    rho: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        D = self.basis.dim * self.fock.dim
        if self.rho.shape != (D, D):
            raise ValueError(f"dense state shape {self.rho.shape} != {(D, D)}")


@dataclass(frozen=True)
class PhotonObservables:
    n_mean: float
    n_var: float
    top_level_population: float


# ---------------------------------------------------------------------------
# Hamiltonians


def build_hamiltonian_block(params: ModelParams, m: float, fock: FockSpace) -> np.ndarray:
    """Photonic Hamiltonian of Dicke block ``m``.

    ``H_m = omega_m n + U m^2 - i eta (a^dag - a)`` with ``omega_m = -delta_c + 2 W0 m^2``.

    Raises
    ------
    BlockFormInvalid
        If ``J != 0``.
    """
    if params.J != 0.0:
        raise BlockFormInvalid("block decomposition requires J = 0; use the dense path")
    omega = -params.delta_c + 2.0 * params.W0 * m * m
    a = fock.annihilation()
    H = np.diag(omega * np.arange(fock.dim) + params.U * m * m).astype(complex)
    H += -1j * params.eta * (a.conj().T - a)
    return H


def build_dense_hamiltonian(params: ModelParams, fock: FockSpace) -> np.ndarray:
    """Joint Hamiltonian including the tunneling term ``-2 J Jx``."""
    jz = jz_matrix(params.N).matrix
    ia = np.eye(params.N + 1)
    ip = np.eye(fock.dim)
    a = fock.annihilation()
    n = fock.number()
    omega = -params.delta_c * ia + 2.0 * params.W0 * (jz @ jz)
    H = np.kron(params.U * (jz @ jz), ip) + np.kron(omega, n)
    H = H + np.kron(ia, -1j * params.eta * (a.conj().T - a))
    if params.J != 0.0:
        H = H + np.kron(-2.0 * params.J * jx_matrix(params.N).matrix, ip)
    return H


# ---------------------------------------------------------------------------
# Initial states and cutoff


def coherent_amplitudes(alpha: complex, fock: FockSpace) -> tuple[np.ndarray, float]:
    """Truncated coherent state, renormalized; returns ``(psi, norm_before)``."""
    n = np.arange(fock.dim)
    if alpha == 0:
        psi = np.zeros(fock.dim, complex)
        psi[0] = 1.0
        return psi, 1.0
    logmag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    psi = np.exp(logmag) * np.exp(1j * n * np.angle(alpha))
    norm = float(np.sum(np.abs(psi) ** 2))
    return psi / math.sqrt(norm), norm


def _photon_vector(photon: PhotonInput, fock: FockSpace) -> tuple[np.ndarray, float]:
    if photon.kind == "fock":
        if photon.n > fock.n_max:
            raise CutoffExceeded(f"Fock input n={photon.n} exceeds n_max={fock.n_max}")
        psi = np.zeros(fock.dim, complex)
        psi[photon.n] = 1.0
        return psi, 1.0
    psi, norm = coherent_amplitudes(photon.alpha, fock)
    if norm < COHERENT_NORM_FLOOR:
        raise CutoffExceeded(
            f"coherent amplitude {photon.alpha} keeps only {norm:.12f} of its norm below n_max={fock.n_max}"
        )
    return psi, norm


def _atomic_rho(N: int, atomic) -> np.ndarray:
    if atomic is None:
        c = coherent_spin_state(N).amplitudes
        return np.outer(c, c.conj())
    if isinstance(atomic, AtomicState):
        return np.outer(atomic.amplitudes, atomic.amplitudes.conj())
    if isinstance(atomic, AtomicDensityMatrix):
        return np.array(atomic.rho)
    raise TypeError("atomic must be an AtomicState or AtomicDensityMatrix")


def initial_block_state(params: ModelParams, photon: PhotonInput, n_max: int,
                        frame: Frame = "fock", atomic=None) -> JointBlockState:
    """Product of an atomic state (coherent spin state by default) and ``photon``.

    In the displaced frame a coherent seed becomes the displacement itself
    and the residual starts in vacuum.
    """
    basis = DickeBasis(params.N)
    fock = FockSpace(n_max)
    rho_a = _atomic_rho(params.N, atomic)
    i, j = np.triu_indices(basis.dim)
    alpha = np.zeros(basis.dim, complex)
    if frame == "displaced" and photon.kind == "coherent":
        alpha[:] = photon.alpha
        psi, norm = _photon_vector(PhotonInput.vacuum(), fock)
    else:
        psi, norm = _photon_vector(photon, fock)
    proj = np.outer(psi, psi.conj())
    blocks = rho_a[i, j][:, None, None] * proj[None, :, :]
    return JointBlockState(basis, fock, blocks, 0.0, frame, alpha, None, norm)


def initial_dense_state(params: ModelParams, photon: PhotonInput, n_max: int, atomic=None) -> DenseJointState:
    basis = DickeBasis(params.N)
    fock = FockSpace(n_max)
    if basis.dim * fock.dim > DENSE_DIM_LIMIT:
        raise DimensionTooLarge(f"dense dimension {basis.dim * fock.dim} exceeds {DENSE_DIM_LIMIT}")
    psi, _ = _photon_vector(photon, fock)
    rho = np.kron(_atomic_rho(params.N, atomic), np.outer(psi, psi.conj()))
    return DenseJointState(basis, fock, rho, 0.0)


def _lambda(params: ModelParams) -> np.ndarray:
    return 1j * params.omega() + 0.5 * params.kappa


def _amplitude_bound(params: ModelParams, photon: PhotonInput, t_end: float) -> np.ndarray:
    """Per-block upper bound on ``|alpha_m(t)|`` for ``0 <= t <= t_end``."""
    r0 = abs(photon.alpha) if photon.kind == "coherent" else math.sqrt(photon.n)
    if params.eta == 0.0:
        return np.full(params.N + 1, r0)
    lam = np.abs(_lambda(params))
    with np.errstate(divide="ignore"):
        cap = np.where(lam > 0, 2 * abs(params.eta) / lam, np.inf)
    return r0 + np.minimum(abs(params.eta) * t_end, cap)


def choose_fock_cutoff(params: ModelParams, photon_input: PhotonInput, t_end: float,
                       frame: Frame = "fock") -> int:
    """Heuristic cutoff ``ceil(mu + 8 sqrt(mu) + 10)``.

    In the Fock frame ``mu`` bounds the largest block photon number reached
    on ``[0, t_end]``: ``max_m (r0 + min(|eta| t_end, 2|eta|/|lambda_m|))^2`` with
    ``r0`` the seed amplitude. In the displaced frame only a Fock seed needs
    room, so ``mu = n``. The result is certified a posteriori by the
    top-level population check.
    """
    if frame == "displaced":
        mu = float(photon_input.n) if photon_input.kind == "fock" else 0.0
    else:
        mu = float(np.max(_amplitude_bound(params, photon_input, t_end)) ** 2)
    return int(math.ceil(mu + 8 * math.sqrt(mu) + 10))


def suggest_dt(params: ModelParams, n_max: int, frame: Frame = "fock",
               safety: float = 0.02, alpha_bound: float = 0.0) -> float:
    """``safety / R`` with ``R`` bounding the block generator's spectral radius."""
    wmax = float(np.max(np.abs(params.omega())))
    N = params.N
    rate = 2 * wmax * n_max + params.kappa * n_max
    if frame == "fock":
        rate += abs(params.U) * N * N / 4 + 4 * abs(params.eta) * math.sqrt(n_max + 1)
        rate += 4 * abs(params.J) * N / 2
    else:
        rate += 4 * params.kappa * alpha_bound * math.sqrt(n_max + 1)
    return safety / max(rate, 1e-300)


# ---------------------------------------------------------------------------
# Block right-hand side


class _BlockGenerator:
    """Vectorized generator for a chunk of blocks."""

    def __init__(self, params: ModelParams, rows, cols, d: int, frame: Frame):
        self.frame = frame
        self.kappa = params.kappa
        self.eta = params.eta if frame == "fock" else 0.0
        om = params.omega()
        m2 = params.m**2
        k = np.arange(d, dtype=float)
        wi = om[rows][:, None, None]
        wj = om[cols][:, None, None]
        phase = wi * k[None, :, None] - wj * k[None, None, :]
        if frame == "fock":
            phase = phase + (params.U * (m2[rows] - m2[cols]))[:, None, None]
        self.diag = -1j * phase - 0.5 * params.kappa * (k[None, :, None] + k[None, None, :])
        self.sq = np.sqrt(np.arange(1, d, dtype=float))
        self.sq2 = self.sq[:, None] * self.sq[None, :]
        self.rows = rows
        self.cols = cols
        # displaced frame: alpha(t0 + s) = p + q exp(-lam s), set per segment
        self.cross = None

    def set_cross(self, cross: Callable[[float], tuple[np.ndarray, np.ndarray]] | None):
        self.cross = cross

    def __call__(self, s: float, B: np.ndarray) -> np.ndarray:
        sq = self.sq
        out = self.diag * B
        if self.eta != 0.0:
            e = self.eta
            out[:, :-1, :] += e * sq[:, None] * B[:, 1:, :]
            out[:, 1:, :] -= e * sq[:, None] * B[:, :-1, :]
            out[:, :, :-1] += e * B[:, :, 1:] * sq
            out[:, :, 1:] -= e * B[:, :, :-1] * sq
        if self.kappa != 0.0:
            out[:, :-1, :-1] += self.kappa * self.sq2 * B[:, 1:, 1:]
            if self.cross is not None:
                c1, c2 = self.cross(s)
                out[:, :-1, :] += c1[:, None, None] * sq[:, None] * B[:, 1:, :]
                out[:, :, :-1] += c2[:, None, None] * B[:, :, 1:] * sq
        return out


def _rk4(f, s, y, h):
    k1 = f(s, y)
    k2 = f(s + h / 2, y + (h / 2) * k1)
    k3 = f(s + h / 2, y + (h / 2) * k2)
    k4 = f(s + h, y + h * k3)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _phi1(z):
    """``(exp(z) - 1) / z`` for complex arrays, series near zero."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 1 + zs / 2 * (1 + zs / 3 * (1 + zs / 4 * (1 + zs / 5)))
    zl = z[~small]
    out[~small] = np.expm1(zl.real) * np.exp(1j * zl.imag) / zl + (np.exp(1j * zl.imag) - 1) / zl
    return out


def _exp_integral(mu, T):
    """``int_0^T exp(-mu s) ds``."""
    return T * _phi1(-np.asarray(mu) * T)


class _MeanField:
    """Closed-form ``alpha_m(t0 + s) = p_m + q_m exp(-lam_m s)``."""

    def __init__(self, params: ModelParams, alpha0: np.ndarray):
        lam = _lambda(params)
        if params.eta != 0.0:
            bad = np.abs(lam) <= 1e-12 * max(abs(params.delta_c), abs(params.W0), params.kappa, 1e-300)
            if np.any(bad):
                raise ResonanceError("displaced frame needs lambda_m != 0 for every block when pumped")
            p = -params.eta / lam
        else:
            p = np.zeros_like(lam)
        self.lam = lam
        self.p = p
        self.q = alpha0 - p

    def alpha(self, s: float) -> np.ndarray:
        return self.p + self.q * np.exp(-self.lam * s)

    def log_weight_increment(self, params: ModelParams, rows, cols, T: float) -> np.ndarray:
        """Exact increment of ``L_ij`` over ``[t0, t0 + T]``.

        ``dL_ij/dt = -i U (m_i^2 - m_j^2) + i eta (Im alpha_i - Im alpha_j)
        + kappa (alpha_i conj(alpha_j) - |alpha_i|^2 / 2 - |alpha_j|^2 / 2)``.
        """
        p, q, lam = self.p, self.q, self.lam
        m2 = params.m**2
        lin = p * T + q * _exp_integral(lam, T)
        out = -1j * params.U * (m2[rows] - m2[cols]) * T
        out = out + 1j * params.eta * (lin[rows].imag - lin[cols].imag)
        if params.kappa != 0.0:
            def prod(i, j):
                return (p[i] * np.conj(p[j]) * T
                        + p[i] * np.conj(q[j]) * _exp_integral(np.conj(lam[j]), T)
                        + q[i] * np.conj(p[j]) * _exp_integral(lam[i], T)
                        + q[i] * np.conj(q[j]) * _exp_integral(lam[i] + np.conj(lam[j]), T))
            sq_norm = prod(np.arange(len(p)), np.arange(len(p))).real
            out = out + params.kappa * (prod(rows, cols) - 0.5 * sq_norm[rows] - 0.5 * sq_norm[cols])
        return out


def _is_vacuum_residual(blocks: np.ndarray) -> bool:
    return not np.any(blocks[:, 1:, :]) and not np.any(blocks[:, :, 1:])


def _integrate_chunk(gen: _BlockGenerator, B: np.ndarray, T: float, n_steps: int,
                     diag_local: np.ndarray, hermitize_every: int, t0: float) -> np.ndarray:
    h = T / n_steps
    tr0 = np.trace(B[diag_local], axis1=1, axis2=2).real.copy()
    for step in range(1, n_steps + 1):
        B = _rk4(gen, (step - 1) * h, B, h)
        if step % hermitize_every == 0 or step == n_steps:
            if not np.all(np.isfinite(B)):
                raise StepTooLarge(f"non-finite block entries at t={t0 + step * h:.6g}; reduce dt")
            tr = np.trace(B[diag_local], axis1=1, axis2=2).real
            drift = float(np.max(np.abs(tr - tr0), initial=0.0))
            if drift > TRACE_DRIFT_LIMIT:
                raise StepTooLarge(f"trace drift {drift:.3e} at t={t0 + step * h:.6g}; reduce dt")
            D = B[diag_local]
            B[diag_local] = 0.5 * (D + np.conj(np.swapaxes(D, 1, 2)))
    return B


def _n_steps(T: float, dt: float) -> int:
    return max(1, int(math.ceil(T / dt - 1e-9)))


def evolve_blocks(state: JointBlockState, params: ModelParams, config: IntegratorConfig,
                  t_end: float) -> JointBlockState:
    """Advance every coherence block to ``t_end``.

    Raises
    ------
    BlockFormInvalid
        If ``J != 0``.
    StepTooLarge
        On non-finite entries or diagonal-block trace drift above ``1e-6``.
    CutoffExceeded
        If the summed top-level population reaches ``config.cutoff_tolerance``.
    """
    if params.J != 0.0:
        raise BlockFormInvalid("block decomposition requires J = 0; use the dense path")
    if params.N != state.basis.N:
        raise ValueError("params.N does not match the state")
    T = float(t_end) - state.t
    if T < -1e-15:
        raise ValueError(f"t_end={t_end} precedes the state time {state.t}")
    if T <= 0:
        return state
    rows, cols = state.pairs
    d = state.fock.dim
    frame = state.frame
    B = np.array(state.blocks, copy=True)
    alpha_new = state.alpha
    logw = state.log_weight
    mf = None
    if frame == "displaced":
        mf = _MeanField(params, np.asarray(state.alpha))
        alpha_new = mf.alpha(T)
        logw = state.log_weight + mf.log_weight_increment(params, rows, cols, T)
    static = frame == "displaced" and _is_vacuum_residual(B)
    if not static:
        if config.dt is not None:
            dt = config.dt
        else:
            bound = float(np.max(np.abs(np.concatenate([mf.p, mf.p + mf.q])))) if mf else 0.0
            bound += float(np.max(np.abs(mf.q))) if mf else 0.0
            dt = suggest_dt(params, state.fock.n_max, frame, config.safety, bound)
        n_steps = _n_steps(T, dt)
        B = _run_chunks(params, config, B, rows, cols, d, frame, mf, T, n_steps, state.t)
    new = JointBlockState(state.basis, state.fock, B, state.t + T, frame, alpha_new, logw, state.coherent_norm)
    top = photon_observables(new).top_level_population
    if top >= config.cutoff_tolerance:
        raise CutoffExceeded(
            f"top Fock level holds {top:.3e} >= {config.cutoff_tolerance:.1e} at t={new.t:.6g}; raise n_max"
        )
    return new


def _run_chunks(params, config, B, rows, cols, d, frame, mf, T, n_steps, t0):
    P = B.shape[0]
    n_chunks = min(config.workers, P)
    bounds = np.linspace(0, P, n_chunks + 1).astype(int)

    def work(c):
        lo, hi = bounds[c], bounds[c + 1]
        r, k = rows[lo:hi], cols[lo:hi]
        gen = _BlockGenerator(params, r, k, d, frame)
        if mf is not None and params.kappa != 0.0:
            kap = params.kappa

            def cross(s):
                a = mf.alpha(s)
                return kap * (np.conj(a[k]) - np.conj(a[r])), kap * (a[r] - a[k])

            gen.set_cross(cross)
        diag_local = np.flatnonzero(r == k)
        return _integrate_chunk(gen, B[lo:hi], T, n_steps, diag_local, config.hermitize_every, t0)

    if n_chunks == 1:
        return work(0)
    with ThreadPoolExecutor(max_workers=n_chunks) as pool:
        parts = list(pool.map(work, range(n_chunks)))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Dense path


def evolve_dense(state: DenseJointState, params: ModelParams, config: IntegratorConfig,
                 t_end: float) -> DenseJointState:
    """Integrate the full master equation on the tensor-product space."""
    D = state.rho.shape[0]
    if D > DENSE_DIM_LIMIT:
        raise DimensionTooLarge(f"dense dimension {D} exceeds {DENSE_DIM_LIMIT}")
    T = float(t_end) - state.t
    if T < -1e-15:
        raise ValueError(f"t_end={t_end} precedes the state time {state.t}")
    if T <= 0:
        return state
    H = build_dense_hamiltonian(params, state.fock)
    A = np.kron(np.eye(state.basis.dim), state.fock.annihilation())
    AdA = A.conj().T @ A
    Heff = H - 0.5j * params.kappa * AdA
    Heff_dag = Heff.conj().T
    Ad = A.conj().T
    kap = params.kappa

    def f(_s, r):
        out = -1j * (Heff @ r - r @ Heff_dag)
        if kap:
            out += kap * (A @ r @ Ad)
        return out

    dt = config.dt or suggest_dt(params, state.fock.n_max, "fock", config.safety)
    n_steps = _n_steps(T, dt)
    h = T / n_steps
    r = np.array(state.rho, copy=True)
    for step in range(1, n_steps + 1):
        r = _rk4(f, (step - 1) * h, r, h)
        if step % config.hermitize_every == 0 or step == n_steps:
            if not np.all(np.isfinite(r)):
                raise StepTooLarge(f"non-finite dense entries at t={state.t + step * h:.6g}")
            drift = abs(np.trace(r).real - np.trace(state.rho).real)
            if drift > TRACE_DRIFT_LIMIT:
                raise StepTooLarge(f"trace drift {drift:.3e} at t={state.t + step * h:.6g}; reduce dt")
            r = 0.5 * (r + r.conj().T)
    new = DenseJointState(state.basis, state.fock, r, state.t + T)
    top = photon_observables(new).top_level_population
    if top >= config.cutoff_tolerance:
        raise CutoffExceeded(f"top Fock level holds {top:.3e} at t={new.t:.6g}; raise n_max")
    return new


def blocks_to_dense(state: JointBlockState) -> DenseJointState:
    """Assemble the full joint matrix from Fock-frame blocks."""
    if state.frame != "fock":
        raise ValueError("only Fock-frame blocks can be assembled densely")
    n, d = state.basis.dim, state.fock.dim
    full = np.zeros((n, d, n, d), complex)
    rows, cols = state.pairs
    full[rows, :, cols, :] = state.blocks
    lower = rows != cols
    full[cols[lower], :, rows[lower], :] = np.conj(np.swapaxes(state.blocks[lower], 1, 2))
    return DenseJointState(state.basis, state.fock, full.reshape(n * d, n * d), state.t)


# ---------------------------------------------------------------------------
# Reductions


def displacement_matrix_elements(delta: np.ndarray, d: int) -> np.ndarray:
    """``out[p, l, k] = <l| D(delta_p) |k>`` for ``l, k < d``."""
    delta = np.atleast_1d(np.asarray(delta, dtype=complex))
    x = np.abs(delta) ** 2
    env = np.exp(-0.5 * x)
    out = np.zeros((delta.size, d, d), complex)
    lg = gammaln(np.arange(d) + 1.0)
    for l in range(d):
        for k in range(d):
            if l >= k:
                s = l - k
                pref = np.exp(0.5 * (lg[k] - lg[l]))
                out[:, l, k] = pref * delta**s * env * eval_genlaguerre(k, s, x)
            else:
                s = k - l
                pref = np.exp(0.5 * (lg[l] - lg[k]))
                out[:, l, k] = pref * (-np.conj(delta)) ** s * env * eval_genlaguerre(l, s, x)
    return out


def _pair_traces(state) -> np.ndarray:
    B = state.blocks
    if state.frame == "fock":
        return np.trace(B, axis1=1, axis2=2)
    rows, cols = state.pairs
    a = state.alpha
    delta = a[rows] - a[cols]
    pref = np.exp(state.log_weight + 1j * np.imag(np.conj(a[cols]) * a[rows]))
    if _is_vacuum_residual(B):
        inner = B[:, 0, 0] * np.exp(-0.5 * np.abs(delta) ** 2)
    else:
        Dm = displacement_matrix_elements(delta, state.fock.dim)
        # Tr[r D] = sum_kl r_kl D_lk
        inner = np.einsum("pkl,plk->p", B, Dm)
    return pref * inner


def partial_trace_photons(state, check: bool = True) -> AtomicDensityMatrix:
    """Reduced atomic state ``rho_A[m, m'] = Tr rho^(mm')``."""
    if isinstance(state, DenseJointState):
        n, d = state.basis.dim, state.fock.dim
        r = np.einsum("iaja->ij", state.rho.reshape(n, d, n, d))
        r = 0.5 * (r + r.conj().T)
        return AtomicDensityMatrix(state.basis, r, check=check)
    n = state.basis.dim
    rows, cols = state.pairs
    tr = _pair_traces(state)
    r = np.zeros((n, n), complex)
    r[rows, cols] = tr
    r[cols, rows] = np.conj(tr)
    r[np.diag_indices(n)] = np.real(np.diag(r))
    return AtomicDensityMatrix(state.basis, r, check=check)


def photon_observables(state) -> PhotonObservables:
    """Mean and variance of ``n`` and the summed top-level population.

    In the displaced frame the top-level population refers to the residual
    ``r``, which is what the truncation acts on.
    """
    if isinstance(state, DenseJointState):
        n, d = state.basis.dim, state.fock.dim
        r4 = state.rho.reshape(n, d, n, d)
        rp = np.einsum("iaib->ab", r4)
        k = np.arange(d)
        pk = np.real(np.diag(rp))
        mean = float(np.sum(k * pk))
        return PhotonObservables(mean, float(np.sum(k * k * pk) - mean**2), float(pk[-1]))
    diag = state.blocks[state.diagonal_index]
    d = state.fock.dim
    k = np.arange(d, dtype=float)
    top = float(np.sum(np.abs(diag[:, -1, -1])))
    if state.frame == "fock":
        pk = np.real(np.einsum("pkk->k", diag))
        mean = float(np.sum(k * pk))
        return PhotonObservables(mean, float(np.sum(k * k * pk) - mean**2), top)
    a = FockSpace(state.fock.n_max).annihilation()
    n_op = np.diag(k).astype(complex)
    mean = 0.0
    second = 0.0
    for idx, alpha in enumerate(state.alpha):
        M = n_op + alpha * a.conj().T + np.conj(alpha) * a + abs(alpha) ** 2 * np.eye(d)
        r = diag[idx]
        mean += float(np.real(np.sum(r * M.T)))
        second += float(np.real(np.sum(r * (M @ M).T)))
    return PhotonObservables(mean, second - mean**2, top)


# ---------------------------------------------------------------------------
# Trajectory helper


@dataclass
class Trajectory:
    times: np.ndarray
    atomic: list[AtomicDensityMatrix] = field(default_factory=list)
    photons: list[PhotonObservables] = field(default_factory=list)
    n_max: int = 0


def run_blocks(params: ModelParams, photon: PhotonInput, times, config: IntegratorConfig | None = None,
               n_max: int | None = None, atomic=None) -> Trajectory:
    """Evolve from ``t = 0`` through sorted ``times``, recording reduced states."""
    config = config or IntegratorConfig()
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[0] < 0):
        raise ValueError("times must be non-negative and non-decreasing")
    t_end = float(times[-1]) if times.size else 0.0
    if n_max is None:
        n_max = choose_fock_cutoff(params, photon, t_end, config.frame)
    state = initial_block_state(params, photon, n_max, config.frame, atomic)
    traj = Trajectory(times, n_max=n_max)
    for t in times:
        state = evolve_blocks(state, params, config, t)
        traj.atomic.append(partial_trace_photons(state))
        traj.photons.append(photon_observables(state))
    return traj


def run_dense(params: ModelParams, photon: PhotonInput, times, config: IntegratorConfig | None = None,
              n_max: int | None = None, atomic=None) -> Trajectory:
    config = config or IntegratorConfig()
    times = np.asarray(times, dtype=float)
    t_end = float(times[-1]) if times.size else 0.0
    if n_max is None:
        n_max = choose_fock_cutoff(params, photon, t_end, "fock")
    state = initial_dense_state(params, photon, n_max, atomic)
    traj = Trajectory(times, n_max=n_max)
    for t in times:
        state = evolve_dense(state, params, config, t)
        traj.atomic.append(partial_trace_photons(state))
        traj.photons.append(photon_observables(state))
    return traj


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(state: JointBlockState, params: ModelParams, path) -> None:
    """Write all blocks plus an ``(N, n_max, t, params, frame)`` header; bit-exact."""
    header = {
        "N": state.basis.N,
        "n_max": state.fock.n_max,
        "t": float.hex(float(state.t)),
        "frame": state.frame,
        "coherent_norm": float.hex(float(state.coherent_norm)),
        "params": {k: (float.hex(v) if isinstance(v, float) else v) for k, v in vars(params).items()},
    }
    raw = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, header=raw, blocks=state.blocks, alpha=state.alpha, log_weight=state.log_weight)


def load_checkpoint(path) -> tuple[JointBlockState, ModelParams]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        blocks, alpha, logw = z["blocks"], z["alpha"], z["log_weight"]
    pdict = {k: (float.fromhex(v) if isinstance(v, str) else v) for k, v in header["params"].items()}
    params = ModelParams(**pdict)
    state = JointBlockState(
        DickeBasis(header["N"]), FockSpace(header["n_max"]), blocks,
        float.fromhex(header["t"]), header["frame"], alpha, logw,
        float.fromhex(header["coherent_norm"]),
    )
    return state, params


def with_frame(config: IntegratorConfig, frame: Frame) -> IntegratorConfig:
    return replace(config, frame=frame)
