"""Collective spin algebra in the symmetric Dicke basis.

Every matrix in the package uses the same ordering: row/column ``k``
corresponds to ``m = -N/2 + k``, i.e. m ascending. Half-integer ``m`` values
are carried as the integer ``2m`` and only converted to float for arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .errors import InvalidStateError

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_FLOOR = -1e-8
NORM_TOL = 1e-12


def _frozen(array, dtype=complex):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DickeBasis:
    """Symmetric subspace of ``N`` two-mode bosons, ``dim = N + 1``."""

    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"atom number must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dim(self) -> int:
        return self.N + 1

    @property
    def j(self) -> float:
        return self.N / 2

    @cached_property
    def two_m(self) -> np.ndarray:
        """Exact ``2m`` labels, ascending from ``-N`` to ``N`` in steps of 2."""
        out = np.arange(-self.N, self.N + 1, 2, dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def m(self) -> np.ndarray:
        out = self.two_m / 2.0
        out.setflags(write=False)
        return out

    def index(self, m: float) -> int:
        """Row index of the Dicke state with eigenvalue ``m``."""
        two_m = 2 * m
        if two_m != round(two_m) or (round(two_m) + self.N) % 2:
            raise ValueError(f"m={m} is not a valid label for N={self.N}")
        k = (round(two_m) + self.N) // 2
        if not 0 <= k <= self.N:
            raise ValueError(f"m={m} outside [-N/2, N/2] for N={self.N}")
        return k


@dataclass(frozen=True, eq=False)
class CollectiveSpinOperator:
    basis: DickeBasis
    matrix: np.ndarray

    def __post_init__(self):
        mat = _frozen(self.matrix)
        if mat.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(f"operator shape {mat.shape} does not match dim {self.basis.dim}")
        object.__setattr__(self, "matrix", mat)

    @property
    def is_hermitian(self) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= 1e-12)

    def __matmul__(self, other):
        if isinstance(other, CollectiveSpinOperator):
            return CollectiveSpinOperator(self.basis, self.matrix @ other.matrix)
        return self.matrix @ other


@dataclass(frozen=True, eq=False)
class AtomicState:
    """Pure atomic state given by its Dicke amplitudes ``C_m``."""

    basis: DickeBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = _frozen(self.amplitudes)
        if amp.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} amplitudes, got shape {amp.shape}")
        norm = float(np.sum(np.abs(amp) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidStateError(f"state not normalized: sum |C_m|^2 = {norm!r}")
        object.__setattr__(self, "amplitudes", amp)

    def density_matrix(self) -> "AtomicDensityMatrix":
        return AtomicDensityMatrix(self.basis, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class AtomicDensityMatrix:
    """Validated ``(N+1) x (N+1)`` density matrix over the Dicke basis.

    Construction checks Hermiticity, unit trace and the PSD floor; pass
    ``check=False`` only for intermediate objects that are validated later.
    """

    basis: DickeBasis
    rho: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        rho = _frozen(self.rho)
        dim = self.basis.dim
        if rho.shape != (dim, dim):
            raise ValueError(f"density matrix shape {rho.shape} does not match dim {dim}")
        if self.check:
            herm = float(np.max(np.abs(rho - rho.conj().T)))
            if herm > HERMITIAN_TOL:
                raise InvalidStateError(f"density matrix not Hermitian (max deviation {herm:.3e})")
            tr = complex(np.trace(rho))
            if abs(tr - 1.0) > TRACE_TOL:
                raise InvalidStateError(f"density matrix trace {tr:.15g} != 1")
            lam_min = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
            if lam_min < PSD_FLOOR:
                raise InvalidStateError(f"density matrix has eigenvalue {lam_min:.3e} < {PSD_FLOOR}")
        object.__setattr__(self, "rho", rho)

    @property
    def N(self) -> int:
        return self.basis.N


def _ladder_coefficients(basis: DickeBasis) -> np.ndarray:
    # <m+1|J_+|m> for m = -j .. j-1
    j = basis.j
    m = basis.m[:-1]
    return np.sqrt(j * (j + 1) - m * (m + 1))


def _require_n(N) -> DickeBasis:
    if N == 0:
        raise ValueError("N = 0 carries no dynamics; need N >= 1")
    return DickeBasis(N)


def jplus_matrix(N: int) -> CollectiveSpinOperator:
    basis = _require_n(N)
    return CollectiveSpinOperator(basis, np.diag(_ladder_coefficients(basis), -1))


def jminus_matrix(N: int) -> CollectiveSpinOperator:
    basis = _require_n(N)
    return CollectiveSpinOperator(basis, np.diag(_ladder_coefficients(basis), 1))


def jx_matrix(N: int) -> CollectiveSpinOperator:
    basis = _require_n(N)
    jp = np.diag(_ladder_coefficients(basis), -1)
    return CollectiveSpinOperator(basis, (jp + jp.T) / 2)


def jy_matrix(N: int) -> CollectiveSpinOperator:
    basis = _require_n(N)
    jp = np.diag(_ladder_coefficients(basis), -1).astype(complex)
    return CollectiveSpinOperator(basis, (jp - jp.T) / 2j)


def jz_matrix(N: int) -> CollectiveSpinOperator:
    basis = _require_n(N)
    return CollectiveSpinOperator(basis, np.diag(basis.m))


def log_binomial(N: int, k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)


def coherent_spin_state(N: int) -> AtomicState:
    """All atoms in the symmetric superposition of the two modes.

    Amplitudes are ``C_m = sqrt(binom(N, m + N/2) / 2**N)``, real and
    non-negative; the state is polarized along +x.
    """
    basis = _require_n(N)
    k = np.arange(basis.dim)
    amp = np.exp(0.5 * (log_binomial(N, k) - N * np.log(2.0)))
    # restore exact mirror symmetry C_m = C_-m lost to gammaln rounding
    amp = 0.5 * (amp + amp[::-1])
    amp /= np.sqrt(np.sum(amp**2))
    return AtomicState(basis, amp)


def maximally_mixed(N: int) -> AtomicDensityMatrix:
    basis = _require_n(N)
    return AtomicDensityMatrix(basis, np.eye(basis.dim) / basis.dim)


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, (CollectiveSpinOperator,)):
        return x.matrix
    if isinstance(x, AtomicDensityMatrix):
        return x.rho
    return np.asarray(x)


def expectation(op, rho) -> complex:
    """``Tr[rho @ op]``; raises ``ValueError`` on a dimension mismatch."""
    a = _as_matrix(op)
    r = _as_matrix(rho)
    if a.shape != r.shape:
        raise ValueError(f"dimension mismatch: operator {a.shape} vs state {r.shape}")
    # Tr[rho A] = sum_ij rho_ij A_ji without forming the product
    return complex(np.sum(r * a.T))


def purity(rho) -> float:
    r = _as_matrix(rho)
    return float(np.real(np.sum(r * r.T)))
