"""Spin-coherent-state Husimi Q function on the Bloch sphere."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .spin import AtomicDensityMatrix, AtomicState, DickeBasis, log_binomial


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Product grid with solid-angle quadrature weights summing to ``4 pi``.

    ``theta`` and ``phi`` have shape ``(n_theta,)`` and ``(n_phi,)``; ``weights``
    has shape ``(n_theta, n_phi)``.
    """

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_legendre(cls, n_theta: int = 128, n_phi: int = 256) -> "SphereGrid":
        """Uniform ``phi`` times Gauss-Legendre nodes in ``cos(theta)``.

        Integrates polynomials in ``cos(theta/2), sin(theta/2)`` of the degree
        met by ``Q`` exactly whenever ``N < min(2 n_theta, n_phi)``.
        """
        x, w = np.polynomial.legendre.leggauss(n_theta)
        theta = np.arccos(x[::-1])
        w = w[::-1]
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        weights = np.outer(w, np.full(n_phi, 2 * np.pi / n_phi))
        return cls(theta, phi, weights)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))


@dataclass(frozen=True, eq=False)
class HusimiMap:
    grid: SphereGrid
    values: np.ndarray

    def integral(self) -> float:
        return float(np.sum(self.values * self.grid.weights))

    def phi_marginal(self) -> np.ndarray:
        return np.sum(self.values * self.grid.weights, axis=0)

    def circular_variance_phi(self) -> float:
        """``1 - |<exp(i phi)>|`` of the azimuthal marginal."""
        p = self.phi_marginal()
        p = p / np.sum(p)
        return float(1.0 - abs(np.sum(p * np.exp(1j * self.grid.phi))))

    def to_csv(self, path) -> None:
        """Columns ``theta, phi, weight, Q`` with 17 significant digits."""
        th, ph = np.meshgrid(self.grid.theta, self.grid.phi, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "phi", "weight", "Q"])
            for row in zip(th.ravel(), ph.ravel(), self.grid.weights.ravel(), self.values.ravel()):
                w.writerow([format(v, ".17g") for v in row])


def _overlap_matrix(N: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``<m|theta, phi>`` with shape ``(n_theta, n_phi, N + 1)``."""
    k = np.arange(N + 1)  # k = N/2 + m
    lb = 0.5 * log_binomial(N, k)
    c = np.cos(theta / 2)[:, None]
    s = np.sin(theta / 2)[:, None]
    # 0 * log(0) -> 0 so the poles are exact
    with np.errstate(divide="ignore", invalid="ignore"):
        lc = np.log(np.abs(c))
        ls = np.log(np.abs(s))
        logmag = lb[None, :] + np.where(k[None, :] == 0, 0.0, k[None, :] * lc) \
            + np.where((N - k)[None, :] == 0, 0.0, (N - k)[None, :] * ls)
    mag = np.exp(logmag) * np.sign(c) ** k * np.sign(s) ** (N - k)
    phase = np.exp(-1j * np.outer(phi, k))
    return mag[:, None, :] * phase[None, :, :]


def spin_coherent_overlap(N: int, theta: float, phi: float) -> AtomicState:
    """Spin coherent state ``|theta, phi>`` expanded in the Dicke basis.

    ``<m|theta, phi> = sqrt(binom(N, N/2 + m)) cos(theta/2)^(N/2+m)
    sin(theta/2)^(N/2-m) exp(-i (N/2 + m) phi)``.
    """
    basis = DickeBasis(N)
    amp = _overlap_matrix(N, np.array([theta], float), np.array([phi], float))[0, 0]
    amp = amp / math.sqrt(float(np.sum(np.abs(amp) ** 2)))
    return AtomicState(basis, amp)


def husimi_q(rho: AtomicDensityMatrix, grid: SphereGrid | None = None) -> HusimiMap:
    """``Q(theta, phi) = (N+1)/(4 pi) <theta, phi| rho |theta, phi>``.

    Normalized so that ``sum(Q * weights) = 1``.
    """
    grid = grid or SphereGrid.gauss_legendre()
    r = rho.rho if isinstance(rho, AtomicDensityMatrix) else np.asarray(rho)
    N = r.shape[0] - 1
    ov = _overlap_matrix(N, grid.theta, grid.phi)
    q = np.einsum("tpm,mn,tpn->tp", ov.conj(), r, ov).real
    return HusimiMap(grid, (N + 1) / (4 * np.pi) * q)
