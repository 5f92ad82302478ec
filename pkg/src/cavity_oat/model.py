"""Effective-model couplings and the initial photon state.

All frequencies share one unit (``hbar = 1``); the CLI uses units of ``U``.
``delta_c`` is the effective cavity detuning: the dispersive shift
proportional to the squared total atom number is already absorbed, so the
photon frequency seen by Dicke state ``m`` is ``omega_m = -delta_c + 2 W0 m**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Couplings of the single-mode cavity, two-mode atom model.

    Parameters
    ----------
    N : int
        Atom number.
    U : float
        Bare on-site interaction.
    W0 : float
        Cavity-assisted interaction per photon.
    delta_c : float
        Effective cavity detuning.
    eta : float
        Pump amplitude.
    kappa : float
        Photon loss rate, ``>= 0``.
    J : float
        Tunneling amplitude. Every closed form and the block engine need ``J == 0``.
    epsilon : float
        On-site energy; only contributes a global phase.
    """

    N: int
    U: float = 1.0
    W0: float = 1.0
    delta_c: float = 1.0
    eta: float = 0.0
    kappa: float = 0.0
    J: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("U", "W0", "delta_c", "eta", "kappa", "J", "epsilon"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1, 2) / 2.0

    def omega(self) -> np.ndarray:
        """Photon frequency per Dicke block, ``-delta_c + 2 W0 m**2``."""
        return -self.delta_c + 2.0 * self.W0 * self.m**2


@dataclass(frozen=True)
class PhotonInput:
    """Initial cavity state: ``vacuum``, ``coherent`` (amplitude ``alpha``) or ``fock`` (``n``)."""

    kind: Literal["vacuum", "coherent", "fock"] = "vacuum"
    alpha: complex = 0j
    n: int = 0

    def __post_init__(self):
        if self.kind not in ("vacuum", "coherent", "fock"):
            raise ValueError(f"unknown photon input kind {self.kind!r}")
        object.__setattr__(self, "alpha", complex(self.alpha))
        if self.kind != "coherent" and self.alpha != 0:
            raise ValueError("alpha is only meaningful for a coherent input")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 0:
            raise ValueError(f"Fock number must be a non-negative integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if self.kind != "fock" and self.n != 0:
            raise ValueError("n is only meaningful for a Fock input")

    @classmethod
    def vacuum(cls) -> "PhotonInput":
        return cls("vacuum")

    @classmethod
    def coherent(cls, alpha: complex) -> "PhotonInput":
        return cls("coherent", alpha=alpha)

    @classmethod
    def fock(cls, n: int) -> "PhotonInput":
        return cls("fock", n=n)

    @property
    def is_gaussian_pure(self) -> bool:
        """Vacuum or coherent: a displaced vacuum."""
        return self.kind in ("vacuum", "coherent")

    @property
    def mean_photons(self) -> float:
        if self.kind == "fock":
            return float(self.n)
        return abs(self.alpha) ** 2
