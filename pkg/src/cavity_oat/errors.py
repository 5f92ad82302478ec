"""Exception hierarchy shared by every module of the package."""


class CavityOATError(Exception):
    """Base class for all errors raised by cavity_oat."""


class InvalidStateError(CavityOATError, ValueError):
    """A density matrix or state vector violates its invariants."""


class NonPhysicalState(InvalidStateError):
    """Density matrix has an eigenvalue below the numerical PSD floor."""


class DepolarizedState(CavityOATError, ValueError):
    """Transverse polarization vanishes; squeezing parameter undefined."""


class ResonanceError(CavityOATError, ValueError):
    """A pumped block frequency omega_m sits on resonance (beta_m diverges)."""


class BlockFormInvalid(CavityOATError, ValueError):
    """Block decomposition requested with nonzero tunneling J."""


class CutoffExceeded(CavityOATError):
    """Top Fock level carries more population than the configured tolerance."""


class StepTooLarge(CavityOATError):
    """Integrator step produced trace drift or non-finite values."""


class DimensionTooLarge(CavityOATError, ValueError):
    """Dense joint representation exceeds the guard-rail dimension."""


class QuadratureError(CavityOATError):
    """Grid quadrature failed the two-resolution convergence check."""


class ConfigError(CavityOATError, ValueError):
    """Scenario configuration is invalid or inconsistent."""


class EngineError(CavityOATError):
    """Engine failure during a scenario run, tagged with its sweep/time coordinate."""

    def __init__(self, message, *, sweep_index=None, t=None, cause=None):
        super().__init__(message)
        self.sweep_index = sweep_index
        self.t = t
        self.cause = cause
