"""Exception types shared across the toolkit."""


class EtcsimError(Exception):
    """Base class for all toolkit errors."""


class OrderingError(EtcsimError, ValueError):
    """A hybrid-time sample would violate lexicographic ordering."""


class DimensionError(EtcsimError, ValueError):
    """State or matrix dimensions are inconsistent."""


class DivergenceError(EtcsimError, RuntimeError):
    """A state contains non-finite entries or exceeded the divergence bound."""


class ConfigurationError(EtcsimError, ValueError):
    """A policy, solver, or scenario configuration is invalid."""


class CertificateError(EtcsimError, ValueError):
    """Lyapunov data or derived constants are unusable."""


class InfeasibleDwellError(CertificateError):
    """Requested dwell time exceeds the certified upper bound."""

    def __init__(self, t_star: float, dwell_bound: float):
        self.t_star = t_star
        self.dwell_bound = dwell_bound
        super().__init__(
            f"requested dwell time {t_star:.6g} is not below the certified "
            f"bound {dwell_bound:.6g}"
        )


class CertificateInfeasibleError(CertificateError):
    """No singular-perturbation parameter passed the certificate inequalities."""


class InsufficientDataError(EtcsimError, ValueError):
    """An arc is too short for the requested analysis."""
