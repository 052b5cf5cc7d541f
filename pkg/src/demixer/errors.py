"""Exception hierarchy shared across the package."""


class DemixerError(Exception):
    """Base class for all package errors."""


class SpectralError(DemixerError):
    """Eigendecomposition did not reconstruct its input."""

    def __init__(self, dim, residual):
        super().__init__(
            f"eigendecomposition of {dim}x{dim} matrix failed: "
            f"relative residual {residual:.3e}"
        )
        self.dim = dim
        self.residual = residual


class NonInjectiveState(DemixerError):
    """The transfer generator has no unique dominant eigenvalue."""


class GaugeViolation(DemixerError):
    """Dominant eigenvalue of the transfer generator is not zero."""


class InvalidParameters(DemixerError):
    """Variational parameters violate a structural invariant."""


class DensityTargetError(DemixerError):
    """Chemical-potential iteration failed to reach the target densities."""


class OracleError(DemixerError):
    """Bethe-ansatz root find failed."""


class StencilError(DemixerError):
    """One or more stencil ground states did not converge."""

    def __init__(self, failed):
        super().__init__(f"unconverged stencil points: {failed}")
        self.failed = list(failed)


class NoTransitionInRange(DemixerError):
    """Neither transition signal is present in the scanned range."""


class ConfigError(DemixerError):
    """Invalid run configuration."""

    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line
