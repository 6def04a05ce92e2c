"""Exception hierarchy shared by every module of the package."""


class LnfnoError(Exception):
    """Base class for all domain errors (CLI maps these to exit code 1)."""


class DimensionError(LnfnoError, ValueError):
    pass


class ConfigurationError(LnfnoError, ValueError):
    pass


class ContractError(LnfnoError, ValueError):
    pass


class SolverError(LnfnoError, RuntimeError):
    """A numerical solve failed; ``residual`` holds the last achieved residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BlowUpError(SolverError):
    """NaN/Inf appeared during time stepping at time ``t``."""

    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


class MeshError(LnfnoError, ValueError):
    pass


class FormatError(LnfnoError, ValueError):
    """NODF container failed validation; ``field`` names the failing part."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class GenerationError(LnfnoError, RuntimeError):
    pass


class VerificationError(LnfnoError, RuntimeError):
    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class TrainingError(LnfnoError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
