"""Exception hierarchy shared by every noisebench module."""


class NoiseBenchError(Exception):
    """Base class for all errors raised by noisebench."""


class ShapeError(NoiseBenchError, ValueError):
    pass


class ConfigError(NoiseBenchError, ValueError):
    pass


class SingularSystem(NoiseBenchError, ArithmeticError):
    pass


class AsymmetricInput(NoiseBenchError, ValueError):
    pass


class EigFailure(NoiseBenchError, ArithmeticError):
    pass


class FormatError(NoiseBenchError, ValueError):
    """A file does not follow the expected binary layout."""


class IoError(NoiseBenchError, OSError):
    """A file is missing or shorter than its header promises."""


class TrainingDiverged(NoiseBenchError, ArithmeticError):
    pass


class InsufficientData(NoiseBenchError, ValueError):
    pass


class NoSpikes(NoiseBenchError, ValueError):
    """The summed response of a unit is zero, so no average exists."""


class IntegrityError(NoiseBenchError):
    """Artifacts in a run directory disagree on config hash or fail CRC."""
