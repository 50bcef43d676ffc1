"""White-noise analysis of image classifiers.

Classification images, spike-triggered filters, bias-map attacks, patch
detection and bias stimulation for small numpy networks.
"""

from .errors import (AsymmetricInput, ConfigError, EigFailure, FormatError, InsufficientData,
                     IntegrityError, IoError, NoiseBenchError, NoSpikes, ShapeError, SingularSystem,
                     TrainingDiverged)
from .rng import RandomStream

__version__ = "0.1.0"

__all__ = [
    "AsymmetricInput",
    "ConfigError",
    "EigFailure",
    "FormatError",
    "InsufficientData",
    "IntegrityError",
    "IoError",
    "NoSpikes",
    "NoiseBenchError",
    "RandomStream",
    "ShapeError",
    "SingularSystem",
    "TrainingDiverged",
]
