from .io import load_model, model_hash, save_model
from .network import (
    ARCHITECTURES,
    InjectionConfig,
    LayerSpec,
    Network,
    StimulationConfig,
    build_network,
    forward,
    output_shapes,
    receptive_fields,
    stimulation_delta,
)
from .training import History, Hyper, evaluate, input_gradient, train

__all__ = [
    "ARCHITECTURES",
    "History",
    "Hyper",
    "InjectionConfig",
    "LayerSpec",
    "Network",
    "StimulationConfig",
    "build_network",
    "evaluate",
    "forward",
    "input_gradient",
    "load_model",
    "model_hash",
    "output_shapes",
    "receptive_fields",
    "save_model",
    "stimulation_delta",
    "train",
]
