"""WNAM model files (see :mod:`noisebench.container` for the layout)."""

from __future__ import annotations

import hashlib
from dataclasses import asdict

import numpy as np

from .. import container
from ..errors import FormatError
from .network import LayerSpec, Network

MAGIC = b"WNAM"


def save_model(net: Network, path) -> None:
    meta = {
        "architecture_id": net.architecture_id,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "specs": [asdict(s) for s in net.specs],
    }
    container.write(path, MAGIC, meta, net.parameters())


def load_model(path) -> Network:
    meta, arrays = container.read(path, MAGIC)
    try:
        specs = [LayerSpec(**{**s, "kernel": tuple(s["kernel"])}) for s in meta["specs"]]
        net = Network(meta["architecture_id"], specs, tuple(meta["input_shape"]), meta["num_classes"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model header: {exc}") from exc
    for s in specs:
        if s.kind not in ("conv2d", "dense"):
            continue
        w = arrays[f"{s.name}.weight"].astype(np.float32)
        b = arrays[f"{s.name}.bias"].astype(np.float32)
        net.weights[s.name] = w
        (net.map_bias if s.kind == "conv2d" else net.dense_bias)[s.name] = b
    return net


def model_hash(net: Network) -> str:
    """SHA-256 prefix over architecture and float32 parameters."""
    h = hashlib.sha256(net.architecture_id.encode())
    for name, arr in sorted(net.parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()[:12]
