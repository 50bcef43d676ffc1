"""Experiment configuration: sectioned ``key = value`` text with a fixed schema.

Unknown sections or keys are rejected. The resolved configuration (file
values overridden by command-line flags) is rendered canonically and its
SHA-256 prefix names every artifact of a run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, IoError

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "data": {
        "dataset": (str, "mnist"),
        "root": (str, "data/mnist"),
        "train_images": (str, ""),
        "train_labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
        "cifar_train": (str, ""),  # comma separated batch files
        "cifar_test": (str, ""),
    },
    "model": {
        "architecture_id": (str, "cnn_mnist"),
        "init_seed": (int, 0),
    },
    "train": {
        "epochs": (int, 10),
        "batch_size": (int, 64),
        "learning_rate": (float, 0.01),
        "momentum": (float, 0.9),
        "seed": (int, 0),
    },
    "noise": {
        "source": (str, "white"),  # white | gaussian | gabor
        "n": (int, 1_000_000),
        "seed": (int, 7),
        "sigma": (float, 0.15),
        "scales": (str, "2,4,10"),
        "alpha": (float, 1.0),
        "components": (int, 250),
        "weighting": (str, "hard"),  # hard | confidence | soft
    },
    "analysis": {
        "template_mode": (str, "raw"),
        "layer": (str, "conv1"),
        "units": (str, "all"),
        "sta_n": (int, 100_000),
        "gammas": (str, "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"),
        "k": (float, 1.0),
        "lam": (float, -1.0),  # negative selects the per-layer default
        "stim_mode": (str, "batch"),
        "n_trials": (int, 1000),
        "target": (int, -1),  # negative means all classes
        "window": (int, 3),
        "threshold_z": (float, 5.0),
        "reference_variance": (float, 0.99),  # 0 selects the plain high-pass statistic
        "min_class_stimuli": (int, 100),
        "patch": (str, "x3"),
        "corner": (str, "top_left"),
        "source_class": (int, 0),
        "target_class": (int, 1),
        "fraction": (float, 0.5),
        "poison_seed": (int, 0),
    },
    "output": {
        "dir": (str, "runs/default"),
    },
}


def _parse(section: str, key: str, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    typ = SCHEMA[section][key][0]
    if isinstance(raw, typ) and not isinstance(raw, bool):
        return raw
    try:
        return typ(str(raw).strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from exc


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, strict=True)
        parser.optionxform = str  # keep key case
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        cfg = cls.defaults()
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.values.setdefault(section, {})[key] = _parse(section, key, raw)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def get(self, section: str, key: str):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown key [{section}] {key}")
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        self.values[section][key] = _parse(section, key, value)

    def override(self, pairs: dict[tuple[str, str], object]) -> "ExperimentConfig":
        out = ExperimentConfig({s: dict(v) for s, v in self.values.items()})
        for (section, key), value in pairs.items():
            if value is not None:
                out.set(section, key, value)
        return out

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section in SCHEMA:
            parser[section] = {k: repr(v) if isinstance(v, float) else str(v)
                               for k, v in sorted(self.values[section].items())}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def floats(self, section: str, key: str) -> list[float]:
        return [float(v) for v in str(self.get(section, key)).split(",") if v.strip()]

    def ints(self, section: str, key: str) -> list[int]:
        return [int(v) for v in str(self.get(section, key)).split(",") if v.strip()]
