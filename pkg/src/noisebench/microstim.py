"""Psychometric curves under bias stimulation, and activation-injection sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .errors import ConfigError, ShapeError
from .nn.network import InjectionConfig, Network, StimulationConfig
from .noise import GaborPcaSampler, StimulusStream, mix
from .rng import RandomStream, fold_seed

DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


def _grid(gamma_grid) -> np.ndarray:
    g = np.array(sorted(DEFAULT_GRID if gamma_grid is None else gamma_grid), dtype=np.float64)
    if g.size == 0 or g.min() < 0 or g.max() > 1:
        raise ConfigError("gamma grid must be non-empty and lie in [0, 1]")
    return g


@dataclass
class PsychometricCurve:
    gammas: np.ndarray
    classes: np.ndarray
    accuracy: np.ndarray  # (K, G)
    n_trials: int
    stim: StimulationConfig | None = None

    def to_csv(self, path) -> None:
        k = 0.0 if self.stim is None else self.stim.k
        layer = "" if self.stim is None else self.stim.layer_name
        rows = ["gamma,class,accuracy,k,layer"]
        for c_i, c in enumerate(self.classes):
            for g_i, g in enumerate(self.gammas):
                rows.append(f"{g:.4f},{c},{self.accuracy[c_i, g_i]:.6f},{k},{layer}")
        Path(path).write_text("\n".join(rows) + "\n")


@dataclass
class InjectionSweep:
    layer: str
    gammas: np.ndarray
    classes: np.ndarray
    ratio: np.ndarray  # (K, G) non-members classified as the injected class / non-members

    def to_csv(self, path) -> None:
        rows = ["layer,gamma,class,ratio"]
        for c_i, c in enumerate(self.classes):
            for g_i, g in enumerate(self.gammas):
                rows.append(f"{self.layer},{g:.4f},{c},{self.ratio[c_i, g_i]:.6f}")
        Path(path).write_text("\n".join(rows) + "\n")


def _batch_offset(net: Network, x: np.ndarray, stim: StimulationConfig, batch_size: int) -> np.ndarray:
    """Batch-mode offset over all of ``x``, computed in chunks.

    Same value as ``stimulation_delta(..., mode="batch")`` on the full set.
    """
    total = None
    peak = None
    for s in range(0, len(x), batch_size):
        a = net.activations(x[s:s + batch_size], stim.layer_name).astype(np.float64)
        flat = a.reshape(a.shape[0], a.shape[1], -1)
        t = flat.sum(axis=2).sum(axis=0)
        p = flat.max(axis=(0, 2))
        total = t if total is None else total + t
        peak = p if peak is None else np.maximum(peak, p)
    ratio = np.divide(total / len(x), peak, out=np.zeros_like(peak), where=peak > 0)
    return stim.resolved_lambda() * stim.k * ratio


def _classify(net: Network, x: np.ndarray, stim, batch_size: int) -> np.ndarray:
    if stim is not None and stim.mode == "batch":
        offset = _batch_offset(net, x, stim, batch_size)
        return net.predict(x, batch_size, bias_offset={stim.layer_name: offset})
    return net.predict(x, batch_size, stim=stim)


def psychometric(net: Network, dataset: Dataset, noise_source: str = "white_uniform", gamma_grid=None,
                 stim: StimulationConfig | None = None, n_trials: int = 1000, seed: int = 0,
                 classes=None, sigma: float | None = None, sampler: GaborPcaSampler | None = None,
                 batch_size: int = 1000) -> PsychometricCurve:
    """Accuracy on ``mix(exemplar, noise, gamma)`` per class and gamma.

    Each trial draws a seed-chosen exemplar of the class and a fresh noise
    pattern; the same (exemplar, noise) pairs are reused at every gamma and
    for every stimulation setting, so curves are directly comparable. In
    ``batch`` stimulation mode the offset is computed over all trials of one
    (class, gamma) cell.
    """
    gammas = _grid(gamma_grid)
    classes = np.unique(dataset.labels) if classes is None else np.asarray(classes)
    if tuple(dataset.shape) != tuple(net.input_shape):
        raise ShapeError(f"dataset shape {dataset.shape} does not match network input {net.input_shape}")
    if n_trials < 1:
        raise ConfigError("n_trials must be positive")
    noise = StimulusStream(noise_source, tuple(net.input_shape), len(classes) * n_trials,
                           fold_seed(seed, 1), sigma, sampler)
    acc = np.zeros((len(classes), len(gammas)))
    for c_i, c in enumerate(classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size == 0:
            raise ConfigError(f"dataset has no images of class {c}")
        pick = RandomStream(fold_seed(seed, 2), int(c)).generator().integers(members.size, size=n_trials)
        exemplars = dataset.images[members[pick]]
        n = noise.batch(c_i * n_trials, (c_i + 1) * n_trials)
        for g_i, g in enumerate(gammas):
            x = mix(exemplars, n, g)
            acc[c_i, g_i] = float(np.mean(_classify(net, x, stim, batch_size) == c))
    return PsychometricCurve(gammas, classes, acc, n_trials, stim)


def injection_sweep(net: Network, class_means, dataset: Dataset, layer: str, gamma_grid=None,
                    n: int | None = None, batch_size: int = 500) -> InjectionSweep:
    """Misclassification ratio when a layer's output is blended with a class-mean activation.

    ``class_means`` is a (K, ...) array (e.g. ``LayerMeans.means``) matching
    the layer's per-sample output shape. For each class, only images of
    other classes count.
    """
    gammas = _grid(gamma_grid)
    means = getattr(class_means, "means", class_means)
    means = np.asarray(means)
    data = dataset if n is None else dataset.subset(np.arange(min(n, len(dataset))))
    ratio = np.zeros((len(means), len(gammas)))
    for c in range(len(means)):
        others = data.images[data.labels != c]
        if len(others) == 0:
            continue
        for g_i, g in enumerate(gammas):
            inj = InjectionConfig(layer, means[c], float(g))
            pred = net.predict(others, batch_size, inject=inj)
            ratio[c, g_i] = float(np.mean(pred == c))
    return InjectionSweep(layer, gammas, np.arange(len(means)), ratio)
