"""Stimulus generation: white noise, Gabor-PCA structured noise, and signal mixing.

Every stimulus is a pure function of its stream definition and index, and
is emitted on the 2**-24 grid of :mod:`noisebench.rng` so downstream
accumulators can sum it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .datasets import Dataset
from .errors import ConfigError, ShapeError
from .linalg import PcaModel, pca_fit, ridge_fit
from .rng import GRID, RandomStream, dequantize, quantize

SAMPLER_MAGIC = b"WNGS"
MNIST_SCALES = (2, 4, 10)
CIFAR_SCALES = (2, 4, 7, 11)

__all__ = [
    "GaborBank",
    "GaborPcaSampler",
    "StimulusStream",
    "build_gabor_bank",
    "fit_gabor_pca",
    "gen_white",
    "mix",
    "sample_gabor",
    "save_sampler",
    "load_sampler",
]


# ----------------------------------------------------------------- white noise
def _check_dist(dist: str, sigma):
    if dist == "uniform01":
        return
    if dist == "gaussian":
        if sigma is None or sigma <= 0:
            raise ConfigError("gaussian noise needs sigma > 0")
        return
    raise ConfigError(f"unknown noise distribution {dist!r}")


def white_quantized(shape, i: int, seed: int, dist: str = "uniform01", sigma: float | None = None):
    _check_dist(dist, sigma)
    g = RandomStream(seed, i).generator()
    if dist == "uniform01":
        u = g.random(tuple(shape), dtype=np.float32)
        return (u * np.float32(GRID)).astype(np.int64)
    return quantize(g.normal(0.5, sigma, tuple(shape)))


def gen_white(shape, i: int, seed: int, dist: str = "uniform01", sigma: float | None = None) -> np.ndarray:
    """One white-noise stimulus. Gaussian noise has mean 0.5 and is clipped to [0, 1]."""
    return dequantize(white_quantized(shape, i, seed, dist, sigma))


def mix(signal, noise, gamma: float) -> np.ndarray:
    """``gamma * signal + (1 - gamma) * noise``; no clipping."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma={gamma} outside [0, 1]")
    s = np.asarray(signal)
    n = np.asarray(noise)
    if s.shape != n.shape:
        s, n = np.broadcast_arrays(s, n)
    out_dtype = np.result_type(s.dtype, n.dtype, np.float32)
    t = gamma * s.astype(np.float64) + (1.0 - gamma) * n.astype(np.float64)
    return t.astype(out_dtype)


# ------------------------------------------------------------------ Gabor bank
@dataclass(frozen=True)
class GaborBank:
    h: int
    w: int
    scales: tuple[int, ...]
    wavelets: np.ndarray  # (K, H, W), unit L2 norm
    params: np.ndarray  # (K, 5): cycles, row, col, orientation_deg, phase_deg
    sigma_factor: float = 0.4
    orientations: int = 4
    phases: int = 2

    @property
    def size(self) -> int:
        return self.wavelets.shape[0]

    def design(self) -> np.ndarray:
        """Wavelets as columns, shape (H*W, K)."""
        return self.wavelets.reshape(self.size, -1).T


def gabor_wavelet(h, w, cycles, cy, cx, theta_deg, phase_deg, sigma_factor=0.4):
    wavelength = np.sqrt(h * w) / cycles
    sigma = sigma_factor * wavelength
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = y - cy, x - cx
    th = np.deg2rad(theta_deg)
    along = dx * np.cos(th) + dy * np.sin(th)
    env = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
    return env * np.cos(2 * np.pi * along / wavelength + np.deg2rad(phase_deg))


def build_gabor_bank(h: int, w: int, scales=MNIST_SCALES, orientations: int = 4, phases: int = 2,
                     sigma_factor: float = 0.4) -> GaborBank:
    """Gabor wavelets on an s x s grid of positions for each scale s (cycles per image).

    Wavelets are evaluated on the image grid only, i.e. truncated at the
    borders, and scaled to unit norm.
    """
    scales = tuple(int(s) for s in scales)
    if not scales:
        raise ConfigError("at least one scale is required")
    if min(scales) < 1 or max(scales) > min(h, w):
        raise ConfigError(f"scales {scales} must lie in [1, {min(h, w)}]")
    waves, params = [], []
    for s in scales:
        for r in range(s):
            for c in range(s):
                cy = (r + 0.5) * h / s - 0.5
                cx = (c + 0.5) * w / s - 0.5
                for o in range(orientations):
                    theta = 180.0 * o / orientations
                    for p in range(phases):
                        phase = 90.0 * p
                        g = gabor_wavelet(h, w, s, cy, cx, theta, phase, sigma_factor)
                        nrm = np.linalg.norm(g)
                        waves.append(g / nrm if nrm > 0 else g)
                        params.append((s, r, c, theta, phase))
    return GaborBank(h, w, scales, np.array(waves), np.array(params, dtype=np.float64),
                     sigma_factor, orientations, phases)


# ------------------------------------------------------------ Gabor-PCA sampler
def _round32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class GaborPcaSampler:
    bank: GaborBank
    pcas: list[PcaModel]  # one per channel
    alpha: float = 1.0
    _basis: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._basis:
            waves = self.bank.wavelets.reshape(self.bank.size, -1)
            self._basis = [(p.mean @ waves, p.components @ waves) for p in self.pcas]

    @property
    def channels(self) -> int:
        return len(self.pcas)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.bank.h, self.bank.w)

    @property
    def explained_variance(self) -> list[float]:
        return [float(p.explained_variance_ratio.sum()) for p in self.pcas]

    def sample_quantized(self, i: int, seed: int) -> np.ndarray:
        u = RandomStream(seed, i).generator().random(sum(p.k for p in self.pcas))
        img = np.empty(self.shape)
        off = 0
        for c, (p, (mean_img, basis)) in enumerate(zip(self.pcas, self._basis)):
            lo, hi = p.score_range[:, 0], p.score_range[:, 1]
            scores = lo + u[off:off + p.k] * (hi - lo)
            off += p.k
            img[c] = (mean_img + scores @ basis).reshape(self.bank.h, self.bank.w)
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
        return quantize(img)

    def sample(self, i: int, seed: int) -> np.ndarray:
        return dequantize(self.sample_quantized(i, seed))


def sample_gabor(sampler: GaborPcaSampler, i: int, seed: int) -> np.ndarray:
    """One structured-noise stimulus: uniform PC scores within the observed ranges,
    mapped back to wavelet weights, summed, then min-max rescaled to [0, 1]."""
    return sampler.sample(i, seed)


def gabor_weights(dataset: Dataset, bank: GaborBank, alpha: float = 1.0, channel: int = 0) -> np.ndarray:
    """Ridge weights of every image of one channel on the bank, shape (N, K)."""
    if dataset.shape[1:] != (bank.h, bank.w):
        raise ShapeError(f"images {dataset.shape[1:]} do not match bank {(bank.h, bank.w)}")
    targets = dataset.images[:, channel].reshape(len(dataset), -1).astype(np.float64)
    return ridge_fit(bank.design(), targets.T, alpha).T


def fit_gabor_pca(dataset: Dataset, bank: GaborBank, alpha: float = 1.0,
                  k_components: int = 250) -> GaborPcaSampler:
    """Fit a per-channel PCA on the ridge-regression wavelet weights of ``dataset``."""
    pcas = []
    for c in range(dataset.shape[0]):
        weights = gabor_weights(dataset, bank, alpha, c)
        k = min(k_components, *weights.shape)
        p = pca_fit(weights, k)
        del weights
        # stored at float32 precision so a saved sampler reproduces samples exactly
        pcas.append(PcaModel(_round32(p.mean), _round32(p.components),
                             _round32(p.explained_variance_ratio), _round32(p.score_range)))
    return GaborPcaSampler(bank, pcas, alpha)


def save_sampler(sampler: GaborPcaSampler, path) -> None:
    b = sampler.bank
    meta = {"h": b.h, "w": b.w, "scales": list(b.scales), "orientations": b.orientations,
            "phases": b.phases, "sigma_factor": b.sigma_factor, "alpha": sampler.alpha,
            "channels": sampler.channels}
    arrays = {}
    for c, p in enumerate(sampler.pcas):
        arrays[f"{c}.mean"] = p.mean
        arrays[f"{c}.components"] = p.components
        arrays[f"{c}.ratio"] = p.explained_variance_ratio
        arrays[f"{c}.range"] = p.score_range
    container.write(path, SAMPLER_MAGIC, meta, arrays)


def load_sampler(path) -> GaborPcaSampler:
    meta, arrays = container.read(path, SAMPLER_MAGIC)
    bank = build_gabor_bank(meta["h"], meta["w"], meta["scales"], meta["orientations"],
                            meta["phases"], meta["sigma_factor"])
    pcas = []
    for c in range(meta["channels"]):
        pcas.append(PcaModel(*(arrays[f"{c}.{n}"].astype(np.float64)
                               for n in ("mean", "components", "ratio", "range"))))
    return GaborPcaSampler(bank, pcas, meta["alpha"])


# ---------------------------------------------------------------- streams
@dataclass(frozen=True)
class StimulusStream:
    """An index-addressable stream of ``count`` stimuli of ``shape`` (C, H, W)."""

    source: str  # white_uniform | white_gaussian | gabor_pca
    shape: tuple[int, int, int]
    count: int
    seed: int
    sigma: float | None = None
    sampler: GaborPcaSampler | None = None

    def __post_init__(self):
        if self.source not in ("white_uniform", "white_gaussian", "gabor_pca"):
            raise ConfigError(f"unknown stimulus source {self.source!r}")
        if self.source == "gabor_pca":
            if self.sampler is None:
                raise ConfigError("gabor_pca streams need a fitted sampler")
            if tuple(self.sampler.shape) != tuple(self.shape):
                raise ShapeError(f"sampler shape {self.sampler.shape} != stream shape {self.shape}")
        if self.source == "white_gaussian":
            _check_dist("gaussian", self.sigma)

    def quantized(self, i: int) -> np.ndarray:
        if self.source == "white_uniform":
            return white_quantized(self.shape, i, self.seed)
        if self.source == "white_gaussian":
            return white_quantized(self.shape, i, self.seed, "gaussian", self.sigma)
        return self.sampler.sample_quantized(i, self.seed)

    def quantized_batch(self, start: int, stop: int) -> np.ndarray:
        out = np.empty((stop - start,) + tuple(self.shape), dtype=np.int64)
        for j, i in enumerate(range(start, stop)):
            out[j] = self.quantized(i)
        return out

    def batch(self, start: int, stop: int) -> np.ndarray:
        return dequantize(self.quantized_batch(start, stop))

    def __getitem__(self, i: int) -> np.ndarray:
        return dequantize(self.quantized(i))

    def __len__(self) -> int:
        return self.count
