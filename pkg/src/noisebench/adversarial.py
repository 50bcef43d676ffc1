"""Bias-map attacks, patch poisoning, and patch detection from classification images."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .classim import BiasMaps
from .datasets import Dataset
from .errors import ConfigError, InsufficientData, ShapeError
from .linalg import pca_fit
from .nn.training import input_gradient
from .noise import StimulusStream, mix
from .pgm import write_pgm
from .rng import RandomStream

log = logging.getLogger(__name__)

MASKS = {
    "x3": np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]], dtype=bool),
    "c3": np.array([[1, 1, 0], [1, 0, 0], [1, 1, 0]], dtype=bool),
    "h3": np.array([[1, 0, 1], [1, 1, 1], [1, 0, 1]], dtype=bool),
}
CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")
MIN_DETECTION_STIMULI = 100_000
MIN_CLASS_STIMULI = 100  # fewer stimuli than this do not make a usable class map


@dataclass(frozen=True)
class PatchSpec:
    shape: str = "x3"
    corner: str = "top_left"
    source_class: int = 0
    target_class: int = 1
    fraction: float = 0.5
    value: float = 1.0
    mode: str = "overwrite"  # or "additive"

    def __post_init__(self):
        if self.shape not in MASKS:
            raise ConfigError(f"unknown patch shape {self.shape!r}; expected one of {sorted(MASKS)}")
        if self.corner not in CORNERS:
            raise ConfigError(f"unknown corner {self.corner!r}; expected one of {CORNERS}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction={self.fraction} outside (0, 1]")
        if self.mode not in ("overwrite", "additive"):
            raise ConfigError(f"unknown patch mode {self.mode!r}")

    @property
    def mask(self) -> np.ndarray:
        return MASKS[self.shape]

    def origin(self, h: int, w: int) -> tuple[int, int]:
        top = 0 if self.corner.startswith("top") else h - 3
        left = 0 if self.corner.endswith("left") else w - 3
        return top, left

    def center(self, h: int, w: int) -> tuple[int, int]:
        top, left = self.origin(h, w)
        return top + 1, left + 1


def stamp(images: np.ndarray, patch: PatchSpec) -> np.ndarray:
    """Copy of ``images`` (N, C, H, W) with the patch applied to every channel."""
    out = np.array(images, copy=True)
    h, w = out.shape[-2:]
    top, left = patch.origin(h, w)
    region = out[..., top:top + 3, left:left + 3]
    if patch.mode == "overwrite":
        region[..., patch.mask] = patch.value
    else:
        region[..., patch.mask] = np.clip(region[..., patch.mask] + patch.value, 0.0, 1.0)
    return out


def poison_indices(dataset: Dataset, patch: PatchSpec, seed: int) -> np.ndarray:
    k = dataset.num_classes
    if not (0 <= patch.source_class < k and 0 <= patch.target_class < k):
        raise ConfigError(f"patch classes must lie in [0, {k})")
    src = np.flatnonzero(dataset.labels == patch.source_class)
    if src.size == 0:
        raise ConfigError(f"dataset has no images of class {patch.source_class}")
    count = int(np.floor(patch.fraction * src.size))
    chosen = RandomStream(seed, 0).generator().permutation(src)[:count]
    return np.sort(chosen)


def poison(dataset: Dataset, patch: PatchSpec, seed: int) -> Dataset:
    """Stamp a seed-chosen fraction of the source class and relabel it as the target."""
    idx = poison_indices(dataset, patch, seed)
    images = dataset.images.copy()
    labels = dataset.labels.copy()
    images[idx] = stamp(images[idx], patch)
    labels[idx] = patch.target_class
    return Dataset(images, labels, dataset.num_classes, f"{dataset.name}+{patch.shape}")


# ---------------------------------------------------------------------- attack
@dataclass
class AttackReport:
    gammas: np.ndarray
    targets: np.ndarray
    per_target: np.ndarray  # (T, G) fooling rates
    perturbation: np.ndarray  # (G,) mean L2 norm of the change to the input
    source: str  # "noise" or "signal"

    @property
    def rates(self) -> np.ndarray:
        return self.per_target.mean(axis=0)

    def rate_at(self, gamma: float) -> float:
        i = int(np.argmin(np.abs(self.gammas - gamma)))
        return float(self.rates[i])

    def is_monotone(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.rates) >= -tol))

    def to_csv(self, path) -> None:
        rows = ["source,gamma,target,rate,perturbation"]
        for g_i, g in enumerate(self.gammas):
            for t_i, t in enumerate(self.targets):
                rows.append(f"{self.source},{g:.4f},{t},{self.per_target[t_i, g_i]:.6f},"
                            f"{self.perturbation[g_i]:.6f}")
            rows.append(f"{self.source},{g:.4f},all,{self.rates[g_i]:.6f},{self.perturbation[g_i]:.6f}")
        Path(path).write_text("\n".join(rows) + "\n")


def _predict_fn(model):
    if hasattr(model, "predict"):
        return model.predict
    return model


def bias_attack(model, maps, inputs, target_class: int | None = None, gamma_grid=None,
                n: int | None = None, exclude_own_class: bool = False,
                batch_size: int = 1000) -> AttackReport:
    """Fooling rate of ``mix(map[target], input, gamma)`` over a gamma grid.

    ``model`` only needs a ``predict`` returning hard labels. ``maps`` is a
    :class:`BiasMaps` or a (K, C, H, W) array of templates. ``inputs`` is a
    Dataset (signal + bias) or a StimulusStream (noise + bias). With
    ``target_class=None`` the rate is averaged over all targets. With
    ``exclude_own_class`` inputs already of the target class (label, or
    unperturbed prediction for noise) are left out of that target's rate.
    """
    predict = _predict_fn(model)
    if isinstance(maps, BiasMaps):
        templates, empty = maps.maps, maps.empty
    else:
        templates = np.asarray(maps, dtype=np.float64)
        empty = np.zeros(len(templates), dtype=bool)
    gammas = np.array(sorted(np.linspace(0, 1, 11) if gamma_grid is None else gamma_grid), dtype=np.float64)
    if gammas.min() < 0 or gammas.max() > 1:
        raise ConfigError("gamma grid must lie in [0, 1]")
    targets = np.arange(len(templates)) if target_class is None else np.array([target_class])
    for t in targets:
        if empty[t]:
            raise InsufficientData(f"bias map of class {t} is empty")
    if isinstance(inputs, StimulusStream):
        total = inputs.count if n is None else min(n, inputs.count)
        get = lambda s, e: inputs.batch(s, e)  # noqa: E731
        source = "noise"
    elif isinstance(inputs, Dataset):
        total = len(inputs) if n is None else min(n, len(inputs))
        get = lambda s, e: inputs.images[s:e]  # noqa: E731
        source = "signal"
    else:
        raise ConfigError("inputs must be a Dataset or a StimulusStream")
    if tuple(templates.shape[1:]) != tuple(get(0, 1).shape[1:]):
        raise ShapeError("bias maps and inputs differ in shape")
    hits = np.zeros((len(targets), len(gammas)))
    counted = np.zeros(len(targets))
    pert = np.zeros(len(gammas))
    for s in range(0, total, batch_size):
        e = min(total, s + batch_size)
        x = get(s, e).astype(np.float32)
        own = None
        if exclude_own_class:
            own = inputs.labels[s:e] if source == "signal" else predict(x)
        for t_i, t in enumerate(targets):
            keep = np.ones(len(x), dtype=bool) if own is None else own != t
            counted[t_i] += keep.sum()
            diff = templates[t] - x.astype(np.float64)
            norm = np.sqrt((diff.reshape(len(x), -1) ** 2).sum(axis=1))
            for g_i, g in enumerate(gammas):
                pred = predict(mix(templates[t].astype(np.float32), x, g))
                hits[t_i, g_i] += np.sum((pred == t) & keep)
                pert[g_i] += g * norm.sum()
    per_target = hits / np.maximum(counted, 1)[:, None]
    pert /= total * len(targets)
    return AttackReport(gammas, targets, per_target, pert, source)


# -------------------------------------------------------------------- detection
@dataclass
class DetectionReport:
    zmaps: np.ndarray  # (K, H, W) robust z-score of the local residual statistic
    max_z: np.ndarray  # (K,)
    threshold: float
    location: tuple[int, int, int]  # (row, col, class); centroid of the peak region when flagged

    @property
    def flagged(self) -> bool:
        return bool(self.max_z.max() > self.threshold)

    @property
    def flagged_class(self) -> int | None:
        return int(np.argmax(self.max_z)) if self.flagged else None

    def to_csv(self, path) -> None:
        r, c, k = self.location
        rows = ["class,max_z,flagged,row,col"]
        for i, z in enumerate(self.max_z):
            rr, cc = np.unravel_index(int(np.nanargmax(self.zmaps[i])), self.zmaps[i].shape)
            rows.append(f"{i},{z:.4f},{int(z > self.threshold)},{rr},{cc}")
        rows.append(f"all,{self.max_z.max():.4f},{int(self.flagged)},{r},{c}")
        Path(path).write_text("\n".join(rows) + "\n")

    def write_heatmaps(self, out_dir, prefix: str = "anomaly") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, z in enumerate(self.zmaps):
            write_pgm(out / f"{prefix}_class{i}.pgm", z)


@dataclass(frozen=True)
class DataSubspace:
    """Orthonormal basis (k, d) of the directions the reference images vary along."""

    basis: np.ndarray
    shape: tuple[int, ...]

    def residual(self, flat: np.ndarray) -> np.ndarray:
        return flat - (flat @ self.basis.T) @ self.basis

    @property
    def leverage(self) -> np.ndarray:
        """Diagonal of the complement projector: residual variance per pixel under white noise."""
        return np.clip(1.0 - np.sum(self.basis ** 2, axis=0), 0.0, 1.0).reshape(self.shape)


def data_subspace(reference, variance: float = 0.99) -> DataSubspace:
    """Principal subspace of the reference images holding ``variance`` of their variance.

    ``reference`` is a Dataset or an (N, C, H, W) array. Multi-channel images
    are averaged over channels first, matching the channel-mean maps the
    detector works on.
    """
    if not 0.0 < variance <= 1.0:
        raise ConfigError(f"variance={variance} outside (0, 1]")
    images = reference.images if isinstance(reference, Dataset) else np.asarray(reference)
    if images.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) reference images, got {images.shape}")
    flat = images.mean(axis=1).reshape(len(images), -1).astype(np.float64)
    model = pca_fit(flat, min(flat.shape))
    keep = int(np.searchsorted(np.cumsum(model.explained_variance_ratio), variance - 1e-12)) + 1
    return DataSubspace(model.components[:min(keep, model.k)], tuple(images.shape[-2:]))


def robust_z(stat: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """(stat - median) / (1.4826 MAD) over ``valid`` entries; std fallback when the MAD is zero."""
    ref = stat if valid is None else stat[valid]
    if ref.size == 0:
        return np.zeros_like(stat)
    med = np.median(ref)
    mad = 1.4826 * np.median(np.abs(ref - med))
    if mad <= 0:
        mad = ref.std()
        if mad <= 0:
            return np.zeros_like(stat)
    return (stat - med) / mad


MIN_LEVERAGE = 0.1


def anomaly_zmap(image: np.ndarray, window: int = 3, smooth: int = 5,
                 subspace: DataSubspace | None = None) -> np.ndarray:
    """Robust z-score of the windowed mean |residual| of a 2-D map.

    Without ``subspace`` the residual is a high-pass (map minus its
    ``smooth`` box blur). With it, the residual is the part of the map
    orthogonal to the reference data's principal subspace, divided by the
    square root of each pixel's leverage so that white noise has the same
    spread everywhere, and the windowed statistic is the cube root of the
    mean squared residual. Pixels the subspace almost fully explains are left
    out, and windows clipped by the border are rescaled by their pixel count.
    """
    m = np.asarray(image, dtype=np.float64)
    if subspace is None:
        residual = m - ndimage.uniform_filter(m, smooth, mode="nearest")
        stat = ndimage.uniform_filter(np.abs(residual), window, mode="nearest")
        return robust_z(stat)
    if m.shape != subspace.shape:
        raise ShapeError(f"map shape {m.shape} differs from reference {subspace.shape}")
    lev = subspace.leverage
    valid = lev >= MIN_LEVERAGE
    u = np.where(valid, subspace.residual(m.ravel()).reshape(m.shape) / np.sqrt(np.maximum(lev, MIN_LEVERAGE)), 0.0)
    count = ndimage.uniform_filter(valid.astype(np.float64), window, mode="constant") * window ** 2
    total = ndimage.uniform_filter(u * u, window, mode="constant") * window ** 2
    inside = count >= 1.0 - 1e-9
    # cube root of the windowed mean square (chi-square / n) is close to Gaussian
    stat = np.where(inside, np.cbrt(total / np.maximum(count, 1.0)), 0.0)
    full = inside & (np.abs(count - window ** 2) < 1e-9)
    z = robust_z(stat, full if full.any() else inside)
    # the mean of n pixels spreads as 1/sqrt(n)
    return np.where(inside, z * np.sqrt(np.maximum(count, 1.0) / window ** 2), 0.0)


def _peak_centroid(z: np.ndarray, threshold: float) -> tuple[float, float]:
    """z-weighted centroid of the connected region above ``threshold`` holding the peak."""
    peak = np.unravel_index(int(np.argmax(z)), z.shape)
    labels, _ = ndimage.label(z > threshold)
    region = labels == labels[peak]
    w = np.where(region, z, 0.0)
    rows, cols = np.indices(z.shape)
    return float((w * rows).sum() / w.sum()), float((w * cols).sum() / w.sum())


def detect_maps(maps: np.ndarray, window: int = 3, threshold_z: float = 5.0, smooth: int = 5,
                skip=None, subspace: DataSubspace | None = None, weights=None) -> DetectionReport:
    """Anomaly z-maps for (K, [C,] H, W) maps.

    With a ``subspace`` each map is first centred on the ``weights``-weighted
    mean over classes, so structure shared by every class drops out.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 4:
        maps = maps.mean(axis=1)
    if maps.ndim != 3:
        raise ShapeError(f"expected (K, [C,] H, W) maps, got {maps.shape}")
    skip = np.zeros(len(maps), dtype=bool) if skip is None else np.asarray(skip, dtype=bool)
    if subspace is not None and (~skip).any():
        w = np.ones(len(maps)) if weights is None else np.asarray(weights, dtype=np.float64)
        w = np.where(skip, 0.0, w)
        maps = maps - np.tensordot(w / w.sum(), maps, axes=1)
    zmaps = np.stack([np.zeros(m.shape) if s else anomaly_zmap(m, window, smooth, subspace)
                      for m, s in zip(maps, skip)])
    max_z = zmaps.reshape(len(maps), -1).max(axis=1)
    k, r, c = np.unravel_index(int(np.argmax(zmaps)), zmaps.shape)
    if max_z[k] > threshold_z:
        rf, cf = _peak_centroid(zmaps[k], threshold_z)
        r, c = int(round(rf)), int(round(cf))
    return DetectionReport(zmaps, max_z, threshold_z, (int(r), int(c), int(k)))


def detect_patch(maps: BiasMaps, reference=None, window: int = 3, threshold_z: float = 5.0,
                 smooth: int = 5, variance: float = 0.99,
                 min_count: int = MIN_CLASS_STIMULI) -> DetectionReport:
    """Flag localized structure in any class map.

    ``reference`` (a Dataset, image array or :class:`DataSubspace`) switches
    the residual from a high-pass filter to the component of each map that
    the reference images cannot express. Digit-like structure then drops
    out and a stamped trigger, which lives where clean data never varies,
    remains. Without it, the plain high-pass statistic is used. Classes
    with fewer than ``min_count`` stimuli are skipped; for weighted maps the
    effective sample size is compared instead of the hard count.
    """
    n = maps.metadata.get("n", int(maps.counts.sum()))
    if n < MIN_DETECTION_STIMULI:
        warnings.warn(f"bias maps from {n} stimuli; detection expects at least "
                      f"{MIN_DETECTION_STIMULI}", stacklevel=2)
    sub = reference
    if reference is not None and not isinstance(reference, DataSubspace):
        sub = data_subspace(reference, variance)
    skip = maps.empty | (np.asarray(maps.support) < min_count)
    weights = maps.counts if maps.weights is None else maps.weights
    return detect_maps(maps.maps, window, threshold_z, smooth, skip=skip,
                       subspace=sub, weights=weights)


def gradient_baseline(net, dataset: Dataset, window: int = 3, threshold_z: float = 5.0,
                      smooth: int = 5, reference=None, variance: float = 0.99):
    """Mean input gradient per label and the same anomaly statistic on those maps."""
    grads = input_gradient(net, dataset, group_by_label=True)
    counts = np.bincount(dataset.labels, minlength=net.num_classes)
    sub = reference
    if reference is not None and not isinstance(reference, DataSubspace):
        sub = data_subspace(reference, variance)
    return grads, detect_maps(grads, window, threshold_z, smooth, skip=counts == 0,
                              subspace=sub, weights=counts)
