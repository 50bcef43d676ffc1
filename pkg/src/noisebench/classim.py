"""Classification images: exact streaming accumulators, bias maps and template matching.

Noise stimuli arrive on the 2**-24 grid, so the accumulators hold integer
sums. Merging is then exactly associative and commutative, which makes the
result independent of how the stimulus index range was partitioned.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .confusion import ConfusionMatrix
from .datasets import Dataset
from .errors import ConfigError, FormatError, InsufficientData, ShapeError
from .noise import StimulusStream, mix
from .pgm import read_raw, write_pgm, write_raw
from .rng import GRID, dequantize

log = logging.getLogger(__name__)

BLOCK = 1000  # stimuli per work item; fixed so results never depend on scheduling
WEIGHTINGS = ("hard", "confidence", "soft")


@dataclass
class ClassAccumulator:
    """Integer noise sums per (signal class, response class) cell.

    Noise-only runs have a single signal row. ``weighted_sums`` is only
    present for weighted collections and is ordinary float64, so unlike the
    integer sums it is deterministic but not bit-exact across partitions.
    With ``weighting="confidence"`` a stimulus adds its top softmax
    probability to the class it was assigned; with ``"soft"`` it adds its
    probability of every class to that class.
    """

    sums: np.ndarray  # (S, K, C, H, W) int64, in units of 2**-24
    counts: np.ndarray  # (S, K) int64
    weighted_sums: np.ndarray | None = None  # (K, C, H, W) float64
    weight_totals: np.ndarray | None = None  # (K,) sum of weights
    weight_sq_totals: np.ndarray | None = None  # (K,) sum of squared weights
    weighting: str = "hard"

    @classmethod
    def empty(cls, num_classes: int, shape, signal_classes: int = 1, weighted: bool | str = False):
        shape = tuple(shape)
        mode = {False: "hard", True: "confidence"}.get(weighted, weighted)
        if mode not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {weighted!r}; expected one of {WEIGHTINGS}")
        acc = cls(np.zeros((signal_classes, num_classes) + shape, dtype=np.int64),
                  np.zeros((signal_classes, num_classes), dtype=np.int64), weighting=mode)
        if mode != "hard":
            acc.weighted_sums = np.zeros((num_classes,) + shape)
            acc.weight_totals = np.zeros(num_classes)
            acc.weight_sq_totals = np.zeros(num_classes)
        return acc

    @property
    def num_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def signal_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def shape(self) -> tuple:
        return self.sums.shape[2:]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def class_sums(self) -> np.ndarray:
        return self.sums.sum(axis=0)

    def cell_mean(self, signal: int, response: int) -> np.ndarray | None:
        n = self.counts[signal, response]
        if n == 0:
            return None
        return self.sums[signal, response] / (float(GRID) * n)

    def add(self, quantized_noise: np.ndarray, responses: np.ndarray, signals=None, weights=None):
        """Add a batch of quantized noise patterns to their cells."""
        responses = np.asarray(responses)
        signals = np.zeros_like(responses) if signals is None else np.asarray(signals)
        cell = signals * self.num_classes + responses
        flat = quantized_noise.reshape(len(responses), -1)
        sums = self.sums.reshape(-1, flat.shape[1])
        for c in np.unique(cell):
            sel = cell == c
            sums[c] += flat[sel].sum(axis=0)
        np.add.at(self.counts.reshape(-1), cell, 1)
        if self.weighted_sums is not None and weights is not None:
            wflat = self.weighted_sums.reshape(self.num_classes, -1)
            pix = flat / float(GRID)
            weights = np.asarray(weights, dtype=np.float64)
            if weights.ndim == 2:  # (N, K): every class takes every stimulus
                wflat += weights.T @ pix
                self.weight_totals += weights.sum(axis=0)
                self.weight_sq_totals += (weights * weights).sum(axis=0)
            else:
                for r in np.unique(responses):
                    sel = responses == r
                    wflat[r] += weights[sel] @ pix[sel]
                    self.weight_totals[r] += weights[sel].sum()
                    self.weight_sq_totals[r] += weights[sel] @ weights[sel]

    def merge(self, other: "ClassAccumulator") -> "ClassAccumulator":
        if self.sums.shape != other.sums.shape:
            raise ShapeError("cannot merge accumulators of different shapes")
        if self.weighting != other.weighting:
            raise ConfigError(f"cannot merge {self.weighting} and {other.weighting} accumulators")
        out = ClassAccumulator(self.sums + other.sums, self.counts + other.counts, weighting=self.weighting)
        if self.weighted_sums is not None and other.weighted_sums is not None:
            out.weighted_sums = self.weighted_sums + other.weighted_sums
            out.weight_totals = self.weight_totals + other.weight_totals
            out.weight_sq_totals = self.weight_sq_totals + other.weight_sq_totals
        return out


# -------------------------------------------------------------------- collect
def _scores_fn(model):
    return model.logits if hasattr(model, "logits") else model


def collect(model, stream: StimulusStream, signals: Dataset | None = None, gamma: float | None = None,
            start: int = 0, stop: int | None = None, threads: int = 1, num_classes: int | None = None,
            confidence_weighted: bool = False, block: int = BLOCK,
            weighting: str | None = None) -> ClassAccumulator:
    """Classify stimuli ``start..stop`` of ``stream`` and accumulate the noise per decision.

    ``model`` is a :class:`~noisebench.nn.Network` or any callable mapping a
    batch to per-class scores. With ``signals`` and ``gamma`` the network sees
    ``mix(signal, noise, gamma)``, where stimulus ``i`` pairs with signal
    ``i % len(signals)``; only the noise part is accumulated, in the cell of
    (signal label, response).

    ``weighting`` ("hard", "confidence" or "soft") adds float64 weighted
    sums next to the exact integer ones; ``confidence_weighted=True`` is
    shorthand for "confidence". Soft weighting lets classes the model never
    picks still collect the stimuli that raise their probability.
    """
    mode = weighting or ("confidence" if confidence_weighted else "hard")
    if mode not in WEIGHTINGS:
        raise ConfigError(f"unknown weighting {mode!r}; expected one of {WEIGHTINGS}")
    stop = stream.count if stop is None else stop
    if not 0 <= start <= stop <= stream.count:
        raise ConfigError(f"index range [{start}, {stop}) outside stream of {stream.count}")
    in_shape = getattr(model, "input_shape", None)
    if in_shape is not None and tuple(in_shape) != tuple(stream.shape):
        raise ShapeError(f"stream shape {stream.shape} does not match model input {in_shape}")
    if (signals is None) != (gamma is None):
        raise ConfigError("signals and gamma must be given together")
    if signals is not None and tuple(signals.shape) != tuple(stream.shape):
        raise ShapeError(f"signal shape {signals.shape} does not match stream shape {stream.shape}")
    k = num_classes or getattr(model, "num_classes", None)
    if k is None:
        raise ConfigError("num_classes is required for plain callables")
    s_classes = signals.num_classes if signals is not None else 1
    scores = _scores_fn(model)

    def work(lo: int, hi: int) -> ClassAccumulator:
        acc = ClassAccumulator.empty(k, stream.shape, s_classes, mode)
        q = stream.quantized_batch(lo, hi)
        noise = dequantize(q)
        sig = None
        if signals is not None:
            idx = np.arange(lo, hi) % len(signals)
            x = mix(signals.images[idx], noise, gamma)
            sig = signals.labels[idx]
        else:
            x = noise
        out = np.asarray(scores(x), dtype=np.float64)
        resp = out.argmax(axis=1)
        w = None
        if mode != "hard":
            p = np.exp(out - out.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            w = p if mode == "soft" else p.max(axis=1)
        acc.add(q, resp, sig, w)
        return acc

    # blocks aligned to multiples of ``block`` so any partition reuses the same pieces
    edges = sorted({start, stop, *range((start // block + 1) * block, stop, block)})
    pieces = list(zip(edges[:-1], edges[1:]))
    total = ClassAccumulator.empty(k, stream.shape, s_classes, mode)
    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(threads) as pool:
            for part in pool.map(lambda p: work(*p), pieces):
                total = total.merge(part)
    else:
        for p in pieces:
            total = total.merge(work(*p))
    return total


# ---------------------------------------------------------------- binary image
def binary_classification_image(acc: ClassAccumulator, classes: tuple[int, int] = (0, 1),
                                 positive_class: int | None = None, mode: str = "auto") -> np.ndarray:
    """Difference of response-grouped mean noise for a two-alternative task.

    ``mode="signal"`` uses all four (signal, response) cells,
    ``(n_a,pos + n_b,pos) - (n_a,neg + n_b,neg)``; ``mode="noise_only"``
    pools over signals, ``n_*,pos - n_*,neg``. ``auto`` picks ``signal``
    when the accumulator has signal rows for both classes.
    Positive values are evidence for ``positive_class`` (default: the higher
    class index).
    """
    a, b = classes
    pos = max(a, b) if positive_class is None else positive_class
    if pos not in (a, b):
        raise ConfigError(f"positive_class {pos} is not one of {classes}")
    neg = b if pos == a else a
    if mode == "auto":
        mode = "signal" if acc.signal_classes > max(a, b) else "noise_only"
    if mode == "noise_only":
        sums, counts = acc.class_sums(), acc.class_counts()
        for r in (pos, neg):
            if counts[r] == 0:
                raise InsufficientData(f"no stimuli were classified as {r}")
        return (sums[pos] / counts[pos] - sums[neg] / counts[neg]) / float(GRID)
    if mode != "signal":
        raise ConfigError(f"unknown mode {mode!r}")
    if acc.signal_classes <= max(a, b):
        raise InsufficientData("accumulator has no signal-present cells for these classes")
    out = np.zeros(acc.shape)
    for r, sign in ((pos, 1.0), (neg, -1.0)):
        means = [acc.cell_mean(s, r) for s in (a, b)]
        if all(m is None for m in means):
            raise InsufficientData(f"both cells of response {r} are empty")
        for s, m in zip((a, b), means):
            if m is None:
                warnings.warn(f"cell (signal={s}, response={r}) is empty; treated as zero", stacklevel=2)
            else:
                out += sign * m
    return out


# ------------------------------------------------------------------- bias maps
@dataclass
class BiasMaps:
    maps: np.ndarray  # (K, C, H, W) float64 per-class mean noise
    counts: np.ndarray  # (K,) hard decisions per class
    metadata: dict = field(default_factory=dict)
    noise_mean: np.ndarray | None = None  # (C, H, W) mean over all stimuli
    weights: np.ndarray | None = None  # (K,) total weight per class, weighted maps only
    effective_counts: np.ndarray | None = None  # (K,) (sum w)^2 / sum w^2, weighted maps only

    @property
    def support(self) -> np.ndarray:
        """Stimuli behind each map: hard counts, or effective sample sizes when weighted."""
        return self.counts if self.effective_counts is None else self.effective_counts

    @property
    def empty(self) -> np.ndarray:
        return np.asarray(self.support) == 0

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    def centered(self) -> np.ndarray:
        """Maps minus the mean of all stimuli."""
        if self.noise_mean is None:
            w = np.asarray(self.counts if self.weights is None else self.weights, dtype=np.float64)
            total = np.tensordot(w, self.maps, axes=1) / max(w.sum(), 1e-300)
            return self.maps - total
        return self.maps - self.noise_mean

    def dominant_class(self) -> tuple[int, float]:
        c = int(np.argmax(self.counts))
        return c, float(self.counts[c] / self.counts.sum())


def bias_maps(acc: ClassAccumulator, weighted: bool = False, metadata: dict | None = None) -> BiasMaps:
    """Per-response-class mean of the accumulated noise; empty classes get zero maps.

    With ``weighted`` the maps are weight-normalised means of the weighted
    sums, and ``effective_counts`` records each map's effective sample size.
    """
    counts = acc.class_counts()
    noise_mean = acc.class_sums().sum(0) / (float(GRID) * max(acc.total, 1))
    meta = {"n": acc.total, **(metadata or {})}
    if not weighted:
        maps = acc.class_sums() / (float(GRID) * np.maximum(counts, 1))[:, None, None, None]
        maps[counts == 0] = 0.0
        return BiasMaps(maps, counts, meta, noise_mean)
    if acc.weighted_sums is None:
        raise ConfigError("accumulator was collected without weights")
    tot, sq = acc.weight_totals, acc.weight_sq_totals
    live = tot > 0
    maps = acc.weighted_sums / np.where(live, tot, 1.0)[:, None, None, None]
    maps[~live] = 0.0
    eff = np.where(live, tot * tot / np.where(sq > 0, sq, 1.0), 0.0)
    meta["weighting"] = acc.weighting
    return BiasMaps(maps, counts, meta, noise_mean, tot.copy(), eff)


# ------------------------------------------------------------ template matching
def _template_array(templates) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(templates, BiasMaps):
        return templates.maps, ~templates.empty
    t = np.asarray(templates, dtype=np.float64)
    return t, np.ones(len(t), dtype=bool)


def template_scores(templates, images, mode: str = "raw") -> np.ndarray:
    t, valid = _template_array(templates)
    if not valid.any():
        raise InsufficientData("all template classes are empty")
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == t.ndim - 1
    x = x.reshape((1 if single else len(x)), -1)
    tf = t.reshape(len(t), -1)
    if x.shape[1] != tf.shape[1]:
        raise ShapeError(f"images of size {x.shape[1]} do not match templates of size {tf.shape[1]}")
    if mode == "centered":
        tf = tf - tf.mean(axis=1, keepdims=True)
    elif mode == "cosine":
        nrm = np.linalg.norm(tf, axis=1, keepdims=True)
        tf = np.divide(tf, nrm, out=np.zeros_like(tf), where=nrm > 0)
    elif mode != "raw":
        raise ConfigError(f"unknown template mode {mode!r}")
    s = x @ tf.T
    s[:, ~valid] = -np.inf
    return s


def template_classify(templates, image, mode: str = "raw") -> int:
    """Class whose template has the largest inner product with ``image``; ties go low."""
    return int(template_scores(templates, image, mode)[0].argmax())


def template_eval(templates, dataset: Dataset, mode: str = "raw") -> tuple[float, ConfusionMatrix]:
    pred = template_scores(templates, dataset.images, mode).argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(dataset.labels, pred, dataset.num_classes)
    return cm.accuracy, cm


def mean_image_templates(dataset: Dataset) -> np.ndarray:
    return dataset.class_means()


def weight_templates(net) -> np.ndarray:
    """Rows of the first dense layer reshaped to images (meaningful for ``logreg``)."""
    first = net.specs[0]
    if first.kind != "dense":
        raise ConfigError(f"{net.architecture_id} does not start with a dense layer")
    w = net.weights[first.name].astype(np.float64)
    return w.reshape((w.shape[0],) + tuple(net.input_shape))


# ---------------------------------------------------------------------- export
def export_bias_maps(maps: BiasMaps, out_dir, prefix: str = "bias") -> list[Path]:
    """One PGM per class plus raw float32 sidecars (raw and centered maps)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    scales = []
    for c in range(maps.num_classes):
        p = out / f"{prefix}_class{c}.pgm"
        scales.append(write_pgm(p, maps.maps[c]))
        written.append(p)
    meta = {**maps.metadata, "counts": maps.counts.tolist(), "empty": maps.empty.tolist(),
            "pgm_scale": scales}
    if maps.weights is not None:
        meta["weights"] = maps.weights.tolist()
        meta["effective_counts"] = maps.effective_counts.tolist()
    write_raw(out / f"{prefix}.f32", maps.maps, {**meta, "variant": "raw"})
    write_raw(out / f"{prefix}_centered.f32", maps.centered(), {**meta, "variant": "centered"})
    written += [out / f"{prefix}.f32", out / f"{prefix}_centered.f32"]
    return written


def load_bias_maps(path) -> BiasMaps:
    arr, header = read_raw(path)
    meta = {k: v for k, v in header.items()
            if k not in ("dtype", "shape", "counts", "empty", "pgm_scale", "variant", "weights",
                         "effective_counts")}
    weights = header.get("weights")
    eff = header.get("effective_counts")
    return BiasMaps(arr.astype(np.float64), np.asarray(header["counts"], dtype=np.int64), meta,
                    weights=None if weights is None else np.asarray(weights, dtype=np.float64),
                    effective_counts=None if eff is None else np.asarray(eff, dtype=np.float64))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def save_accumulator(acc: ClassAccumulator, path, metadata: dict | None = None) -> None:
    """Integer sums as a raw little-endian int64 file; counts go in the JSON header.

    Weighted sums, when present, go to ``path + ".weighted"`` as float64
    with the weight totals in their own header.
    """
    write_raw(path, acc.sums, {"counts": acc.counts.tolist(), "weighting": acc.weighting,
                               **(metadata or {})}, dtype="<i8")
    if acc.weighted_sums is not None:
        write_raw(f"{path}.weighted", acc.weighted_sums,
                  {"weight_totals": acc.weight_totals.tolist(),
                   "weight_sq_totals": acc.weight_sq_totals.tolist()}, dtype="<f8")


def load_accumulator(path) -> tuple[ClassAccumulator, dict]:
    sums, header = read_raw(path)
    counts = np.asarray(header.pop("counts"), dtype=np.int64)
    if sums.dtype != np.int64 or counts.shape != sums.shape[:2]:
        raise FormatError(f"{path}: not an accumulator file")
    mode = header.pop("weighting", "hard")
    meta = {k: v for k, v in header.items() if k not in ("dtype", "shape")}
    acc = ClassAccumulator(sums, counts, weighting=mode)
    if mode != "hard":
        wsums, wheader = read_raw(f"{path}.weighted")
        if wsums.shape != (sums.shape[1],) + sums.shape[2:]:
            raise FormatError(f"{path}.weighted: shape {wsums.shape} does not match the accumulator")
        acc.weighted_sums = wsums
        acc.weight_totals = np.asarray(wheader["weight_totals"], dtype=np.float64)
        acc.weight_sq_totals = np.asarray(wheader["weight_sq_totals"], dtype=np.float64)
    return acc, meta
