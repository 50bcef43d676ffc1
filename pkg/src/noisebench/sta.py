"""Spike-triggered averages and covariances of network units.

A unit's "spike count" is its non-negative post-activation value (tanh
outputs are rectified). Filters are estimated from Gaussian noise confined
to the unit's receptive field on a constant background.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .datasets import Dataset
from .errors import ConfigError, NoSpikes, ShapeError
from .linalg import symmetric_eig
from .nn.network import Network, output_shapes, receptive_fields
from .noise import StimulusStream
from .rng import RandomStream, dequantize, quantize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnitAddress:
    layer: str
    map: int
    row: int | None = None  # None selects the spatial centre
    col: int | None = None


@dataclass
class StaResult:
    mu: np.ndarray | None
    n_sp: float
    rf_crop: np.ndarray | None = None
    whitened: np.ndarray | None = None
    unit: UnitAddress | None = None
    window: tuple[int, int, int] | None = None  # (top, left, size) in input pixels
    dead: bool = False


@dataclass
class StcResult:
    lam: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns


def _stimuli(source, n: int | None, batch_size: int):
    """Yield (float64 batch flattened to (B, d)) from a stream or an array."""
    if isinstance(source, StimulusStream):
        n = source.count if n is None else n
        for s in range(0, n, batch_size):
            b = source.batch(s, min(n, s + batch_size))
            yield b.reshape(len(b), -1).astype(np.float64)
    else:
        x = np.asarray(source, dtype=np.float64)
        x = x[: (len(x) if n is None else n)]
        for s in range(0, len(x), batch_size):
            yield x[s:s + batch_size].reshape(len(x[s:s + batch_size]), -1)


def _moments(source, response_fn, n, batch_size):
    sx = sxy = None
    sy = 0.0
    count = 0
    for xb in _stimuli(source, n, batch_size):
        y = np.asarray(response_fn(xb), dtype=np.float64).reshape(len(xb))
        if (y < 0).any():
            raise ConfigError("responses must be non-negative")
        if sx is None:
            sx = np.zeros(xb.shape[1])
            sxy = np.zeros(xb.shape[1])
        sx += xb.sum(axis=0)
        sxy += y @ xb
        sy += float(y.sum())
        count += len(xb)
    if count == 0:
        raise ConfigError("no stimuli")
    return sx, sxy, sy, count


def sta(source, response_fn, n: int | None = None, batch_size: int = 4096) -> StaResult:
    """Response-weighted mean of the stimuli, centred on the stimulus mean.

    ``response_fn`` maps a (B, d) float64 batch to B non-negative values.
    """
    sx, sxy, sy, count = _moments(source, response_fn, n, batch_size)
    if sy <= 0:
        raise NoSpikes("summed response is zero")
    return StaResult(sxy / sy - sx / count, sy)


def _whiten(xtx_c, xty_c, count, n_sp):
    d = xtx_c.shape[0]
    try:
        fac = sla.cho_factor(xtx_c, lower=True, check_finite=False)
        if np.diag(fac[0]).min() <= 1e-7 * np.sqrt(max(np.diag(xtx_c).max(), 1e-300)):
            raise np.linalg.LinAlgError("ill conditioned")
    except np.linalg.LinAlgError:
        alpha = 1e-6 * np.trace(xtx_c) / d
        log.debug("whitening matrix is singular; ridge alpha %.3g", alpha)
        fac = sla.cho_factor(xtx_c + (alpha if alpha > 0 else 1e-12) * np.eye(d), lower=True)
    return (count / n_sp) * sla.cho_solve(fac, xty_c)


def whitened_sta(x, y) -> np.ndarray:
    """``(N / n_sp) (X^T X)^-1 X^T y`` with X centred column-wise.

    A singular ``X^T X`` falls back to ridge with ``alpha = 1e-6 trace / d``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError(f"X {x.shape} and y {y.shape} are incompatible")
    n_sp = float(y.sum())
    if n_sp == 0:
        raise NoSpikes("summed response is zero")
    xc = x - x.mean(axis=0)
    return _whiten(xc.T @ xc, xc.T @ y, len(x), n_sp)


def stc(source, response_fn, mu, n: int | None = None, center: bool = True,
        batch_size: int = 4096) -> StcResult:
    """``(1/n_sp) sum_i y_i (x_i - mu)(x_i - mu)^T`` with its eigendecomposition.

    With ``center`` the stimuli are first shifted by their own mean, the
    convention under which :func:`sta` reports ``mu``.
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    d = mu.size
    if d > 4096:
        raise ShapeError(f"STC dimension {d} exceeds 4096; crop the stimuli")
    if center:
        sx, _, _, count = _moments(source, lambda b: np.zeros(len(b)), n, batch_size)
        offset = sx / count
    else:
        offset = np.zeros(d)
    acc = np.zeros((d, d))
    n_sp = 0.0
    for xb in _stimuli(source, n, batch_size):
        y = np.asarray(response_fn(xb), dtype=np.float64).reshape(len(xb))
        z = xb - offset - mu
        acc += (z * y[:, None]).T @ z
        n_sp += float(y.sum())
    if n_sp <= 0:
        raise NoSpikes("summed response is zero")
    lam = acc / n_sp
    lam = 0.5 * (lam + lam.T)
    vals, vecs = symmetric_eig(lam)
    return StcResult(lam, vals, vecs)


# ---------------------------------------------------------------- unit filters
def _unit_position(net: Network, layer: str, unit: UnitAddress):
    shape = output_shapes(net.specs, net.input_shape)[layer]
    if len(shape) == 1:
        if not 0 <= unit.map < shape[0]:
            raise ShapeError(f"unit {unit.map} outside layer {layer} of width {shape[0]}")
        return None
    m, h, w = shape
    row = h // 2 if unit.row is None else unit.row
    col = w // 2 if unit.col is None else unit.col
    if not (0 <= unit.map < m and 0 <= row < h and 0 <= col < w):
        raise ShapeError(f"unit {unit} outside layer {layer} of shape {shape}")
    return row, col


def rf_window(net: Network, layer: str, row: int, col: int) -> tuple[int, int, int]:
    size, jump, start = receptive_fields(net)[layer]
    return start + jump * row, start + jump * col, size


def unit_sta_filters(net: Network, layer: str, units, n: int = 100_000, seed: int = 0,
                     sigma: float = 0.15, background: float = 0.5, full_image: bool = False,
                     batch_size: int = 2000) -> list[StaResult]:
    """Plain and whitened STA for each unit, on noise inside its receptive field.

    Units sharing a spatial position share the same stimuli. Each result's
    ``rf_crop`` is the whitened STA reshaped to (C, size, size); pixels of
    the receptive field that fall outside the image are zero.
    """
    if layer not in net.stage_names():
        raise ConfigError(f"no layer named {layer!r}")
    units = [u if isinstance(u, UnitAddress) else UnitAddress(layer, int(u)) for u in units]
    c, h, w = net.input_shape
    groups: dict = {}
    for k, u in enumerate(units):
        groups.setdefault(_unit_position(net, layer, u), []).append(k)
    results: list[StaResult | None] = [None] * len(units)
    for pos, members in groups.items():
        if pos is None or full_image:
            top, left, size = 0, 0, max(h, w)
            size_hw = (h, w)
        else:
            top, left, size = rf_window(net, layer, *pos)
            size_hw = (size, size)
        rows = np.arange(top, top + size_hw[0])
        cols = np.arange(left, left + size_hw[1])
        rin = (rows >= 0) & (rows < h)
        cin = (cols >= 0) & (cols < w)
        r0, r1 = rows[rin][[0, -1]]
        c0, c1 = cols[cin][[0, -1]]
        win_shape = (c, r1 - r0 + 1, c1 - c0 + 1)
        d = int(np.prod(win_shape))
        maps = [units[k].map for k in members]
        xtx = np.zeros((d, d))
        sx = np.zeros(d)
        sxy = np.zeros((d, len(members)))
        sy = np.zeros(len(members))
        for s in range(0, n, batch_size):
            idx = range(s, min(n, s + batch_size))
            noise = np.stack([dequantize(quantize(
                RandomStream(seed, i).generator().normal(background, sigma, win_shape))) for i in idx])
            x = np.full((len(noise), c, h, w), background, dtype=np.float32)
            x[:, :, r0:r1 + 1, c0:c1 + 1] = noise
            a = net.activations(x, layer)
            y = a[:, maps] if pos is None else a[:, maps, pos[0], pos[1]]
            y = np.maximum(y.astype(np.float64), 0.0)
            flat = noise.reshape(len(noise), -1).astype(np.float64)
            xtx += flat.T @ flat
            sx += flat.sum(axis=0)
            sxy += flat.T @ y
            sy += y.sum(axis=0)
        mean = sx / n
        xtx_c = xtx - n * np.outer(mean, mean)
        for j, k in enumerate(members):
            unit = units[k]
            window = (int(top), int(left), int(size))
            if sy[j] <= 0:
                log.warning("unit %s never responds", unit)
                results[k] = StaResult(None, 0.0, unit=unit, window=window, dead=True)
                continue
            mu = sxy[:, j] / sy[j] - mean
            xty_c = sxy[:, j] - mean * sy[j]
            wsta = _whiten(xtx_c, xty_c, n, sy[j])
            crop = np.zeros((c,) + size_hw)
            ri, ci = int(np.argmax(rin)), int(np.argmax(cin))
            crop[:, ri:ri + win_shape[1], ci:ci + win_shape[2]] = wsta.reshape(win_shape)
            results[k] = StaResult(mu.reshape(win_shape), float(sy[j]), crop, wsta.reshape(win_shape),
                                   unit, window)
    return results


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    den = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / den) if den > 0 else 0.0


# --------------------------------------------------------- mean layer activity
@dataclass
class LayerMeans:
    means: np.ndarray  # (K, ...) mean activation per class
    counts: np.ndarray
    distances: np.ndarray  # (K, K) L2 distances; NaN where a class is empty

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def mean_pairwise_distance(self) -> float:
        k = len(self.counts)
        iu = np.triu_indices(k, 1)
        vals = self.distances[iu]
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if vals.size else float("nan")


def mean_layer_activation(net: Network, source, layers, group_by: str | None = None,
                          n: int | None = None, batch_size: int = 500) -> dict[str, LayerMeans]:
    """Per-class mean activation of each layer plus pairwise class distances.

    Noise streams are grouped by the network's prediction, datasets by label
    unless ``group_by`` says otherwise.
    """
    layers = [layers] if isinstance(layers, str) else list(layers)
    for name in layers:
        if name not in net.stage_names():
            raise ConfigError(f"no layer named {name!r}")
    is_data = isinstance(source, Dataset)
    group_by = group_by or ("label" if is_data else "prediction")
    if group_by not in ("label", "prediction"):
        raise ConfigError(f"group_by must be 'label' or 'prediction', not {group_by!r}")
    if group_by == "label" and not is_data:
        raise ConfigError("noise streams have no labels")
    total = len(source) if n is None else min(n, len(source))
    k = net.num_classes
    sums: dict = {}
    counts = np.zeros(k, dtype=np.int64)
    for s in range(0, total, batch_size):
        e = min(total, s + batch_size)
        x = source.images[s:e] if is_data else source.batch(s, e)
        logits, trace = net.forward(x, trace=True)
        groups = source.labels[s:e] if group_by == "label" else logits.argmax(axis=1)
        counts += np.bincount(groups, minlength=k)
        for name in layers:
            a = trace[name].astype(np.float64)
            if name not in sums:
                sums[name] = np.zeros((k,) + a.shape[1:])
            np.add.at(sums[name], groups, a)
    out = {}
    for name in layers:
        means = sums[name] / np.maximum(counts, 1).reshape((k,) + (1,) * (sums[name].ndim - 1))
        flat = means.reshape(k, -1)
        dist = np.sqrt(np.maximum(((flat[:, None, :] - flat[None, :, :]) ** 2).sum(-1), 0.0))
        dist[counts == 0, :] = np.nan
        dist[:, counts == 0] = np.nan
        out[name] = LayerMeans(means, counts, dist)
    return out
