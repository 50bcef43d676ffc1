"""Binary PGM (P5) images and raw float32 sidecars."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError


def to_uint8(img: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    """Min-max scale to 0..255; returns the image and the (min, max) used."""
    a = np.asarray(img, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        out = np.rint((a - lo) / (hi - lo) * 255.0)
    else:
        out = np.zeros_like(a)
    return out.astype(np.uint8), (lo, hi)


def tile(maps: np.ndarray, cols: int | None = None, pad: int = 1) -> np.ndarray:
    """Arrange (K, H, W) maps into one sheet; each map is scaled independently."""
    maps = np.asarray(maps)
    k, h, w = maps.shape
    cols = cols or int(np.ceil(np.sqrt(k)))
    rows = int(np.ceil(k / cols))
    sheet = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad), dtype=np.uint8)
    for i in range(k):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        sheet[y:y + h, x:x + w] = to_uint8(maps[i])[0]
    return sheet


def write_pgm(path, img: np.ndarray) -> tuple[float, float]:
    """Write a 2-D array as P5. Non-uint8 input is min-max normalized."""
    a = np.asarray(img)
    if a.ndim == 3:  # channels side by side
        a = np.concatenate(list(a), axis=1)
    if a.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {a.shape}")
    scale = (0.0, 255.0)
    if a.dtype != np.uint8:
        a, scale = to_uint8(a)
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + a.tobytes())
    return scale


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pix = data[len(data) - w * h:]
    return np.frombuffer(pix, dtype=np.uint8).reshape(h, w)


def write_raw(path, array: np.ndarray, meta: dict, dtype: str = "<f4") -> None:
    """Little-endian payload at ``path`` plus ``path + '.json'`` describing it."""
    if dtype not in ("<f4", "<f8", "<i8"):
        raise FormatError(f"unsupported raw dtype {dtype}")
    a = np.ascontiguousarray(array, dtype=dtype)
    Path(path).write_bytes(a.tobytes())
    header = {"dtype": dtype, "shape": list(a.shape), **meta}
    Path(str(path) + ".json").write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")


def read_raw(path) -> tuple[np.ndarray, dict]:
    try:
        header = json.loads(Path(str(path) + ".json").read_text())
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    shape = tuple(header["shape"])
    dtype = np.dtype(header.get("dtype", "<f4"))
    if len(payload) != dtype.itemsize * int(np.prod(shape)):
        raise FormatError(f"{path}: payload size does not match header shape {shape}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy(), header
