"""Array kernels for the engine. Activations are NHWC internally."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def im2col(x: np.ndarray, kh: int, kw: int):
    """(N, H, W, C) -> (N*Ho*Wo, kh*kw*C), column order (kh, kw, C)."""
    n, h, w, c = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N, Ho, Wo, C, kh, kw
    ho, wo = win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(n * ho * wo, kh * kw * c), (n, ho, wo)


def _wmat(weight: np.ndarray) -> np.ndarray:
    m = weight.shape[0]
    return weight.transpose(0, 2, 3, 1).reshape(m, -1)


def conv_forward(x, weight, bias, padding: str):
    """Cross-correlation with stride 1. ``weight`` is (M, C, kh, kw)."""
    m, c, kh, kw = weight.shape
    xp = pad_same(x, kh, kw) if padding == "same" else x
    cols, (n, ho, wo) = im2col(xp, kh, kw)
    out = cols @ _wmat(weight).T
    out += bias
    return out.reshape(n, ho, wo, m), (cols, xp.shape)


def conv_backward(dout, weight, cache, padding: str, need_dx: bool = True):
    cols, xp_shape = cache
    m, c, kh, kw = weight.shape
    n, ho, wo, _ = dout.shape
    dmat = dout.reshape(-1, m)
    dw = (dmat.T @ cols).reshape(m, kh, kw, c).transpose(0, 3, 1, 2)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ _wmat(weight)).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    if padding == "same":
        ph, pw = kh // 2, kw // 2
        dxp = dxp[:, ph:xp_shape[1] - ph, pw:xp_shape[2] - pw, :]
    return dxp, dw, db


def maxpool_forward(x, need_arg: bool = True):
    """2x2 stride-2 max pool; ties resolve to the top-left element.

    The cache holds the winning position per window (0..3, row-major) and
    is None when ``need_arg`` is false.
    """
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    quads = [x[:, di:2 * h2:2, dj:2 * w2:2, :] for di in (0, 1) for dj in (0, 1)]
    if not need_arg:
        return np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3])), None
    best = quads[0].copy()
    arg = np.zeros(best.shape, dtype=np.int8)
    for k in (1, 2, 3):
        win = quads[k] > best
        arg[win] = k
        np.maximum(best, quads[k], out=best)
    return best, (arg, x.shape)


def maxpool_backward(dout, cache):
    arg, shape = cache
    n, h, w, c = shape
    h2, w2 = h // 2, w // 2
    dx = np.zeros(shape, dtype=dout.dtype)
    zero = np.zeros((), dtype=dout.dtype)
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        dx[:, di:2 * h2:2, dj:2 * w2:2, :] = np.where(arg == k, dout, zero)
    return dx


def activation_forward(fn: str, z):
    if fn == "relu":
        return np.maximum(z, 0)
    if fn == "tanh":
        return np.tanh(z)
    if fn in ("softmax", "identity"):
        return z  # softmax is folded into the loss; the stage output is the logit
    raise ValueError(f"unknown activation {fn!r}")


def activation_backward(fn: str, dout, z, a):
    if fn == "relu":
        return dout * (z > 0)
    if fn == "tanh":
        return dout * (1 - a * a)
    return dout


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n
