"""Layer primitives with explicit forward caches and analytic backward passes.

Everything is channels-last: activations are ``(batch, height, width,
channels)``. Convolutions are stride-1 (padding configurable), pooling is
fixed 2x2/stride-2 with single-argmax gradient routing, and dropout is the
inverted variant so inference needs no rescaling. Each ``*_forward`` returns
``(out, cache)``; the matching ``*_backward`` consumes the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError


def _check_shapes(name: str, got, expected) -> None:
    if got != expected:
        raise ValidationError(f"{name}: shape {got} does not match expected {expected}")


# -- convolution -----------------------------------------------------------------


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int):
    """Stride-1 2D convolution. ``w`` is (kh, kw, in_ch, out_ch).

    pad=1 with a 3x3 kernel preserves the spatial size; pad=0 is a valid
    convolution shrinking each side by kh-1 / kw-1.
    """
    kh, kw, c_in, _ = w.shape
    if x.ndim != 4 or x.shape[3] != c_in:
        raise ValidationError(f"conv input {x.shape} incompatible with kernel {w.shape}")
    if pad:
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    else:
        xp = x
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ValidationError(f"conv input {x.shape} smaller than kernel {(kh, kw)} at pad={pad}")
    # (B, H', W', C, kh, kw) -> (B, H', W', kh, kw, C)
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    bsz, ho, wo = windows.shape[:3]
    cols = np.ascontiguousarray(windows).reshape(bsz * ho * wo, kh * kw * c_in)
    out = cols @ w.reshape(kh * kw * c_in, -1) + b
    out = out.reshape(bsz, ho, wo, -1)
    cache = (cols, x.shape, w, pad)
    return out, cache


def conv2d_backward(dout: np.ndarray, cache):
    cols, x_shape, w, pad = cache
    kh, kw, c_in, c_out = w.shape
    bsz, ho, wo, _ = dout.shape
    dflat = dout.reshape(bsz * ho * wo, c_out)
    dw = (cols.T @ dflat).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(kh * kw * c_in, c_out).T).reshape(bsz, ho, wo, kh, kw, c_in)
    hp, wp = x_shape[1] + 2 * pad, x_shape[2] + 2 * pad
    dxp = np.zeros((bsz, hp, wp, c_in), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pad : hp - pad, pad : wp - pad, :] if pad else dxp
    return dx, dw, db


# -- pooling ---------------------------------------------------------------------


def maxpool2x2_forward(x: np.ndarray):
    """2x2 max pooling with stride 2; ties route to the first maximum."""
    bsz, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValidationError(f"maxpool2x2 needs even spatial dims, got {x.shape}")
    h2, w2 = h // 2, w // 2
    cells = x.reshape(bsz, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, h2, w2, c, 4)
    idx = cells.argmax(axis=4)
    out = np.take_along_axis(cells, idx[..., None], axis=4)[..., 0]
    return out, (idx, x.shape)


def maxpool2x2_backward(dout: np.ndarray, cache):
    idx, x_shape = cache
    bsz, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    dcells = np.zeros((bsz, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(dcells, idx[..., None], dout[..., None], axis=4)
    return dcells.reshape(bsz, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)


# -- pointwise and dense ---------------------------------------------------------


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, x


def relu_backward(dout: np.ndarray, cache):
    return dout * (cache > 0)


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    _check_shapes("dense", (x.shape[1],), (w.shape[0],))
    return x @ w + b, (x, w)


def dense_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x: np.ndarray, p: float, rng: np.random.Generator | None, train: bool):
    """Inverted dropout: keep with probability 1-p and scale kept units by 1/(1-p)."""
    if not train or p <= 0.0:
        return x, None
    if rng is None:
        raise ValidationError("training-mode dropout needs a random generator")
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(x.shape) >= p).astype(x.dtype) * scale
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask):
    return dout if mask is None else dout * mask


def flatten_forward(x: np.ndarray):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dout: np.ndarray, shape):
    return dout.reshape(shape)
