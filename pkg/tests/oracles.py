"""Independent brute-force oracles used to freeze expected values.

Everything here is deliberately written along a different path than the
package code: quadratic-time DFT sums instead of FFT, nested-loop
convolutions instead of im2col, scalar loops instead of vectorized metrics,
and a straight-line model re-implementation for the full network. None of
these functions import from the layer/spectral modules they check.
"""

from __future__ import annotations

import math

import numpy as np


# -- spectral ---------------------------------------------------------------------


def naive_dft_amplitudes(samples: np.ndarray, sample_rate: float):
    """O(N^2) one-sided magnitude spectrum with the toolkit's scaling rules:
    2|X_k|/N in the interior, |X_k|/N at DC and (even N) Nyquist."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[1]
    ks = np.arange(n // 2 + 1)
    amps = np.empty((samples.shape[0], len(ks)))
    t = np.arange(n)
    for ci in range(samples.shape[0]):
        x = samples[ci]
        for k in ks:
            ang = -2.0 * math.pi * k * t / n
            re = float(np.sum(x * np.cos(ang)))
            im = float(np.sum(x * np.sin(ang)))
            mag = math.hypot(re, im)
            if k == 0 or (n % 2 == 0 and k == n // 2):
                amps[ci, k] = mag / n
            else:
                amps[ci, k] = 2.0 * mag / n
    freqs = ks * sample_rate / n
    return freqs, amps


def brute_force_brain_rate(samples: np.ndarray, sample_rate: float, bands, mode: str) -> float:
    """End-to-end naive-DFT brain rate: means per band, in-band denominator,
    weighted sum, channel aggregation. ``bands`` is a list of (low, high)."""
    freqs, amps = naive_dft_amplitudes(samples, sample_rate)
    total = 0.0
    for ci in range(amps.shape[0]):
        per_channel = 0.0
        union_vals = []
        band_means = []
        for low, high in bands:
            vals = [amps[ci, k] for k in range(len(freqs)) if freqs[k] > 0 and low <= freqs[k] < high]
            band_means.append(sum(vals) / len(vals))
            union_vals.extend(vals)
        denom = sum(union_vals) / len(union_vals)
        for (low, high), mean_b in zip(bands, band_means):
            f_b = (low + high) / 2.0
            per_channel += f_b * (mean_b / denom)
        total += per_channel
    return total / amps.shape[0] if mode == "mean" else total


# -- metrics ----------------------------------------------------------------------


def loop_mse(y, yh) -> float:
    acc = 0.0
    for a, b in zip(y, yh):
        acc += (a - b) ** 2
    return acc / len(y)


def loop_mape(y, yh) -> float:
    acc = 0.0
    for a, b in zip(y, yh):
        acc += abs((a - b) / a)
    return 100.0 * acc / len(y)


def loop_pearson(y, yh) -> float:
    n = len(y)
    my = sum(y) / n
    mh = sum(yh) / n
    num = sum((a - my) * (b - mh) for a, b in zip(y, yh))
    dy = math.sqrt(sum((a - my) ** 2 for a in y))
    dh = math.sqrt(sum((b - mh) ** 2 for b in yh))
    return num / (dy * dh)


# -- layers -----------------------------------------------------------------------


def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    """Nested-loop stride-1 convolution over (B, H, W, C) with (kh, kw, C, F)."""
    bsz, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = h + 2 * pad - kh + 1
    wo = wd + 2 * pad - kw + 1
    out = np.zeros((bsz, ho, wo, f))
    for n in range(bsz):
        for i in range(ho):
            for j in range(wo):
                for fo in range(f):
                    acc = 0.0
                    for di in range(kh):
                        for dj in range(kw):
                            for ci in range(c):
                                acc += xp[n, i + di, j + dj, ci] * w[di, dj, ci, fo]
                    out[n, i, j, fo] = acc + b[fo]
    return out


def naive_maxpool2x2(x: np.ndarray) -> np.ndarray:
    bsz, h, w, c = x.shape
    out = np.empty((bsz, h // 2, w // 2, c))
    for n in range(bsz):
        for i in range(h // 2):
            for j in range(w // 2):
                for ci in range(c):
                    out[n, i, j, ci] = max(
                        x[n, 2 * i, 2 * j, ci],
                        x[n, 2 * i, 2 * j + 1, ci],
                        x[n, 2 * i + 1, 2 * j, ci],
                        x[n, 2 * i + 1, 2 * j + 1, ci],
                    )
    return out


# -- LSTM -------------------------------------------------------------------------

# Scalar peephole-LSTM evaluation with all weights 1, biases 0, x=0, h=0, c=1,
# computed by tests/oracles.py's sigmoid/tanh math (frozen from a separate run):
SCALAR_LSTM_CASE = {
    "i": 0.731058578630,
    "f": 0.731058578630,
    "c": 0.731058578630,
    "o": 0.675037527377,
    "h": 0.421029377428,
}


def scalar_lstm(x: float, h_prev: float, c_prev: float, w: float = 1.0, b: float = 0.0):
    """Single-unit peephole LSTM step with every weight equal to ``w``."""

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    i = sig(w * x + w * h_prev + w * c_prev + b)
    f = sig(w * x + w * h_prev + w * c_prev + b)
    g = math.tanh(w * x + w * h_prev + b)
    c = f * c_prev + i * g
    o = sig(w * x + w * h_prev + w * c + b)
    h = o * math.tanh(c)
    return i, f, c, o, h


# -- full model -------------------------------------------------------------------


def reference_full_forward(seq: np.ndarray, params: dict, cfg) -> np.ndarray:
    """Straight-line re-implementation of the full model's inference pass.

    Uses the nested-loop convolution above and explicit per-step gate
    arithmetic; shares nothing with the package's layer code beyond numpy.
    """

    def sigv(v):
        return 1.0 / (1.0 + np.exp(-v))

    bsz, steps = seq.shape[:2]
    feats = []
    for t in range(steps):
        a = seq[:, t]
        layer = 0
        for n_layers, _ in cfg.encoder.blocks:
            for _ in range(n_layers):
                a = naive_conv2d(a, params[f"enc.conv{layer}_w"], params[f"enc.conv{layer}_b"], pad=1)
                a = np.maximum(a, 0.0)
                layer += 1
            a = naive_maxpool2x2(a)
        feats.append(a)

    hidden = cfg.lstm_hidden
    h = np.zeros((bsz, hidden))
    c = np.zeros((bsz, hidden))
    for t in range(steps):
        xt = feats[t].reshape(bsz, -1)
        i = sigv(xt @ params["lstm.w_xi"] + h @ params["lstm.w_hi"] + c @ params["lstm.w_ci"] + params["lstm.b_i"])
        f = sigv(xt @ params["lstm.w_xf"] + h @ params["lstm.w_hf"] + c @ params["lstm.w_cf"] + params["lstm.b_f"])
        g = np.tanh(xt @ params["lstm.w_xc"] + h @ params["lstm.w_hc"] + params["lstm.b_c"])
        c = f * c + i * g
        o = sigv(xt @ params["lstm.w_xo"] + h @ params["lstm.w_ho"] + c @ params["lstm.w_co"] + params["lstm.b_o"])
        h = o * np.tanh(c)

    var_in = np.concatenate(feats, axis=3)
    var = naive_conv2d(var_in, params["var_w"], params["var_b"], pad=0)
    var = np.maximum(var, 0.0).reshape(bsz, -1)

    joint = np.concatenate([h, var], axis=1)
    a1 = np.maximum(joint @ params["head1_w"] + params["head1_b"], 0.0)
    return (a1 @ params["head2_w"] + params["head2_b"])[:, 0]


# -- finite differences -------------------------------------------------------------


def central_difference_check(
    loss_fn,
    params: dict,
    grads: dict,
    step: float = 1e-4,
    samples_per_tensor: int = 4,
    seed: int = 0,
) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients,
    sampled per parameter tensor. Mutates and restores ``params`` in place."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, tensor in params.items():
        n = min(samples_per_tensor, tensor.size)
        flat_idx = rng.choice(tensor.size, size=n, replace=False)
        errs = []
        for k in flat_idx:
            ix = np.unravel_index(k, tensor.shape)
            keep = tensor[ix]
            tensor[ix] = keep + step
            up = loss_fn()
            tensor[ix] = keep - step
            down = loss_fn()
            tensor[ix] = keep
            numeric = (up - down) / (2.0 * step)
            analytic = float(grads[name][ix])
            scale = max(abs(numeric), abs(analytic), 1e-8)
            errs.append(abs(numeric - analytic) / scale)
        worst[name] = max(errs)
    return worst
