"""Peephole LSTM cell: forward recurrence and backpropagation through time.

Gate equations (elementwise sigmoid, tanh cell nonlinearity):

    i_t = sigmoid(x_t Wxi + h_{t-1} Whi + c_{t-1} Wci + b_i)
    f_t = sigmoid(x_t Wxf + h_{t-1} Whf + c_{t-1} Wcf + b_f)
    c_t = f_t * c_{t-1} + i_t * tanh(x_t Wxc + h_{t-1} Whc + b_c)
    o_t = sigmoid(x_t Wxo + h_{t-1} Who + c_t Wco + b_o)
    h_t = o_t * tanh(c_t)

The cell state is updated before the output gate reads it through Wco. The
three cell-to-gate (peephole) connections are full matrices, giving eleven
weight matrices and four bias vectors per cell.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError

WEIGHT_NAMES = ("w_xi", "w_hi", "w_ci", "w_xf", "w_hf", "w_cf", "w_xc", "w_hc", "w_xo", "w_ho", "w_co")
BIAS_NAMES = ("b_i", "b_f", "b_c", "b_o")


def init_lstm_params(
    input_size: int, hidden_size: int, rng: np.random.Generator, dtype=np.float32
) -> dict[str, np.ndarray]:
    """Small-uniform input/peephole matrices, orthogonal recurrent matrices,
    forget-gate bias 1."""
    params: dict[str, np.ndarray] = {}
    s_in = float(np.sqrt(1.0 / input_size))
    s_h = float(np.sqrt(1.0 / hidden_size))
    for gate in "ifco":
        params[f"w_x{gate}"] = rng.uniform(-s_in, s_in, size=(input_size, hidden_size)).astype(dtype)
        q, _ = np.linalg.qr(rng.normal(size=(hidden_size, hidden_size)))
        params[f"w_h{gate}"] = q.astype(dtype)
    for gate in "ifo":
        params[f"w_c{gate}"] = rng.uniform(-s_h, s_h, size=(hidden_size, hidden_size)).astype(dtype)
    for name in BIAS_NAMES:
        params[name] = np.zeros(hidden_size, dtype=dtype)
    params["b_f"] = np.ones(hidden_size, dtype=dtype)
    return params


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: dict):
    """One recurrence step for a batch. Returns (h, c, cache)."""
    if x.shape[1] != params["w_xi"].shape[0]:
        raise ValidationError(
            f"lstm input width {x.shape[1]} does not match w_xi rows {params['w_xi'].shape[0]}"
        )
    if h_prev.shape != c_prev.shape or h_prev.shape[1] != params["w_hi"].shape[0]:
        raise ValidationError("lstm state shapes do not match the recurrent matrices")
    i = _sigmoid(x @ params["w_xi"] + h_prev @ params["w_hi"] + c_prev @ params["w_ci"] + params["b_i"])
    f = _sigmoid(x @ params["w_xf"] + h_prev @ params["w_hf"] + c_prev @ params["w_cf"] + params["b_f"])
    g = np.tanh(x @ params["w_xc"] + h_prev @ params["w_hc"] + params["b_c"])
    c = f * c_prev + i * g
    o = _sigmoid(x @ params["w_xo"] + h_prev @ params["w_ho"] + c @ params["w_co"] + params["b_o"])
    tc = np.tanh(c)
    h = o * tc
    cache = (x, h_prev, c_prev, i, f, g, c, o, tc)
    return h, c, cache


def lstm_step_backward(dh: np.ndarray, dc_next: np.ndarray, cache, params: dict, grads: dict):
    """Backward through one step; accumulates parameter gradients into ``grads``.

    Returns (dx, dh_prev, dc_prev).
    """
    x, h_prev, c_prev, i, f, g, c, o, tc = cache
    do = dh * tc
    da_o = do * o * (1.0 - o)
    dc = dh * o * (1.0 - tc * tc) + dc_next + da_o @ params["w_co"].T
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    da_i = di * i * (1.0 - i)
    da_f = df * f * (1.0 - f)
    da_c = dg * (1.0 - g * g)

    grads["w_xi"] += x.T @ da_i
    grads["w_hi"] += h_prev.T @ da_i
    grads["w_ci"] += c_prev.T @ da_i
    grads["w_xf"] += x.T @ da_f
    grads["w_hf"] += h_prev.T @ da_f
    grads["w_cf"] += c_prev.T @ da_f
    grads["w_xc"] += x.T @ da_c
    grads["w_hc"] += h_prev.T @ da_c
    grads["w_xo"] += x.T @ da_o
    grads["w_ho"] += h_prev.T @ da_o
    grads["w_co"] += c.T @ da_o
    grads["b_i"] += da_i.sum(axis=0)
    grads["b_f"] += da_f.sum(axis=0)
    grads["b_c"] += da_c.sum(axis=0)
    grads["b_o"] += da_o.sum(axis=0)

    dx = da_i @ params["w_xi"].T + da_f @ params["w_xf"].T + da_c @ params["w_xc"].T + da_o @ params["w_xo"].T
    dh_prev = (
        da_i @ params["w_hi"].T + da_f @ params["w_hf"].T + da_c @ params["w_hc"].T + da_o @ params["w_ho"].T
    )
    dc_prev = dc * f + da_i @ params["w_ci"].T + da_f @ params["w_cf"].T
    return dx, dh_prev, dc_prev


def lstm_forward(xs: np.ndarray, params: dict):
    """Run the recurrence over ``xs`` of shape (batch, time, features).

    Returns the final hidden state and the per-step caches; initial states are
    zero. Only the last step's output feeds downstream layers.
    """
    bsz, steps, _ = xs.shape
    hidden = params["w_hi"].shape[0]
    h = np.zeros((bsz, hidden), dtype=xs.dtype)
    c = np.zeros((bsz, hidden), dtype=xs.dtype)
    caches = []
    for t in range(steps):
        h, c, cache = lstm_step(xs[:, t, :], h, c, params)
        caches.append(cache)
    return h, caches


def lstm_backward(dh_last: np.ndarray, caches, params: dict):
    """Backprop through time from a gradient on the final hidden state.

    Returns (parameter grads, dxs of shape (batch, time, features)).
    """
    grads = {k: np.zeros_like(params[k]) for k in WEIGHT_NAMES + BIAS_NAMES}
    bsz = dh_last.shape[0]
    steps = len(caches)
    input_size = params["w_xi"].shape[0]
    dxs = np.empty((bsz, steps, input_size), dtype=dh_last.dtype)
    dh = dh_last
    dc = np.zeros_like(dh_last)
    for t in reversed(range(steps)):
        dx, dh, dc = lstm_step_backward(dh, dc, caches[t], params, grads)
        dxs[:, t, :] = dx
    return grads, dxs
