"""Gated recurrent unit with backpropagation through time.

Per step, with ``[a, b]`` denoting feature concatenation::

    z_t  = sigmoid([h_{t-1}, x_t] @ Wz + bz)
    r_t  = sigmoid([h_{t-1}, x_t] @ Wr + br)
    hc_t = tanh([r_t * h_{t-1}, x_t] @ Wh + bh)
    h_t  = (1 - z_t) * h_{t-1} + z_t * hc_t

Weights have shape ``(hidden + in, hidden)``; the first ``hidden`` rows act
on the recurrent state.
"""

from dataclasses import dataclass

import numpy as np

from ..tensor_core import NumericError, ShapeError
from .layers import CacheError

GRU_PARAM_KEYS = ("Wz", "z.bias", "Wr", "r.bias", "Wh", "h.bias")


@dataclass
class GruState:
    h: np.ndarray

    @classmethod
    def zeros(cls, batch, hidden, dtype=np.float64):
        return cls(np.zeros((batch, hidden), dtype=dtype))


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_forward(x_seq, params):
    """Run one GRU layer over ``x_seq`` of shape (t, batch, in) from ``h_0 = 0``.

    Args:
        x_seq: Input sequence.
        params: Mapping with keys ``Wz, z.bias, Wr, r.bias, Wh, h.bias``.

    Returns:
        ``(h_seq, final_state, cache)`` with ``h_seq`` of shape (t, batch, hidden).
    """
    Wz, bz, Wr, br, Wh, bh = (params[k] for k in GRU_PARAM_KEYS)
    if x_seq.ndim != 3:
        raise ShapeError(f"gru input must be (t, batch, in), got {x_seq.shape}")
    T, B, n_in = x_seq.shape
    H = Wz.shape[1]
    for name, W in (("Wz", Wz), ("Wr", Wr), ("Wh", Wh)):
        if W.shape != (H + n_in, H):
            raise ShapeError(f"gru {name} has shape {W.shape}, expected {(H + n_in, H)}")
    h = np.zeros((B, H), dtype=x_seq.dtype)
    h_seq = np.empty((T, B, H), dtype=x_seq.dtype)
    steps = []
    for t in range(T):
        x = x_seq[t]
        hx = np.concatenate([h, x], axis=1)
        z = sigmoid(hx @ Wz + bz)
        r = sigmoid(hx @ Wr + br)
        rhx = np.concatenate([r * h, x], axis=1)
        hc = np.tanh(rhx @ Wh + bh)
        h_new = (1 - z) * h + z * hc
        if not np.all(np.isfinite(h_new)):
            raise NumericError(f"non-finite GRU activation at step {t}")
        steps.append((h, hx, rhx, z, r, hc))
        h = h_new
        h_seq[t] = h
    return h_seq, GruState(h), (steps, params)


def gru_backward(grad_h_seq, cache):
    """BPTT. Returns ``(grad_x_seq, grads)`` with ``grads`` keyed like the params."""
    if cache is None:
        raise CacheError("gru_backward called without a forward cache")
    steps, params = cache
    Wz, Wr, Wh = params["Wz"], params["Wr"], params["Wh"]
    T = len(steps)
    if grad_h_seq.shape[0] != T:
        raise CacheError(f"gradient covers {grad_h_seq.shape[0]} steps, cache has {T}")
    H = Wz.shape[1]
    grads = {k: np.zeros_like(params[k]) for k in GRU_PARAM_KEYS}
    n_in = Wz.shape[0] - H
    grad_x = np.zeros((T, grad_h_seq.shape[1], n_in), dtype=grad_h_seq.dtype)
    dh_next = np.zeros_like(grad_h_seq[0])
    for t in reversed(range(T)):
        h_prev, hx, rhx, z, r, hc = steps[t]
        dh = grad_h_seq[t] + dh_next
        dz = dh * (hc - h_prev)
        dh_prev = dh * (1 - z)
        da_h = dh * z * (1 - hc * hc)
        grads["Wh"] += rhx.T @ da_h
        grads["h.bias"] += da_h.sum(axis=0)
        d_rhx = da_h @ Wh.T
        d_rh = d_rhx[:, :H]
        dr = d_rh * h_prev
        dh_prev += d_rh * r
        da_z = dz * z * (1 - z)
        da_r = dr * r * (1 - r)
        grads["Wz"] += hx.T @ da_z
        grads["z.bias"] += da_z.sum(axis=0)
        grads["Wr"] += hx.T @ da_r
        grads["r.bias"] += da_r.sum(axis=0)
        d_hx = da_z @ Wz.T + da_r @ Wr.T
        dh_prev += d_hx[:, :H]
        grad_x[t] = d_rhx[:, H:] + d_hx[:, H:]
        dh_next = dh_prev
    return grad_x, grads
