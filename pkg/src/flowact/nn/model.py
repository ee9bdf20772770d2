"""Spatio-temporal classifier: shared per-frame conv2d stack, conv3d over
time, GRU, dense head.

Data path for an input of shape (batch, T, H, W, 3)::

    per slice: (x - input_center) * input_scale
               [conv2d -> ReLU -> maxpool] x len(conv2d_filters)
    restack along time -> conv3d -> ReLU
    spatial bridge (global average, or flatten) -> (T, batch, F)
    GRU layers -> last hidden state
    dense -> ReLU -> classifier -> softmax
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..tensor_core import SeededRng, ShapeError
from . import layers as L
from .gru import GRU_PARAM_KEYS, gru_backward, gru_forward

FULL_CONV2D_FILTERS = (20, 30, 40, 50, 32)
BRIDGES = ("average", "flatten")
INITS = ("glorot", "he")


@dataclass(frozen=True)
class ModelConfig:
    conv2d_filters: tuple = FULL_CONV2D_FILTERS
    conv2d_kernel: int = 3
    pool: int = 2
    pool_layers: int | None = None
    conv3d_filters: int = 50
    conv3d_kernel: tuple = (3, 3, 3)
    gru_hidden: int = 128
    gru_layers: int = 1
    dense_units: int = 200
    num_classes: int = 2
    in_channels: int = 3
    frames: int = 20
    height: int = 128
    width: int = 128
    bridge: str = "average"
    init: str = "glorot"
    input_center: float = 0.5
    input_scale: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "conv2d_filters", tuple(int(f) for f in self.conv2d_filters))
        object.__setattr__(self, "conv3d_kernel", tuple(int(k) for k in self.conv3d_kernel))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.bridge not in BRIDGES:
            raise ValueError(f"bridge must be one of {BRIDGES}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if not self.conv2d_filters:
            raise ValueError("need at least one conv2d layer")
        if self.gru_layers < 1:
            raise ValueError("gru_layers must be >= 1")
        h, w = self.feature_hw
        if h < 1 or w < 1:
            raise ValueError(f"{len(self.conv2d_filters)} pools of {self.pool} collapse a "
                             f"{self.height}x{self.width} frame")

    def pools_after(self, layer: int) -> bool:
        """Whether conv2d layer ``layer`` is followed by max pooling."""
        if self.pool < 2:
            return False
        return self.pool_layers is None or layer < self.pool_layers

    @property
    def feature_hw(self):
        h, w = self.height, self.width
        for i in range(len(self.conv2d_filters)):
            if self.pools_after(i):
                h, w = h // self.pool, w // self.pool
        return h, w

    @property
    def gru_input(self):
        if self.bridge == "average":
            return self.conv3d_filters
        h, w = self.feature_hw
        return h * w * self.conv3d_filters

    @property
    def is_full_profile(self):
        return self.conv2d_filters == FULL_CONV2D_FILTERS and self.frames == 20 and \
            (self.height, self.width) == (128, 128)

    def to_dict(self):
        d = asdict(self)
        d["conv2d_filters"] = list(self.conv2d_filters)
        d["conv3d_kernel"] = list(self.conv3d_kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def tiny(cls, **overrides):
        base = dict(conv2d_filters=(2, 2, 2, 2, 2), conv3d_filters=3, gru_hidden=4, dense_units=5,
                    frames=4, height=8, width=8, pool_layers=2)
        base.update(overrides)
        return cls(**base)


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple]":
    """Expected name -> shape table, in canonical order."""
    shapes = OrderedDict()
    k = config.conv2d_kernel
    c_in = config.in_channels
    for i, c_out in enumerate(config.conv2d_filters):
        shapes[f"conv2d.{i}.weight"] = (k, k, c_in, c_out)
        shapes[f"conv2d.{i}.bias"] = (c_out,)
        c_in = c_out
    shapes["conv3d.weight"] = config.conv3d_kernel + (c_in, config.conv3d_filters)
    shapes["conv3d.bias"] = (config.conv3d_filters,)
    n_in = config.gru_input
    H = config.gru_hidden
    for l in range(config.gru_layers):
        for key in GRU_PARAM_KEYS:
            shapes[f"gru.{l}.{key}"] = (H + n_in, H) if key.startswith("W") else (H,)
        n_in = H
    shapes["dense.weight"] = (H, config.dense_units)
    shapes["dense.bias"] = (config.dense_units,)
    shapes["classifier.weight"] = (config.dense_units, config.num_classes)
    shapes["classifier.bias"] = (config.num_classes,)
    return shapes


def _fans(name, shape):
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = int(np.prod(shape[:-2]))
    return receptive * shape[-2], receptive * shape[-1]


def init_params(config: ModelConfig, rng: SeededRng, dtype=np.float64) -> "OrderedDict[str, np.ndarray]":
    """Uniform(-s, s) weights, zero biases, update-gate bias -1.

    ``s = sqrt(6 / (fan_in + fan_out))`` (Glorot). With ``config.init == "he"``
    the ReLU convolutions use ``s = sqrt(6 / fan_in)`` instead.
    """
    state = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            fill = -1.0 if name.endswith(".z.bias") else 0.0
            state[name] = np.full(shape, fill, dtype=dtype)
        else:
            fan_in, fan_out = _fans(name, shape)
            if config.init == "he" and name.startswith("conv"):
                s = np.sqrt(6.0 / fan_in)
            else:
                s = np.sqrt(6.0 / (fan_in + fan_out))
            state[name] = rng.uniform(-s, s, size=shape).astype(dtype)
    return state


def validate_state(state, config: ModelConfig):
    expected = param_shapes(config)
    missing = [n for n in expected if n not in state]
    extra = [n for n in state if n not in expected]
    wrong = [f"{n}: got {tuple(state[n].shape)}, expected {s}" for n, s in expected.items()
             if n in state and tuple(state[n].shape) != s]
    if missing or extra or wrong:
        parts = []
        if missing:
            parts.append("missing " + ", ".join(missing))
        if extra:
            parts.append("unexpected " + ", ".join(extra))
        if wrong:
            parts.append("bad shape " + "; ".join(wrong))
        raise ShapeError("model state does not match config: " + " | ".join(parts))


def forward(x, state, config: ModelConfig):
    """Forward pass returning ``(logits, cache)``."""
    validate_state(state, config)
    dtype = state["dense.weight"].dtype
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 5 or x.shape[1:] != (config.frames, config.height, config.width, config.in_channels):
        raise ShapeError(f"input shape {x.shape} does not match config "
                         f"(batch, {config.frames}, {config.height}, {config.width}, {config.in_channels})")
    B, T = x.shape[:2]
    a = ((x - config.input_center) * config.input_scale).astype(dtype, copy=False)
    a = a.reshape((B * T,) + x.shape[2:])
    conv_caches = []
    for i in range(len(config.conv2d_filters)):
        a, c_conv = L.conv2d_forward(a, state[f"conv2d.{i}.weight"], state[f"conv2d.{i}.bias"])
        a, c_relu = L.relu_forward(a)
        c_pool = None
        if config.pools_after(i):
            a, c_pool = L.maxpool2d_forward(a, config.pool, config.pool)
        conv_caches.append((c_conv, c_relu, c_pool))
    vol = a.reshape((B, T) + a.shape[1:])
    vol, c3 = L.conv3d_forward(vol, state["conv3d.weight"], state["conv3d.bias"])
    vol, c3_relu = L.relu_forward(vol)
    if config.bridge == "average":
        seq = vol.mean(axis=(2, 3))
    else:
        seq = vol.reshape(B, T, -1)
    h = np.ascontiguousarray(seq.transpose(1, 0, 2))
    gru_caches = []
    for l in range(config.gru_layers):
        params = {k: state[f"gru.{l}.{k}"] for k in GRU_PARAM_KEYS}
        h, _, cache = gru_forward(h, params)
        gru_caches.append(cache)
    last = h[-1]
    d, c_dense = L.dense_forward(last, state["dense.weight"], state["dense.bias"])
    d, c_dense_relu = L.relu_forward(d)
    logits, c_cls = L.dense_forward(d, state["classifier.weight"], state["classifier.bias"])
    cache = dict(shape=x.shape, conv=conv_caches, c3=c3, c3_relu=c3_relu, vol_shape=vol.shape,
                 gru=gru_caches, T=T, dense=c_dense, dense_relu=c_dense_relu, cls=c_cls)
    return logits, cache


def backward(grad_logits, cache, config: ModelConfig):
    """Gradients of the loss w.r.t. every parameter, keyed by name."""
    if cache is None:
        raise L.CacheError("model backward called without a forward cache")
    grads = {}
    g, grads["classifier.weight"], grads["classifier.bias"] = L.dense_backward(grad_logits, cache["cls"])
    g = L.relu_backward(g, cache["dense_relu"])
    g, grads["dense.weight"], grads["dense.bias"] = L.dense_backward(g, cache["dense"])
    T = cache["T"]
    gh = np.zeros((T,) + g.shape, dtype=g.dtype)
    gh[-1] = g
    for l in reversed(range(config.gru_layers)):
        gh, gp = gru_backward(gh, cache["gru"][l])
        for k, v in gp.items():
            grads[f"gru.{l}.{k}"] = v
    gseq = gh.transpose(1, 0, 2)
    B, T, h, w, c = cache["vol_shape"]
    if config.bridge == "average":
        gvol = np.broadcast_to(gseq[:, :, None, None, :] / (h * w), (B, T, h, w, c))
    else:
        gvol = gseq.reshape(B, T, h, w, c)
    gvol = L.relu_backward(gvol, cache["c3_relu"])
    gvol, grads["conv3d.weight"], grads["conv3d.bias"] = L.conv3d_backward(gvol, cache["c3"])
    ga = gvol.reshape((B * T,) + gvol.shape[2:])
    for i in reversed(range(len(config.conv2d_filters))):
        c_conv, c_relu, c_pool = cache["conv"][i]
        if c_pool is not None:
            ga = L.maxpool2d_backward(ga, c_pool)
        ga = L.relu_backward(ga, c_relu)
        ga, grads[f"conv2d.{i}.weight"], grads[f"conv2d.{i}.bias"] = L.conv2d_backward(ga, c_conv)
    return OrderedDict((name, grads[name]) for name in param_shapes(config))


def model_forward(x, state, config: ModelConfig):
    """Class probabilities, shape (batch, num_classes)."""
    logits, _ = forward(x, state, config)
    return L.softmax(logits)


def predict(x, state, config: ModelConfig, batch_size: int = 8):
    """Probabilities for many samples, evaluated in batches."""
    out = [model_forward(x[i:i + batch_size], state, config) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)
