"""Layer kernels with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Layouts are channels-last:
conv2d input ``(n, h, w, c)`` with weight ``(kh, kw, c_in, c_out)``, conv3d
input ``(n, t, h, w, c)`` with weight ``(kt, kh, kw, c_in, c_out)``. Both
convolutions are stride-1 cross-correlations with "same" zero padding.
"""

import numpy as np

from ..tensor_core import ShapeError


class CacheError(RuntimeError):
    """Backward called without a usable forward cache."""


def _check_cache(cache, name):
    if cache is None:
        raise CacheError(f"{name}_backward called without a forward cache")


def _same_pads(k):
    return (k - 1) // 2, k // 2


# --- convolutions ------------------------------------------------------------
# Both dimensionalities share one kernel: the output is a sum over kernel
# offsets of shifted input views times the (c_in, c_out) weight slice.

def _conv_forward(x, weight, bias, nsp):
    spatial = x.shape[1:1 + nsp]
    ksize = weight.shape[:nsp]
    pads = [_same_pads(k) for k in ksize]
    xp = np.pad(x, [(0, 0)] + pads + [(0, 0)])
    out = np.zeros(x.shape[:1] + spatial + (weight.shape[-1],), dtype=np.result_type(x, weight))
    for off in np.ndindex(*ksize):
        sl = (slice(None),) + tuple(slice(o, o + n) for o, n in zip(off, spatial))
        out += xp[sl] @ weight[off]
    out += bias
    return out, (x, weight)


def _conv_backward(grad_out, cache, nsp, name):
    _check_cache(cache, name)
    x, weight = cache
    spatial = x.shape[1:1 + nsp]
    ksize = weight.shape[:nsp]
    c_in, c_out = weight.shape[-2:]
    pads = [_same_pads(k) for k in ksize]
    xp = np.pad(x, [(0, 0)] + pads + [(0, 0)])
    g2 = grad_out.reshape(-1, c_out)
    grad_w = np.empty_like(weight, dtype=grad_out.dtype)
    gxp = np.zeros(xp.shape, dtype=grad_out.dtype)
    for off in np.ndindex(*ksize):
        sl = (slice(None),) + tuple(slice(o, o + n) for o, n in zip(off, spatial))
        grad_w[off] = xp[sl].reshape(-1, c_in).T @ g2
        gxp[sl] += grad_out @ weight[off].T
    crop = (slice(None),) + tuple(slice(p[0], p[0] + n) for p, n in zip(pads, spatial))
    grad_b = g2.sum(axis=0)
    return gxp[crop], grad_w, grad_b


def conv2d_forward(x, weight, bias):
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[3],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {weight.shape[3]} output channels")
    return _conv_forward(x, weight, bias, 2)


def conv2d_backward(grad_out, cache):
    return _conv_backward(grad_out, cache, 2, "conv2d")


def conv3d_forward(x, weight, bias):
    if x.ndim != 5 or weight.ndim != 5 or x.shape[-1] != weight.shape[3]:
        raise ShapeError(f"conv3d: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[4],):
        raise ShapeError(f"conv3d: bias {bias.shape} does not match {weight.shape[4]} output channels")
    return _conv_forward(x, weight, bias, 3)


def conv3d_backward(grad_out, cache):
    return _conv_backward(grad_out, cache, 3, "conv3d")


# --- pooling / activations --------------------------------------------------

def maxpool2d_forward(x, window=2, stride=2):
    """Non-overlapping max pool over axes 1-2 of ``(n, h, w, c)``; trailing
    rows/columns that do not fill a window are dropped. Ties go to the first
    element in row-major order within the window."""
    if window != stride:
        raise NotImplementedError("only non-overlapping pooling (window == stride) is supported")
    n, h, w, c = x.shape
    ho, wo = h // window, w // window
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool window {window} larger than input {x.shape}")
    xc = x[:, :ho * window, :wo * window, :]
    blocks = xc.reshape(n, ho, window, wo, window, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, -1)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, window)


def maxpool2d_backward(grad_out, cache):
    _check_cache(cache, "maxpool2d")
    shape, idx, window = cache
    n, h, w, c = shape
    ho, wo = idx.shape[1:3]
    blocks = np.zeros(idx.shape + (window * window,), dtype=grad_out.dtype)
    np.put_along_axis(blocks, idx[..., None], grad_out[..., None], axis=-1)
    g = blocks.reshape(n, ho, wo, c, window, window).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * window, wo * window, c)
    grad_x = np.zeros(shape, dtype=grad_out.dtype)
    grad_x[:, :ho * window, :wo * window, :] = g
    return grad_x


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    _check_cache(mask, "relu")
    return grad_out * mask


# --- dense / softmax --------------------------------------------------------

def dense_forward(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    return x @ weight + bias, (x, weight)


def dense_backward(grad_out, cache):
    _check_cache(cache, "dense")
    x, weight = cache
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
