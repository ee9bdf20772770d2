"""Low-level image sampling shared by the flow and data pipelines."""

import numpy as np


def bilinear_sample(img, xs, ys, clamp=True):
    """Sample ``img`` (h, w[, c]) at fractional column ``xs`` / row ``ys``.

    Returns ``(values, inside)`` where ``inside`` flags coordinates that fell
    within ``[0, w-1] x [0, h-1]``. Outside samples use clamped coordinates
    when ``clamp`` is true and are NaN otherwise.
    """
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    if not clamp:
        out = np.where(inside[..., None] if img.ndim == 3 else inside, out, np.nan)
    return out, inside


def corner_aligned_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))


def resize(img, out_h: int, out_w: int):
    """Bilinear resize with corner-aligned sampling (output corners hit input corners)."""
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = corner_aligned_coords(h, out_h)
    xs = corner_aligned_coords(w, out_w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    out, _ = bilinear_sample(img, gx, gy)
    return out.astype(img.dtype, copy=False)


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def correlate1d_edge(img, kernel, axis):
    """1-D correlation along ``axis`` with replicate padding."""
    r = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    n = img.shape[axis]
    out = np.zeros(img.shape, dtype=np.float64)
    for i, k in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + n)
        out += k * padded[tuple(sl)]
    return out


def gaussian_blur(img, sigma: float):
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    k = gaussian_kernel1d(sigma, max(1, int(np.ceil(3 * sigma))))
    return correlate1d_edge(correlate1d_edge(img, k, 0), k, 1)


def box_filter(img, size: int):
    """Mean over a ``size x size`` window with replicate borders, on the
    two leading axes."""
    k = np.full(size, 1.0 / size)
    return correlate1d_edge(correlate1d_edge(img, k, 0), k, 1)
