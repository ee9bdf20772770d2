"""Dense two-frame optical flow by quadratic polynomial expansion.

Each neighbourhood of a grayscale frame is modelled as
``f(p) ~ p^T A p + b^T p + c`` (``p = (x, y)``, x = column, y = row). A pure
translation ``f2(p) = f1(p - d)`` keeps ``A`` and shifts the linear term to
``b2 = b1 - 2 A d``, so the displacement follows from the coefficient change.
Estimates are refined coarse-to-fine over an image pyramid.

Flow convention: ``(dx, dy)`` at pixel ``p`` of the first frame points at the
matching location ``p + d`` in the second frame.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import bilinear_sample, box_filter, gaussian_blur, resize
from .tensor_core import NumericError, ShapeError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
_REG = 1e-8
_MAX_COND = 1e8


class FlowConfigError(ValueError):
    """Invalid flow parameters or an image too small for the pyramid."""


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_sigma: float = 1.5
    expansion_window: int = 11
    iterations_per_level: int = 3
    averaging_window: int = 15

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise FlowConfigError("pyramid_levels must be >= 1")
        if not 0 < self.pyramid_scale < 1:
            raise FlowConfigError("pyramid_scale must lie in (0, 1)")
        for name in ("expansion_window", "averaging_window"):
            v = getattr(self, name)
            if v < 3 or v % 2 == 0:
                raise FlowConfigError(f"{name} must be odd and >= 3, got {v}")
        if self.window_sigma <= 0:
            raise FlowConfigError("window_sigma must be positive")
        if self.iterations_per_level < 1:
            raise FlowConfigError("iterations_per_level must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class FlowField:
    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ShapeError(f"flow components must be equal rank-2 arrays, got {self.dx.shape} and {self.dy.shape}")

    @property
    def shape(self):
        return self.dx.shape

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))

    def as_array(self) -> np.ndarray:
        """(h, w, 2) array, channel 0 = dx."""
        return np.stack([self.dx, self.dy], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[-1] != 2:
            raise ShapeError(f"expected (h, w, 2) flow array, got {arr.shape}")
        return cls(arr[..., 0].astype(np.float64), arr[..., 1].astype(np.float64))

    def magnitude(self):
        return np.hypot(self.dx, self.dy)


@dataclass
class PolyExpansion:
    """Per-pixel quadratic coefficients: ``A`` (h, w, 2, 2) symmetric,
    ``b`` (h, w, 2), ``c`` (h, w)."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def shape(self):
        return self.c.shape


def to_grayscale(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ShapeError(f"expected (h, w, 3) image, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)):
        raise NumericError("non-finite values in RGB image")
    gray = rgb @ np.asarray(GRAY_WEIGHTS)
    return np.clip(gray, 0.0, 1.0)


def expansion_filters(window: int, sigma: float) -> np.ndarray:
    """Least-squares projection kernels, shape (6, window, window), one per
    basis function of ``[1, x, y, x^2, y^2, xy]``."""
    r = window // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    ys, xs = np.meshgrid(ax, ax, indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    basis = np.stack([np.ones_like(xs), xs, ys, xs * xs, ys * ys, xs * ys], axis=1)
    weights = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    bw = basis * weights[:, None]
    gram = basis.T @ bw
    return np.linalg.solve(gram, bw.T).reshape(6, window, window)


def coefficients_to_expansion(r) -> PolyExpansion:
    h, w = r.shape[:2]
    A = np.empty((h, w, 2, 2))
    A[..., 0, 0] = r[..., 3]
    A[..., 1, 1] = r[..., 4]
    A[..., 0, 1] = A[..., 1, 0] = r[..., 5] / 2
    return PolyExpansion(A=A, b=np.ascontiguousarray(r[..., 1:3]), c=r[..., 0].copy())


def polynomial_expansion(img, params: FlowParams) -> PolyExpansion:
    """Weighted least-squares quadratic fit at every pixel under a Gaussian
    applicability window; borders use replicate padding."""
    img = np.asarray(img, dtype=np.float64)
    n = params.expansion_window
    if img.ndim != 2:
        raise ShapeError(f"expected grayscale (h, w) image, got {img.shape}")
    if min(img.shape) < n:
        raise FlowConfigError(f"image {img.shape} smaller than expansion window {n}")
    kernels = expansion_filters(n, params.window_sigma)
    padded = np.pad(img, n // 2, mode="edge")
    windows = sliding_window_view(padded, (n, n))
    r = np.tensordot(windows, kernels, axes=([2, 3], [1, 2]))
    return coefficients_to_expansion(r)


def _solve_sym2(g00, g01, g11, h0, h1, fallback_x, fallback_y):
    """Per-pixel ``(G + lam I) d = h`` with ``lam = 1e-8 trace(G)``; pixels
    whose regularized condition number exceeds 1e8 keep the fallback."""
    lam = _REG * (g00 + g11)
    a = g00 + lam
    c = g11 + lam
    det = a * c - g01 * g01
    tr = a + c
    disc = np.sqrt(np.maximum((a - c) ** 2 + 4 * g01 * g01, 0.0))
    lmax = 0.5 * (tr + disc)
    lmin = 0.5 * (tr - disc)
    ok = (lmin > 0) & (lmax < _MAX_COND * np.where(lmin > 0, lmin, 1.0))
    safe = np.where(ok, det, 1.0)
    dx = np.where(ok, (c * h0 - g01 * h1) / safe, fallback_x)
    dy = np.where(ok, (a * h1 - g01 * h0) / safe, fallback_y)
    return dx, dy


def estimate_flow(e1: PolyExpansion, e2: PolyExpansion, prior: FlowField, params: FlowParams) -> FlowField:
    """One displacement update given a prior flow.

    The second expansion is sampled at ``p + prior``; with the averaged
    quadratic term ``A`` and ``db = -(b2 - b1)/2 + A prior`` the flow solves
    the locally averaged least-squares system ``sum(A^T A) d = sum(A^T db)``.
    """
    if e1.shape != e2.shape or prior.shape != e1.shape:
        raise ShapeError(f"expansion/prior shapes disagree: {e1.shape}, {e2.shape}, {prior.shape}")
    h, w = e1.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    px, py = prior.dx, prior.dy
    xs, ys = gx + px, gy + py
    a2, _ = bilinear_sample(e2.A.reshape(h, w, 4), xs, ys)
    b2, _ = bilinear_sample(e2.b, xs, ys)
    A = 0.5 * (e1.A.reshape(h, w, 4) + a2)
    a00, a01, a11 = A[..., 0], 0.5 * (A[..., 1] + A[..., 2]), A[..., 3]
    db0 = -0.5 * (b2[..., 0] - e1.b[..., 0]) + a00 * px + a01 * py
    db1 = -0.5 * (b2[..., 1] - e1.b[..., 1]) + a01 * px + a11 * py
    # A symmetric: A^T A and A^T db
    terms = np.stack([
        a00 * a00 + a01 * a01,
        a01 * (a00 + a11),
        a01 * a01 + a11 * a11,
        a00 * db0 + a01 * db1,
        a01 * db0 + a11 * db1,
    ], axis=-1)
    avg = box_filter(terms, params.averaging_window)
    dx, dy = _solve_sym2(avg[..., 0], avg[..., 1], avg[..., 2], avg[..., 3], avg[..., 4], px, py)
    return FlowField(dx, dy)


def pyramid_shapes(shape, params: FlowParams):
    h, w = shape
    return [(max(1, int(round(h * params.pyramid_scale ** k))), max(1, int(round(w * params.pyramid_scale ** k))))
            for k in range(params.pyramid_levels)]


def build_pyramid(img, params: FlowParams):
    """Finest-first list of levels; each coarser level is the Gaussian-smoothed
    finer level resampled bilinearly."""
    sigma = 0.5 * (1.0 / params.pyramid_scale - 1.0)
    levels = [np.asarray(img, dtype=np.float64)]
    for shp in pyramid_shapes(img.shape, params)[1:]:
        levels.append(resize(gaussian_blur(levels[-1], sigma), *shp))
    return levels


def resample_flow(flow: FlowField, shape) -> FlowField:
    """Resize a flow to ``shape`` and rescale displacements to the new grid."""
    h, w = flow.shape
    nh, nw = shape
    sx = (nw - 1) / (w - 1) if w > 1 else 1.0
    sy = (nh - 1) / (h - 1) if h > 1 else 1.0
    return FlowField(resize(flow.dx, nh, nw) * sx, resize(flow.dy, nh, nw) * sy)


def farneback_flow(f1, f2, params: FlowParams | None = None) -> FlowField:
    params = params or FlowParams()
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape or f1.ndim != 2:
        raise ShapeError(f"frames must be equal-shaped grayscale images, got {f1.shape} and {f2.shape}")
    shapes = pyramid_shapes(f1.shape, params)
    if min(shapes[-1]) < params.expansion_window:
        raise FlowConfigError(
            f"coarsest pyramid level {shapes[-1]} is smaller than expansion window {params.expansion_window}")
    p1 = build_pyramid(f1, params)
    p2 = build_pyramid(f2, params)
    flow = FlowField.zeros(shapes[-1])
    for level in reversed(range(params.pyramid_levels)):
        if flow.shape != shapes[level]:
            flow = resample_flow(flow, shapes[level])
        e1 = polynomial_expansion(p1[level], params)
        e2 = polynomial_expansion(p2[level], params)
        for _ in range(params.iterations_per_level):
            flow = estimate_flow(e1, e2, flow, params)
    if not (np.all(np.isfinite(flow.dx)) and np.all(np.isfinite(flow.dy))):
        raise NumericError("non-finite flow values")
    return flow


def brightness_constancy_residual(f1, f2, flow: FlowField) -> np.ndarray:
    """``f2(p + d) - f1(p)`` with bilinear sampling; NaN where ``p + d``
    leaves the frame."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape or flow.shape != f1.shape:
        raise ShapeError(f"shape mismatch: {f1.shape}, {f2.shape}, flow {flow.shape}")
    h, w = f1.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    warped, _ = bilinear_sample(f2, gx + flow.dx, gy + flow.dy, clamp=False)
    return warped - f1


def stack_flow(flows: Sequence[FlowField]) -> np.ndarray:
    """Interleave L flows into (h, w, 2L): channel 2k holds dx of flow k and
    channel 2k+1 its dy (0-based)."""
    if not flows:
        raise ShapeError("stack_flow needs at least one flow")
    shape = flows[0].shape
    out = np.empty(shape + (2 * len(flows),), dtype=np.result_type(*[f.dx for f in flows]))
    for k, f in enumerate(flows):
        if f.shape != shape:
            raise ShapeError(f"flow {k} has shape {f.shape}, expected {shape}")
        out[..., 2 * k] = f.dx
        out[..., 2 * k + 1] = f.dy
    return out


def unstack_flow(stacked) -> list[FlowField]:
    if stacked.ndim != 3 or stacked.shape[-1] % 2:
        raise ShapeError(f"expected (h, w, 2L), got {stacked.shape}")
    return [FlowField(stacked[..., 2 * k].copy(), stacked[..., 2 * k + 1].copy())
            for k in range(stacked.shape[-1] // 2)]


def flow_to_rgb(flow: FlowField, max_mag: float) -> np.ndarray:
    """Encode a flow as a 3-channel image in [0, 1]: signed dx and dy around
    0.5, plus the clamped magnitude."""
    if max_mag <= 0:
        raise ValueError("max_mag must be positive")
    out = np.empty(flow.shape + (3,))
    out[..., 0] = np.clip(flow.dx / max_mag, -1, 1) / 2 + 0.5
    out[..., 1] = np.clip(flow.dy / max_mag, -1, 1) / 2 + 0.5
    out[..., 2] = np.clip(flow.magnitude() / max_mag, 0, 1)
    return out


def rgb_to_flow(rgb, max_mag: float) -> FlowField:
    """Inverse of channels 0-1 of :func:`flow_to_rgb` (exact for |d| <= max_mag)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return FlowField((rgb[..., 0] - 0.5) * 2 * max_mag, (rgb[..., 1] - 0.5) * 2 * max_mag)


def interior(arr, border: int):
    return arr[border:-border, border:-border] if border else arr


def endpoint_error(flow: FlowField, tx: float, ty: float) -> np.ndarray:
    return np.hypot(flow.dx - tx, flow.dy - ty)
