"""Closed-form training losses and evaluation metrics.

Losses return a LossReport carrying the scalar and analytic gradients;
spatial aggregation divides by the pixel count so loss weights transfer
across resolutions.  Metrics (PSNR, SSIM) are plain scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .aggregate import DepthLayerSet
from .errors import CropTooLarge, DegenerateGrid, ImageTooSmall, ShapeMismatch, SingleLayer

PSNR_CEILING_DB = 99.0
DEFAULT_LOSS_WEIGHTS = {"l1": 1.0, "tv": 5.0, "ordering": 2.0}

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5


@dataclass(frozen=True)
class LossReport:
    """Scalar loss plus gradients keyed by input name."""

    value: float
    gradients: dict


def l1_loss(a: np.ndarray, b: np.ndarray) -> LossReport:
    """Mean absolute difference; gradient is the difference sign over n."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    diff = a - b
    grad_a = np.sign(diff) / diff.size
    return LossReport(float(np.abs(diff).mean()), {"a": grad_a, "b": -grad_a})


def ordering_loss(depths: DepthLayerSet) -> LossReport:
    """Hinge penalty on adjacent layer pairs that are out of depth order.

    Per pixel, sums max(0, d_j - d_{j+1}) over the L-1 adjacent pairs, then
    averages over pixels.  Zero exactly when layers are ordered front to
    back everywhere; the gradient vanishes on the ordered (flat) side.
    """
    d = depths.depths
    count = depths.layer_count
    if count < 2:
        raise SingleLayer("ordering needs at least two layers")
    n = d.shape[1] * d.shape[2]
    viol = d[:-1] - d[1:]
    active = viol > 0.0
    value = float(np.where(active, viol, 0.0).sum() / n)
    grad = np.zeros_like(d)
    grad[:-1] += active / n
    grad[1:] -= active / n
    return LossReport(value, {"depths": grad})


def tv_loss(depths: DepthLayerSet) -> LossReport:
    """Anisotropic total variation of each layer's depth grid.

    Sums |vertical| + |horizontal| neighbour differences over all layers and
    divides by the pixel count of one grid.
    """
    d = depths.depths
    h, w = d.shape[1:]
    if h < 2 or w < 2:
        raise DegenerateGrid(f"grid {h}x{w} has no neighbour differences")
    n = h * w
    dv = d[:, 1:, :] - d[:, :-1, :]
    dh = d[:, :, 1:] - d[:, :, :-1]
    value = float((np.abs(dv).sum() + np.abs(dh).sum()) / n)
    grad = np.zeros_like(d)
    sv = np.sign(dv) / n
    sh = np.sign(dh) / n
    grad[:, 1:, :] += sv
    grad[:, :-1, :] -= sv
    grad[:, :, 1:] += sh
    grad[:, :, :-1] -= sh
    return LossReport(value, {"depths": grad})


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CEILING_DB
    return min(PSNR_CEILING_DB, 10.0 * np.log10(peak * peak / mse))


def _to_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return arr.mean(axis=2)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected (H, W) or (H, W, C), got {arr.shape}")
    return arr


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Color inputs are averaged to one channel first.  Stabilizers are
    (0.01 * peak)^2 and (0.03 * peak)^2; windows that would read outside the
    image are excluded rather than padded.
    """
    ga = _to_gray(a)
    gb = _to_gray(b)
    if ga.shape != gb.shape:
        raise ShapeMismatch(f"shapes {ga.shape} and {gb.shape} differ")
    if min(ga.shape) < 2 * _SSIM_RADIUS + 1:
        raise ImageTooSmall(f"image {ga.shape} smaller than the 11x11 window")

    def blur(x):
        # interior values are padding-independent; the pad region is cropped
        return gaussian_filter(x, _SSIM_SIGMA, truncate=3.5, mode="nearest")

    mu_a = blur(ga)
    mu_b = blur(gb)
    mu_aa = blur(ga * ga)
    mu_bb = blur(gb * gb)
    mu_ab = blur(ga * gb)
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    smap = num / den
    r = _SSIM_RADIUS
    return float(smap[r:-r, r:-r].mean())


def central_crop(img: np.ndarray, margin: int) -> np.ndarray:
    """Remove `margin` pixels from every side of the leading two axes."""
    arr = np.asarray(img)
    if margin == 0:
        return arr
    h, w = arr.shape[:2]
    if margin < 0 or 2 * margin >= min(h, w):
        raise CropTooLarge(f"margin {margin} on a {h}x{w} image")
    return arr[margin : h - margin, margin : w - margin]
