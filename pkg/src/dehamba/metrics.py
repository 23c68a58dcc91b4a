"""Training loss and image quality metrics (L1, PSNR, SSIM)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    l1: float

    def line(self) -> str:
        return f"psnr_db={self.psnr_db:.4f} ssim={self.ssim:.6f} l1={self.l1:.6f}"


def l1_loss(pred, gt):
    """Mean absolute difference; differentiable when `pred` is tracked."""
    pred = T._wrap(pred)
    gt = T._wrap(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"l1_loss shape mismatch: {pred.shape} vs {gt.shape}")
    return T.tmean(T.absolute(T.sub(pred, gt)))


def psnr(pred, gt, max_val=1.0) -> float:
    """10*log10(max_val^2 / MSE); +inf when the images are identical."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"psnr shape mismatch: {pred.shape} vs {gt.shape}")
    mse = np.mean((pred - gt) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_val**2 / mse))


def _gaussian_kernel(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(img, k):
    """Separable 'valid' filtering of a 2D image with a 1D kernel."""
    from numpy.lib.stride_tricks import sliding_window_view

    n = k.size
    out = sliding_window_view(img, n, axis=0) @ k
    out = sliding_window_view(out, n, axis=1) @ k
    return out


def ssim(pred, gt, max_val=1.0, win_size=11, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Single-scale SSIM, 11x11 Gaussian window, per channel then averaged.

    Accepts [H, W] or [C, H, W] arrays.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"ssim shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.shape[-2] < win_size or pred.shape[-1] < win_size:
        raise ShapeError(
            f"image {pred.shape[-2]}x{pred.shape[-1]} smaller than SSIM window {win_size}"
        )
    kern = _gaussian_kernel(win_size, sigma)
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    vals = []
    for x, y in zip(pred, gt):
        mx = _filter_valid(x, kern)
        my = _filter_valid(y, kern)
        mxx = _filter_valid(x * x, kern)
        myy = _filter_valid(y * y, kern)
        mxy = _filter_valid(x * y, kern)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def evaluate_pair(pred, gt) -> MetricReport:
    return MetricReport(
        psnr_db=psnr(pred, gt),
        ssim=ssim(pred, gt),
        l1=float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)))),
    )
