"""Photometric and regularization losses with analytic image gradients,
plus PSNR/SSIM evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


class EmptyMask(ValueError):
    pass


@dataclass
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_iso: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ValueError("lambda_ssim must lie in [0, 1]")
        if self.lambda_iso < 0:
            raise ValueError("lambda_iso must be non-negative")


def l1_loss(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None):
    """Mean absolute error over masked pixels and all channels.

    Returns ``(loss, grad_pred)``.
    """
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    if mask is None:
        mask = np.ones(pred.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum()) * pred.shape[-1]
    if count == 0:
        raise EmptyMask("mask selects no pixels")
    diff = (pred - gt) * mask[..., None]
    loss = float(np.abs(diff).sum() / count)
    return loss, np.sign(diff) / count


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x**2 / (2 * sigma**2))
    return g / g.sum()


def _blur(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = correlate1d(img, w, axis=0, mode="constant")
    return correlate1d(out, w, axis=1, mode="constant")


def ssim(pred: np.ndarray, gt: np.ndarray, with_grad: bool = True):
    """Mean SSIM (11×11 Gaussian window, σ=1.5, zero padding) over pixels and
    channels.  Returns ``(value, grad_pred or None)``."""
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    w = gaussian_window()
    C1, C2 = SSIM_K1**2, SSIM_K2**2
    mx, my = _blur(x, w), _blur(y, w)
    exx, eyy, exy = _blur(x * x, w), _blur(y * y, w), _blur(x * y, w)
    sxx, syy, sxy = exx - mx * mx, eyy - my * my, exy - mx * my
    A1, A2 = 2 * mx * my + C1, 2 * sxy + C2
    B1, B2 = mx * mx + my * my + C1, sxx + syy + C2
    S = (A1 * A2) / (B1 * B2)
    val = float(S.mean())
    if not with_grad:
        return val, None
    n = S.size
    d_sxx = -S / B2 / n
    d_sxy = 2 * A1 / (B1 * B2) / n
    d_mx = (2 * my * A2 / (B1 * B2) - 2 * mx * S / B1) / n
    d_mx = d_mx - 2 * mx * d_sxx - my * d_sxy
    grad = _blur(d_mx, w) + 2 * x * _blur(d_sxx, w) + y * _blur(d_sxy, w)
    return val, grad.reshape(np.shape(pred))


def photometric_loss(pred, gt, mask, lambda_ssim: float = 0.2):
    """``(1-λ)·L1 + λ·(1-SSIM)``.  Returns ``(loss, parts, grad_pred)``."""
    l1, g1 = l1_loss(pred, gt, mask)
    if lambda_ssim > 0:
        s, gs = ssim(pred, gt)
    else:
        s, gs = ssim(pred, gt, with_grad=False)[0], np.zeros_like(pred)
    loss = (1 - lambda_ssim) * l1 + lambda_ssim * (1 - s)
    grad = (1 - lambda_ssim) * g1 - lambda_ssim * gs
    return loss, {"l1": l1, "ssim": 1 - s}, grad


def isotropic_loss(scales: np.ndarray):
    """``Σᵢ ‖sᵢ − mean(sᵢ)·1‖₁`` over Gaussians; returns ``(loss, grad_scales)``."""
    s = np.asarray(scales, dtype=np.float64)
    r = s - s.mean(axis=-1, keepdims=True)
    sg = np.sign(r)
    grad = sg - sg.mean(axis=-1, keepdims=True)
    return float(np.abs(r).sum()), grad


def total_loss(pred, gt, mask, scales, weights: LossWeights, use_iso: bool):
    """Full training objective.  Returns ``(loss, parts, grad_pred, grad_scales)``;
    ``grad_scales`` is None when the isotropy term is inactive."""
    loss, parts, grad = photometric_loss(pred, gt, mask, weights.lambda_ssim)
    parts["iso"] = 0.0
    grad_scales = None
    if use_iso:
        iso, gsc = isotropic_loss(scales)
        parts["iso"] = iso
        loss += weights.lambda_iso * iso
        grad_scales = weights.lambda_iso * gsc
    return loss, parts, grad, grad_scales


def mse(pred, gt, mask=None) -> float:
    d = (np.asarray(pred, dtype=np.float64) - gt) ** 2
    if mask is None:
        return float(d.mean())
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMask("mask selects no pixels")
    return float(d[m].mean())


def psnr(pred, gt, mask=None) -> float:
    """PSNR in dB for unit dynamic range; ``inf`` for identical inputs."""
    err = mse(pred, gt, mask)
    if err == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(err))
