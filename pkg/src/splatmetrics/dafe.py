"""Far-field masks from depth maps and the masked/total loss breakdown.

The mask keeps the round(tau x H x W) deepest pixels (a quantile reading
of the retained-fraction parameter); a literal threshold variant that
marks every pixel deeper than tau x max is available separately. Losses
operate on [0, 1] images: global L1, structural dissimilarity with the
standard 11x11 / sigma 1.5 window, and the masked far-field L1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError
from .splat_io import DepthMap, ImagePlane

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class FarMask:
    """Boolean far-field pixel mask; True marks a retained far pixel."""

    width: int
    height: int
    bits: np.ndarray  # (height, width) bool
    tau: float
    threshold_value: float

    @property
    def true_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_dafe: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.lambda_ssim) and math.isfinite(self.lambda_dafe)):
            raise ContractError("loss weights must be finite")
        if self.lambda_ssim < 0.0 or self.lambda_dafe < 0.0:
            raise ContractError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    dssim: float
    dafe: float
    total: float


class ConstantDepthWarning(UserWarning):
    """The depth map is constant; the far mask carries no depth signal."""


def far_mask(depth: DepthMap, tau: float) -> FarMask:
    """Mask the round(tau x H x W) deepest pixels (at least one).

    Ties at the cutoff break farthest-first, then row-major pixel order,
    so the quota is always exact. The realized cutoff is recorded.
    """
    if not 0.0 < tau < 1.0:
        raise ContractError("tau must lie strictly between 0 and 1")
    flat = depth.values.ravel()
    if flat.max() == flat.min():
        warnings.warn("depth map is constant; far mask has no depth signal",
                      ConstantDepthWarning, stacklevel=2)
    quota = max(1, int(math.floor(tau * flat.size + 0.5)))
    order = np.lexsort((np.arange(flat.size), -flat))
    chosen = order[:quota]
    bits = np.zeros(flat.size, dtype=bool)
    bits[chosen] = True
    return FarMask(
        width=depth.width,
        height=depth.height,
        bits=bits.reshape(depth.height, depth.width),
        tau=tau,
        threshold_value=float(flat[chosen[-1]]),
    )


def far_mask_literal(depth: DepthMap, tau: float) -> FarMask:
    """Literal threshold variant: mark pixels with depth > tau x max.

    The true-count quota of the quantile reading does not apply here; the
    mask size is whatever the threshold produces.
    """
    if not 0.0 < tau < 1.0:
        raise ContractError("tau must lie strictly between 0 and 1")
    threshold = tau * depth.max_value
    return FarMask(
        width=depth.width,
        height=depth.height,
        bits=depth.values > threshold,
        tau=tau,
        threshold_value=float(threshold),
    )


def _check_pair(rendered: ImagePlane, truth: ImagePlane) -> None:
    if (rendered.width, rendered.height, rendered.channels) != (
            truth.width, truth.height, truth.channels):
        raise ContractError(
            f"image dimensions differ: {(rendered.width, rendered.height, rendered.channels)}"
            f" vs {(truth.width, truth.height, truth.channels)}"
        )


def dafe_loss(rendered: ImagePlane, truth: ImagePlane, mask: FarMask) -> float:
    """Mean absolute difference over masked pixels (channel-averaged)."""
    _check_pair(rendered, truth)
    if (mask.width, mask.height) != (rendered.width, rendered.height):
        raise ContractError("mask dimensions do not match the images")
    if mask.true_count < 1:
        raise ContractError("mask must select at least one pixel")
    per_pixel = np.abs(rendered.values - truth.values).mean(axis=2)
    return float(per_pixel[mask.bits].mean())


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    window = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return window / window.sum()


def _windowed_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable windowed local mean, cropped to fully-covered pixels."""
    radius = window.size // 2
    out = correlate1d(plane, window, axis=0, mode="nearest")
    out = correlate1d(out, window, axis=1, mode="nearest")
    return out[radius:-radius, radius:-radius]


def dssim(rendered: ImagePlane, truth: ImagePlane) -> float:
    """(1 - SSIM) / 2 with the standard configuration on [0, 1] images:
    11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
    channel-averaged over fully-covered windows."""
    _check_pair(rendered, truth)
    if rendered.height < SSIM_WINDOW or rendered.width < SSIM_WINDOW:
        raise ContractError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    ssim_channels = []
    for c in range(rendered.channels):
        x = rendered.values[:, :, c]
        y = truth.values[:, :, c]
        mu_x = _windowed_mean(x, window)
        mu_y = _windowed_mean(y, window)
        var_x = _windowed_mean(x * x, window) - mu_x * mu_x
        var_y = _windowed_mean(y * y, window) - mu_y * mu_y
        cov = _windowed_mean(x * y, window) - mu_x * mu_y
        ssim_map = ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)) / (
            (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        )
        ssim_channels.append(float(ssim_map.mean()))
    ssim = float(np.mean(ssim_channels))
    return (1.0 - ssim) / 2.0


def total_loss(rendered: ImagePlane, truth: ImagePlane, mask: FarMask,
               weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Global L1 + weighted structural and far-field terms."""
    _check_pair(rendered, truth)
    l1 = float(np.abs(rendered.values - truth.values).mean())
    structural = dssim(rendered, truth)
    far = dafe_loss(rendered, truth, mask)
    total = l1 + weights.lambda_ssim * structural + weights.lambda_dafe * far
    return LossBreakdown(l1=l1, dssim=structural, dafe=far, total=total)


def render_loss_csv(breakdown: LossBreakdown, tau: float,
                    weights: LossWeights) -> str:
    header = "l1,dssim,dafe,total,tau,lambda_ssim,lambda_dafe"
    row = (f"{breakdown.l1!r},{breakdown.dssim!r},{breakdown.dafe!r},"
           f"{breakdown.total!r},{tau!r},{weights.lambda_ssim!r},{weights.lambda_dafe!r}")
    return header + "\n" + row + "\n"
