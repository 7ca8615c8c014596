"""Faithfulness and temporal-consistency measurement.

SSIM follows the standard windowed definition (K1=0.01, K2=0.03, 11x11
Gaussian window with sigma 1.5, clamped to the image size at toy
resolutions), optionally restricted to an unedited-area mask. Temporal
consistency is a frame-feature cosine proxy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    masked_ssim: float | None
    temporal_consistency: float
    drift: float

    def lines(self) -> list[str]:
        out = [f"ssim={self.ssim!r}"]
        if self.masked_ssim is not None:
            out.append(f"masked_ssim={self.masked_ssim!r}")
        out.append(f"temporal_consistency={self.temporal_consistency!r}")
        out.append(f"drift={self.drift!r}")
        return out


def _gaussian_kernel(size: int, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(
    x: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray | None = None,
    data_range: float = 1.0,
    window_size: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
) -> float:
    """Mean windowed SSIM between two single-channel frames.

    The window is clamped (and forced odd) to fit the image. With a mask,
    only windows centred on unmasked (mask == 1) pixels contribute.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError(f"frames must be 2-D and equal-shaped: {x.shape} vs {y.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be > 0")
    win = min(window_size, *x.shape)
    if win % 2 == 0:
        win -= 1
    kernel = _gaussian_kernel(win, sigma)

    from numpy.lib.stride_tricks import sliding_window_view

    def local(a: np.ndarray) -> np.ndarray:
        return (sliding_window_view(a, (win, win)) * kernel).sum(axis=(-1, -2))

    mu_x = local(x)
    mu_y = local(y)
    mu_xx = local(x * x)
    mu_yy = local(y * y)
    mu_xy = local(x * y)
    var_x = mu_xx - mu_x**2
    var_y = mu_yy - mu_y**2
    cov = mu_xy - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    if mask is None:
        return float(ssim_map.mean())
    mask = np.asarray(mask)
    if mask.shape != x.shape:
        raise ValueError("mask shape must equal frame shape")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    half = win // 2
    centres = mask[half : mask.shape[0] - half, half : mask.shape[1] - half] == 1
    if not centres.any():
        raise ValueError("mask excludes every window")
    return float(ssim_map[centres].mean())


def _flat(frame: torch.Tensor) -> torch.Tensor:
    return frame.reshape(-1).to(torch.float64)


def _cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    na, nb = a.norm(), b.norm()
    if float(na) == 0.0 or float(nb) == 0.0:
        raise ValueError("cosine undefined for a zero-norm frame")
    return float((a @ b) / (na * nb))


def temporal_consistency(video: torch.Tensor) -> float:
    """Mean cosine similarity between adjacent frames."""
    if video.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    vals = [
        _cosine(_flat(video[i]), _flat(video[i + 1]))
        for i in range(video.shape[0] - 1)
    ]
    return float(np.mean(vals))


def drift(video: torch.Tensor) -> float:
    """Cosine similarity between the first and last frames; lower means more
    long-range drift."""
    if video.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    return _cosine(_flat(video[0]), _flat(video[-1]))


def video_ssim(
    x: torch.Tensor,
    y: torch.Tensor,
    masks: torch.Tensor | None = None,
    data_range: float = 1.0,
) -> float:
    """Mean per-frame SSIM over channel-averaged intensity frames."""
    if x.shape != y.shape:
        raise ValueError("videos must have equal shapes")
    xi = x.mean(dim=1).numpy()
    yi = y.mean(dim=1).numpy()
    vals = []
    for i in range(x.shape[0]):
        m = masks[i].numpy() if masks is not None else None
        vals.append(ssim(xi[i], yi[i], mask=m, data_range=data_range))
    return float(np.mean(vals))


def report(
    source: torch.Tensor,
    edited: torch.Tensor,
    masks: torch.Tensor | None = None,
    data_range: float = 1.0,
) -> MetricReport:
    masked = (
        video_ssim(source, edited, masks=masks, data_range=data_range)
        if masks is not None
        else None
    )
    return MetricReport(
        ssim=video_ssim(source, edited, data_range=data_range),
        masked_ssim=masked,
        temporal_consistency=temporal_consistency(edited),
        drift=drift(edited),
    )
