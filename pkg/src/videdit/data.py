"""Synthetic latent videos and toy control extraction.

Desk-scale stand-ins for real footage and real condition extractors: clips
with known motion and ground-truth unedited-area masks, and deterministic
per-frame control maps derived from them.
"""

from __future__ import annotations

import torch

VIDEO_KINDS = ("moving_square", "gradient_drift", "two_object")
CONTROL_KINDS = ("edge_like", "depth_like", "pose_like")


def synthesize_video(
    kind: str,
    N: int,
    H: int = 8,
    W: int = 8,
    C: int = 4,
    seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Deterministic synthetic clip plus per-frame binary masks.

    Masks mark the unedited area (1 = background, 0 = moving object).
    Returns (video (N, C, H, W), masks (N, H, W)), both float64.
    """
    if kind not in VIDEO_KINDS:
        raise ValueError(f"unknown video kind {kind!r}; known: {VIDEO_KINDS}")
    if N < 1 or H < 4 or W < 4 or C < 1:
        raise ValueError(f"invalid dimensions N={N}, C={C}, H={H}, W={W}")
    gen = torch.Generator().manual_seed(seed)
    video = torch.zeros(N, C, H, W, dtype=torch.float64)
    masks = torch.ones(N, H, W, dtype=torch.float64)

    def paint_square(i: int, top: int, left: int, size: int, color: torch.Tensor) -> None:
        video[i, :, top : top + size, left : left + size] = color[:, None, None]
        masks[i, top : top + size, left : left + size] = 0.0

    if kind == "gradient_drift":
        hh = torch.arange(H, dtype=torch.float64)[:, None] / max(H - 1, 1)
        ww = torch.arange(W, dtype=torch.float64)[None, :] / max(W - 1, 1)
        base = (hh + ww) / 2.0
        chan = 0.2 * torch.randn(C, generator=gen, dtype=torch.float64)
        for i in range(N):
            video[i] = base[None] + chan[:, None, None] + 0.05 * i
        return video, masks

    bg = 0.1 * torch.randn(C, generator=gen, dtype=torch.float64)
    color = 1.0 + 0.2 * torch.randn(C, generator=gen, dtype=torch.float64)
    size = min(3, H - 1, W - 1)
    video += bg[:, None, None]
    if kind == "moving_square":
        top = (H - size) // 2
        for i in range(N):
            left = i % (W - size + 1)  # 1 px/frame, wrapping at the right edge
            paint_square(i, top, left, size, color)
        return video, masks

    # two_object: second square moves the opposite way on a different row
    color2 = -1.0 + 0.2 * torch.randn(C, generator=gen, dtype=torch.float64)
    for i in range(N):
        left = i % (W - size + 1)
        left2 = (W - size) - (i % (W - size + 1))
        paint_square(i, 0, left, size, color)
        paint_square(i, H - size, left2, size, color2)
    return video, masks


def _intensity(video: torch.Tensor) -> torch.Tensor:
    return video.mean(dim=1)


def extract_controls(video: torch.Tensor, kind: str) -> torch.Tensor:
    """Per-frame control maps of shape (N, 1, H, W)."""
    if kind not in CONTROL_KINDS:
        raise ValueError(f"unknown control kind {kind!r}; known: {CONTROL_KINDS}")
    if video.ndim != 4:
        raise ValueError("video must have shape (N, C, H, W)")
    x = _intensity(video)  # (N, H, W)
    n, h, w = x.shape
    if kind == "edge_like":
        gx = torch.zeros_like(x)
        gy = torch.zeros_like(x)
        gx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
        gy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
        mag = torch.sqrt(gx**2 + gy**2)
        return (mag > 0.05).to(torch.float64)[:, None]
    if kind == "depth_like":
        padded = torch.nn.functional.pad(x[:, None], (1, 1, 1, 1), mode="replicate")
        kernel = torch.ones(1, 1, 3, 3, dtype=torch.float64) / 9.0
        return torch.nn.functional.conv2d(padded, kernel)
    # pose_like: one hot pixel at the centroid of object pixels
    out = torch.zeros(n, 1, h, w, dtype=torch.float64)
    for i in range(n):
        frame = x[i]
        dev = (frame - frame.median()).abs()
        obj = dev > 0.05
        if not bool(obj.any()):
            continue
        rows, cols = torch.nonzero(obj, as_tuple=True)
        r = int(torch.round(rows.to(torch.float64).mean()))
        c = int(torch.round(cols.to(torch.float64).mean()))
        out[i, 0, r, c] = 1.0
    return out
