"""Long-video editing: overlapping windows, weighted fusion, key-frame video.

A long clip is split into overlapping windows; the denoiser runs per window
and the per-window noise predictions are blended with normalized positive
weight vectors. A key-frame video (the first frame of every window) is
denoised as its own short clip and blended in at the key-frame positions,
then one deterministic denoising step is taken. Repeat over all timesteps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch

from .diffusion import NoiseSchedule, SamplerConfig, ddim_step
from .editing import make_eps_predictor, sampling_timesteps
from .model import ControlStack, Denoiser, PromptEmbedding

WEIGHT_KINDS = ("gaussian", "constant", "linear", "cosine", "inverse_sqrt")


@dataclass(frozen=True)
class WindowPlan:
    """Overlapping window layout over N frames (1-based inclusive ranges)."""

    N: int
    L: int
    a: int
    windows: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return len(self.windows)

    def key_indices(self) -> list[int]:
        return [s for s, _ in self.windows]


@dataclass(frozen=True)
class WeightFunction:
    kind: str = "gaussian"
    sigma: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; known: {WEIGHT_KINDS}")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class KeyFusionConfig:
    """Key-frame-video blend weight.

    scale_non_key applies the blend's (1 - w) factor to non-key frames too,
    the literal reading of the fusion rule; the default leaves non-key frames
    untouched, which preserves the magnitude of the noise prediction.
    """

    w: float = 0.3
    scale_non_key: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"key fusion weight must be in [0, 1], got {self.w}")


def plan_windows(N: int, L: int, a: int, max_length: int = 4096) -> WindowPlan:
    """Overlapping windows of length L with overlap a; empty trailing windows
    produced by the count formula n = floor(N/(L-a)) + 1 are dropped and the
    last stored window is clamped to N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if L < 1:
        raise ValueError("L must be >= 1")
    if not 0 <= a < L:
        raise ValueError(f"overlap must satisfy 0 <= a < L, got a={a}, L={L}")
    if L > max_length:
        raise ValueError(f"window length {L} exceeds maximum {max_length}")
    n_formula = N // (L - a) + 1
    windows = []
    for j in range(1, n_formula + 1):
        start = (j - 1) * (L - a) + 1
        if start > N:
            continue
        windows.append((start, min(start + L - 1, N)))
    return WindowPlan(N=N, L=L, a=a, windows=tuple(windows))


def validate_long_settings(L: int, a: int, w: float) -> list[str]:
    """Hyperparameter guardrails; out-of-range values warn, never fail."""
    notes = []
    if not L / 2 <= a < L:
        notes.append(f"overlap a={a} outside the recommended range [L/2, L) for L={L}")
    if not 0.2 <= w <= 0.5:
        notes.append(f"key fusion weight w={w} outside the recommended range [0.2, 0.5]")
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return notes


def eval_weights(f: WeightFunction, length: int) -> torch.Tensor:
    """Positive blend weights at positions u = l/length, l = 1..length.

    Unnormalized: global scale cancels in the per-frame normalization.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    u = torch.arange(1, length + 1, dtype=torch.float64) / length
    if f.kind == "gaussian":
        return torch.exp(-((u - 0.5) ** 2) / (2 * f.sigma**2))
    if f.kind == "constant":
        return torch.ones(length, dtype=torch.float64)
    if f.kind == "linear":
        return 1.0 - (u - 0.5).abs()
    if f.kind == "cosine":
        return torch.cos(math.pi * (u - 0.5) / 2)
    if f.kind == "inverse_sqrt":
        return 1.0 / torch.sqrt((u - 0.5).abs() + 0.5)
    raise ValueError(f"unknown weight kind {f.kind!r}")


def fusion_weight_matrix(plan: WindowPlan, f: WeightFunction) -> torch.Tensor:
    """Per-frame normalized weights, shape (n, N); columns sum to 1."""
    weights = torch.zeros(plan.n, plan.N, dtype=torch.float64)
    for j, (s, e) in enumerate(plan.windows):
        weights[j, s - 1 : e] = eval_weights(f, e - s + 1)
    return weights / weights.sum(dim=0)


def fuse_windows(
    preds: list[torch.Tensor], plan: WindowPlan, f: WeightFunction
) -> torch.Tensor:
    """Blend per-window predictions into one N-frame tensor.

    Every frame's contributions are weighted by the normalized positive
    weights of the windows covering it.
    """
    if len(preds) != plan.n:
        raise ValueError(f"expected {plan.n} window predictions, got {len(preds)}")
    for j, (s, e) in enumerate(plan.windows):
        if preds[j].shape[0] != e - s + 1:
            raise ValueError(
                f"window {j + 1} prediction has {preds[j].shape[0]} frames, "
                f"window covers {e - s + 1}"
            )
    norm = fusion_weight_matrix(plan, f)
    tail = (1,) * (preds[0].ndim - 1)
    fused = torch.zeros((plan.N,) + tuple(preds[0].shape[1:]), dtype=preds[0].dtype)
    for j, (s, e) in enumerate(plan.windows):
        fused[s - 1 : e] += norm[j, s - 1 : e].view(-1, *tail) * preds[j]
    return fused


def extract_keyframe_video(
    xt: torch.Tensor, stack: ControlStack | None, plan: WindowPlan
) -> tuple[torch.Tensor, ControlStack | None]:
    """Gather the first frame of every window, for latents and controls alike."""
    idx = plan.key_indices()
    key_x = xt[torch.tensor([i - 1 for i in idx])]
    key_stack = stack.gather(idx) if stack is not None and stack.controls else stack
    return key_x, key_stack


def fuse_keyframe(
    fused: torch.Tensor,
    key_pred: torch.Tensor,
    plan: WindowPlan,
    cfg: KeyFusionConfig,
) -> torch.Tensor:
    """Blend the key-frame-video prediction into the fused prediction."""
    if key_pred.shape[0] != plan.n:
        raise ValueError(
            f"key prediction has {key_pred.shape[0]} frames, plan has {plan.n} windows"
        )
    if key_pred.shape[1:] != fused.shape[1:]:
        raise ValueError("key prediction frame shape differs from fused frames")
    if cfg.w == 0.0:
        return fused
    out = (1.0 - cfg.w) * fused if cfg.scale_non_key else fused.clone()
    for j, i in enumerate(plan.key_indices()):
        out[i - 1] = cfg.w * key_pred[j] + (1.0 - cfg.w) * fused[i - 1]
    return out


def long_edit(
    x_init: torch.Tensor,
    stack: ControlStack | None,
    prompt: PromptEmbedding,
    model: Denoiser,
    sched: NoiseSchedule,
    plan: WindowPlan,
    f: WeightFunction,
    kf: KeyFusionConfig,
    sampler: SamplerConfig,
    weight_dump: list | None = None,
) -> torch.Tensor:
    """Edit an N-frame video via windowed prediction and fusion.

    Each window uses its own first frame as the attention key frame, so the
    key-frame video's members coincide with the per-window key frames. Pass a
    list as weight_dump to collect the normalized per-frame fusion weights.
    """
    if plan.N != x_init.shape[0]:
        raise ValueError(f"plan covers {plan.N} frames, video has {x_init.shape[0]}")
    eps_fn = make_eps_predictor(model, prompt, sampler.guidance_scale)
    ts = sampling_timesteps(sched, sampler)
    norm = fusion_weight_matrix(plan, f)
    if weight_dump is not None:
        weight_dump.append(norm)
    x = x_init
    with torch.no_grad():
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else 0
            preds = []
            for s, e in plan.windows:
                window_stack = (
                    stack.slice(s, e) if stack is not None and stack.controls else stack
                )
                preds.append(eps_fn(x[s - 1 : e], window_stack, t, key_frame=1))
            fused = fuse_windows(preds, plan, f)
            if kf.w > 0.0 and plan.n > 1:
                key_x, key_stack = extract_keyframe_video(x, stack, plan)
                key_pred = eps_fn(key_x, key_stack, t, key_frame=1)
                fused = fuse_keyframe(fused, key_pred, plan, kf)
            x = ddim_step(x, fused, t, t_prev, sched)
    return x
