"""Timestep-indexed diffusion math: schedules, forward perturbation, DDIM.

All operations act on latent videos stored as float64 tensors of shape
(N, C, H, W) where N is the frame count. Timesteps are 1-based; t=0 denotes
clean data with cumulative signal coefficient exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

EpsPredictor = Callable[[torch.Tensor, int], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep noise variances and the derived cumulative products.

    beta[i], alpha[i], alpha_bar[i] correspond to timestep t = i + 1.
    """

    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    def abar(self, t: int) -> float:
        """Cumulative signal coefficient at timestep t, with abar(0) = 1."""
        if t < 0 or t > self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])


@dataclass(frozen=True)
class SamplerConfig:
    """Inference-time sampling settings."""

    steps: int = 50
    guidance_scale: float = 12.0
    init_mode: str = "ddim_inversion"  # ddim_inversion | noisy_source | gaussian
    start_step: int | None = None  # M; defaults to T
    seed: int = 0

    def validate(self, T: int) -> None:
        if not 1 <= self.steps <= T:
            raise ValueError(f"steps must be in [1, {T}], got {self.steps}")
        if self.guidance_scale < 0:
            raise ValueError("guidance_scale must be >= 0")
        if self.init_mode not in ("ddim_inversion", "noisy_source", "gaussian"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.start_step is not None and not 1 <= self.start_step <= T:
            raise ValueError(f"start_step must be in [1, {T}]")


def build_schedule(
    T: int,
    kind: str = "linear",
    beta_start: float = 1e-4,
    beta_end: float = 2e-2,
) -> NoiseSchedule:
    """Construct a noise schedule of T steps.

    linear interpolates beta directly; scaled_linear interpolates sqrt(beta)
    (the convention of large latent-diffusion models).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    if kind == "linear":
        beta = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    elif kind == "scaled_linear":
        beta = (
            torch.linspace(beta_start**0.5, beta_end**0.5, T, dtype=torch.float64)
            ** 2
        )
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_sample(
    x0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule
) -> torch.Tensor:
    """Perturb clean data to timestep t: sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    _check_shapes(x0, eps)
    if not 1 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [1, {sched.T}]")
    ab = sched.abar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def ddim_step(
    xt: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """One deterministic denoising step from timestep t down to t_prev."""
    _check_shapes(xt, eps_pred)
    if not t > t_prev >= 0:
        raise ValueError(f"require t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = sched.abar(t)
    ab_p = sched.abar(t_prev)
    x0_pred = (xt - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
    return math.sqrt(ab_p) * x0_pred + math.sqrt(1.0 - ab_p) * eps_pred


def ddim_invert_step(
    x_prev: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """One inversion step from timestep t_prev up to t (exact inverse of
    ddim_step when both use the same eps_pred)."""
    _check_shapes(x_prev, eps_pred)
    if not t > t_prev >= 0:
        raise ValueError(f"require t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = sched.abar(t)
    ab_p = sched.abar(t_prev)
    x0_pred = (x_prev - math.sqrt(1.0 - ab_p) * eps_pred) / math.sqrt(ab_p)
    return math.sqrt(ab_t) * x0_pred + math.sqrt(1.0 - ab_t) * eps_pred


def cfg_combine(
    eps_uncond: torch.Tensor, eps_cond: torch.Tensor, s: float
) -> torch.Tensor:
    """Classifier-free guidance: uncond + s * (cond - uncond)."""
    _check_shapes(eps_uncond, eps_cond)
    if s < 0:
        raise ValueError(f"guidance scale must be >= 0, got {s}")
    return eps_uncond + s * (eps_cond - eps_uncond)


def training_residual(eps: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    """Mean-squared error between true and predicted noise."""
    _check_shapes(eps, eps_pred)
    return ((eps - eps_pred) ** 2).mean()


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending timestep sequence for a reduced step count.

    Uniform stride over [1, T], largest timestep first.
    """
    if not 1 <= steps <= T:
        raise ValueError(f"steps must be in [1, {T}], got {steps}")
    stride = T / steps
    ts = sorted({int(round(stride * i)) for i in range(1, steps + 1)}, reverse=True)
    return ts


def ddim_sample(
    x_start: torch.Tensor,
    eps_fn: EpsPredictor,
    sched: NoiseSchedule,
    timesteps: Sequence[int],
) -> torch.Tensor:
    """Run the full deterministic sampling loop over a descending timestep list."""
    x = x_start
    for i, t in enumerate(timesteps):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        x = ddim_step(x, eps_fn(x, t), t, t_prev, sched)
    return x


def ddim_inversion(
    x0: torch.Tensor,
    eps_fn: EpsPredictor,
    sched: NoiseSchedule,
    timesteps: Sequence[int],
) -> torch.Tensor:
    """Invert clean data up the trajectory to the largest listed timestep.

    Each step evaluates eps_fn at the current (lower-noise) state, the
    standard first-order approximation of exact inversion.
    """
    x = x0
    ascending = list(reversed(list(timesteps)))
    t_prev = 0
    for t in ascending:
        x = ddim_invert_step(x, eps_fn(x, t_prev), t, t_prev, sched)
        t_prev = t
    return x


def make_initial_value(
    x0: torch.Tensor,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    eps_fn: EpsPredictor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Produce the latent the edit starts from, per the configured mode.

    ddim_inversion runs the full inversion trajectory up to timestep M and
    needs eps_fn (built by the caller with the source prompt at guidance 1).
    noisy_source perturbs x0 to timestep M with one noise sample shared by
    every frame. gaussian draws one standard-normal frame shared by every
    frame.
    """
    cfg.validate(sched.T)
    M = cfg.start_step if cfg.start_step is not None else sched.T
    if cfg.init_mode == "ddim_inversion":
        if eps_fn is None:
            raise ValueError("ddim_inversion mode requires an eps predictor")
        ts = [t for t in ddim_timesteps(sched.T, cfg.steps) if t <= M]
        if not ts:
            ts = [M]
        return ddim_inversion(x0, eps_fn, sched, ts)
    gen = generator
    if gen is None:
        gen = torch.Generator().manual_seed(cfg.seed)
    frame_shape = (1,) + tuple(x0.shape[1:])
    noise = torch.randn(frame_shape, generator=gen, dtype=x0.dtype)
    shared = noise.expand_as(x0).clone()
    if cfg.init_mode == "noisy_source":
        return forward_sample(x0, M, shared, sched)
    if cfg.init_mode == "gaussian":
        return shared
    raise ValueError(f"unknown init_mode {cfg.init_mode!r}")
