"""Short-video editing: guided denoising of one clip that fits in a window."""

from __future__ import annotations

import torch

from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    cfg_combine,
    ddim_step,
    ddim_timesteps,
)
from .model import ControlStack, Denoiser, PromptEmbedding, embed_prompt


def make_eps_predictor(
    model: Denoiser,
    prompt: PromptEmbedding,
    guidance_scale: float,
    uncond: PromptEmbedding | None = None,
):
    """Build a guided noise predictor over (latents, controls, t, key_frame).

    The unconditional branch defaults to the all-zeros prompt embedding.
    """
    if uncond is None:
        uncond = embed_prompt("", width=prompt.width)

    def eps_fn(
        x: torch.Tensor, stack: ControlStack | None, t: int, key_frame: int = 1
    ) -> torch.Tensor:
        cond = model(x, stack, prompt, t, key_frame=key_frame)
        if guidance_scale == 1.0:
            return cond
        un = model(x, stack, uncond, t, key_frame=key_frame)
        return cfg_combine(un, cond, guidance_scale)

    return eps_fn


def sampling_timesteps(sched: NoiseSchedule, sampler: SamplerConfig) -> list[int]:
    """Descending timestep list the edit walks, truncated at the start step M."""
    sampler.validate(sched.T)
    M = sampler.start_step if sampler.start_step is not None else sched.T
    ts = [t for t in ddim_timesteps(sched.T, sampler.steps) if t <= M]
    return ts if ts else [M]


def edit(
    x_init: torch.Tensor,
    stack: ControlStack | None,
    prompt: PromptEmbedding,
    model: Denoiser,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    key_frame: int = 1,
) -> torch.Tensor:
    """Denoise x_init down to a clean edited video with guidance and controls."""
    eps_fn = make_eps_predictor(model, prompt, sampler.guidance_scale)
    ts = sampling_timesteps(sched, sampler)
    x = x_init
    with torch.no_grad():
        for i, t in enumerate(ts):
            t_prev = ts[i + 1] if i + 1 < len(ts) else 0
            x = ddim_step(x, eps_fn(x, stack, t, key_frame), t, t_prev, sched)
    return x
