"""One-shot fine-tuning on a single source video-text pair.

Updates are restricted to a named subset of parameters; everything outside
the subset must come out of training bit-identical. All randomness flows
from one seeded generator so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .diffusion import NoiseSchedule, forward_sample, training_residual
from .model import ControlStack, Denoiser, PromptEmbedding, has_lora

TRAINABLE_SELECTORS = (
    "keyframe_wo",       # key-frame attention output projections, both branches
    "keyframe_wo_main",  # same, main branch only
    "temporal_attention",
    "temporal_gates",
    "lora",
)
DEFAULT_TRAINABLE = ("keyframe_wo", "temporal_attention", "temporal_gates")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 80
    learning_rate: float = 3e-5
    momentum: float = 0.9
    trainable: tuple[str, ...] = DEFAULT_TRAINABLE
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        unknown = [s for s in self.trainable if s not in TRAINABLE_SELECTORS]
        if unknown:
            raise ValueError(f"unknown trainable selectors: {unknown}")


def _selected(name: str, selectors: tuple[str, ...]) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    if ".adapters." in name:
        return "lora" in selectors
    if "keyframe_wo" in selectors and name.endswith(".kf.wo"):
        return True
    if (
        "keyframe_wo_main" in selectors
        and name.endswith(".kf.wo")
        and not name.startswith("control.")
    ):
        return True
    if "temporal_attention" in selectors and ".temporal." in name and leaf in (
        "wq",
        "wk",
        "wv",
        "wo",
    ):
        return True
    if "temporal_gates" in selectors and leaf == "temporal_gate":
        return True
    return False


def trainable_parameters(
    model: Denoiser, cfg: TrainConfig
) -> list[tuple[str, torch.nn.Parameter]]:
    return [
        (name, p)
        for name, p in sorted(model.named_parameters())
        if _selected(name, cfg.trainable)
    ]


def count_trainable(model: Denoiser, cfg: TrainConfig) -> int:
    """Exact number of scalar parameters the selector exposes to updates."""
    return sum(p.numel() for _, p in trainable_parameters(model, cfg))


def _run_updates(
    model: Denoiser,
    cfg: TrainConfig,
    loss_fn,
) -> list[float]:
    params = trainable_parameters(model, cfg)
    if not params:
        raise ValueError(f"trainable set {cfg.trainable} selects no parameters")
    for _, p in model.named_parameters():
        p.requires_grad_(False)
    for _, p in params:
        p.requires_grad_(True)
    # plain SGD with momentum: the step scales with the gradient, so the
    # stated small learning rate still makes fast progress from a raw
    # initialization where the residual (and its gradient) is large
    opt = torch.optim.SGD(
        [p for _, p in params], lr=cfg.learning_rate, momentum=cfg.momentum
    )
    gen = torch.Generator().manual_seed(cfg.seed)
    trace: list[float] = []
    try:
        for _ in range(cfg.iterations):
            loss = loss_fn(gen)
            opt.zero_grad()
            loss.backward()
            opt.step()
            trace.append(float(loss.detach()))
    finally:
        for _, p in model.named_parameters():
            p.requires_grad_(True)
    return trace


def one_shot_finetune(
    x0: torch.Tensor,
    stack: ControlStack | None,
    prompt: PromptEmbedding,
    model: Denoiser,
    cfg: TrainConfig,
    sched: NoiseSchedule,
) -> tuple[Denoiser, list[float]]:
    """Fine-tune the denoiser on one source video with the MSE noise objective.

    Each iteration draws a uniform timestep and fresh per-frame noise, forms
    the perturbed video, and updates only the selected parameter subset.
    Returns the model and the per-iteration loss trace.
    """
    cfg.validate()
    if stack is not None and stack.controls and stack.frames != x0.shape[0]:
        raise ValueError("control frame count differs from video frame count")

    def loss_fn(gen: torch.Generator) -> torch.Tensor:
        t = int(torch.randint(1, sched.T + 1, (1,), generator=gen))
        eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        xt = forward_sample(x0, t, eps, sched)
        pred = model(xt, stack, prompt, t)
        return training_residual(eps, pred)

    trace = _run_updates(model, cfg, loss_fn)
    return model, trace


def lora_pretrain(
    images: list[torch.Tensor],
    prompt: PromptEmbedding,
    model: Denoiser,
    cfg: TrainConfig,
    sched: NoiseSchedule,
) -> tuple[Denoiser, list[float]]:
    """Train only the low-rank adapters on single-frame reference images.

    The adapters are expected to be frozen in any later fine-tuning pass.
    """
    cfg.validate()
    if not has_lora(model):
        raise ValueError("no low-rank adapters attached to the model")
    if not images:
        raise ValueError("at least one reference image required")
    for im in images:
        if im.ndim != 4 or im.shape[0] != 1:
            raise ValueError("reference images must have shape (1, C, H, W)")
    lora_cfg = TrainConfig(
        iterations=cfg.iterations,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        trainable=("lora",),
        seed=cfg.seed,
    )

    def loss_fn(gen: torch.Generator) -> torch.Tensor:
        idx = int(torch.randint(0, len(images), (1,), generator=gen))
        x0 = images[idx]
        t = int(torch.randint(1, sched.T + 1, (1,), generator=gen))
        eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        xt = forward_sample(x0, t, eps, sched)
        pred = model(xt, None, prompt, t)
        return training_residual(eps, pred)

    trace = _run_updates(model, lora_cfg, loss_fn)
    return model, trace


def write_loss_trace(trace: list[float], path) -> None:
    """Plain-text (iteration, loss) table."""
    lines = ["iteration\tloss"]
    lines += [f"{i}\t{v!r}" for i, v in enumerate(trace)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
