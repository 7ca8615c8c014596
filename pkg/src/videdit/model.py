"""Toy control-conditioned video denoiser.

The network predicts per-frame noise for a latent video (N, C, H, W). It is a
small frame-wise encoder / middle / decoder UNet where

* every spatial self-attention site runs key-frame attention (queries from
  each frame, keys and values from one reference frame),
* a zero-gated temporal-attention branch sits in parallel with attention at
  every main-branch stage except the middle block,
* a trainable copy of the encoder + middle block processes each visual
  control; its zero-gated features are summed into the decoder skips,
* conditioning is a sinusoidal timestep embedding plus a projected prompt
  vector, added inside every residual block.

All spatial convolutions act per frame (the frame axis is the batch axis),
i.e. a 1x3x3 kernel over (frame, h, w). Parameters are float64 so algebraic
identities hold to near machine precision in tests.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import torch
from torch import nn


# ---------------------------------------------------------------------------
# Conditioning inputs


@dataclass(frozen=True)
class PromptEmbedding:
    """Deterministic hashed bag-of-tokens embedding of a prompt string."""

    vectors: torch.Tensor  # (n_tokens, d_text); a single zero row if empty

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def pooled(self) -> torch.Tensor:
        return self.vectors.mean(dim=0)


def embed_prompt(text: str, width: int = 32, max_tokens: int = 16) -> PromptEmbedding:
    """Embed a prompt as per-token vectors derived from token hashes.

    The empty prompt maps to a single zero vector and serves as the
    unconditional branch for guidance.
    """
    tokens = text.lower().split()[:max_tokens]
    if not tokens:
        return PromptEmbedding(vectors=torch.zeros(1, width, dtype=torch.float64))
    rows = []
    for tok in tokens:
        seed = int.from_bytes(hashlib.sha256(tok.encode()).digest()[:8], "little")
        gen = torch.Generator().manual_seed(seed)
        rows.append(torch.randn(width, generator=gen, dtype=torch.float64))
    return PromptEmbedding(vectors=torch.stack(rows))


@dataclass
class ControlStack:
    """Per-frame visual conditions with per-control scales and optional masks."""

    controls: list[torch.Tensor]  # each (N, C_c, H, W)
    scales: list[float]
    masks: list[torch.Tensor | None] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.scales) != len(self.controls):
            raise ValueError("one scale per control required")
        if not self.masks:
            self.masks = [None] * len(self.controls)
        if len(self.masks) != len(self.controls):
            raise ValueError("one mask slot per control required")
        for s in self.scales:
            if s < 0:
                raise ValueError(f"control scale must be >= 0, got {s}")
        n = {c.shape[0] for c in self.controls}
        if len(n) > 1:
            raise ValueError(f"controls disagree on frame count: {sorted(n)}")

    @property
    def frames(self) -> int:
        return self.controls[0].shape[0] if self.controls else 0

    def slice(self, start: int, end: int) -> "ControlStack":
        """Frame range [start, end], 1-based inclusive."""
        return ControlStack(
            controls=[c[start - 1 : end] for c in self.controls],
            scales=list(self.scales),
            masks=[m[start - 1 : end] if m is not None else None for m in self.masks],
        )

    def gather(self, indices: list[int]) -> "ControlStack":
        """Pick 1-based frame indices, in order."""
        idx = torch.tensor([i - 1 for i in indices])
        return ControlStack(
            controls=[c[idx] for c in self.controls],
            scales=list(self.scales),
            masks=[m[idx] if m is not None else None for m in self.masks],
        )


def apply_mask_to_controls(stack: ControlStack) -> ControlStack:
    """Multiply each control by its binary mask; unmasked controls pass through."""
    out_controls = []
    for c, m in zip(stack.controls, stack.masks):
        if m is None:
            out_controls.append(c)
            continue
        vals = torch.unique(m)
        if not all(float(v) in (0.0, 1.0) for v in vals):
            raise ValueError("masks must be binary (entries in {0, 1})")
        out_controls.append(c * m)
    return ControlStack(
        controls=out_controls,
        scales=list(stack.scales),
        masks=[None] * len(stack.controls),
    )


def control_fusion(
    h_u: torch.Tensor, branch_features: list[tuple[torch.Tensor, float]]
) -> torch.Tensor:
    """Weighted sum of control-branch features onto main-branch features."""
    h = h_u
    for h_c, lam in branch_features:
        if h_c.shape != h_u.shape:
            raise ValueError(
                f"control feature shape {tuple(h_c.shape)} != {tuple(h_u.shape)}"
            )
        h = h + lam * h_c
    return h


# ---------------------------------------------------------------------------
# Attention


class LoRAAdapter(nn.Module):
    """Low-rank additive factors for one square weight: W' = W + scale * B A."""

    def __init__(self, d: int, rank: int, scale: float, generator: torch.Generator):
        super().__init__()
        if not 1 <= rank <= d:
            raise ValueError(f"rank must be in [1, {d}], got {rank}")
        self.scale = scale
        a = torch.randn(rank, d, generator=generator, dtype=torch.float64) / math.sqrt(d)
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(d, rank, dtype=torch.float64))

    def delta(self) -> torch.Tensor:
        return self.scale * (self.B @ self.A)


class AttentionWeights(nn.Module):
    """Q/K/V/output projections for one attention site, with optional LoRA."""

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        for name in ("wq", "wk", "wv", "wo"):
            self.register_parameter(name, nn.Parameter(torch.empty(d, d, dtype=torch.float64)))
        self.adapters = nn.ModuleDict()

    def weight(self, name: str) -> torch.Tensor:
        w = getattr(self, name)
        if name in self.adapters:
            w = w + self.adapters[name].delta()
        return w


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, d: int) -> torch.Tensor:
    scores = q @ k.transpose(-2, -1) / math.sqrt(d)
    return torch.softmax(scores, dim=-1) @ v


def self_attention(v: torch.Tensor, w: AttentionWeights) -> torch.Tensor:
    """Per-frame attention: Q, K, V all from the same frame.

    v has shape (..., S, d) with S tokens of width d.
    """
    if v.shape[-1] != w.d:
        raise ValueError(f"feature width {v.shape[-1]} != {w.d}")
    q = v @ w.weight("wq").T
    k = v @ w.weight("wk").T
    val = v @ w.weight("wv").T
    return _attend(q, k, val, w.d) @ w.weight("wo").T


def key_frame_attention(v: torch.Tensor, w: AttentionWeights, k: int) -> torch.Tensor:
    """Queries from every frame; keys and values from frame k (1-based).

    v has shape (N, S, d).
    """
    n = v.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"key frame {k} outside [1, {n}]")
    if v.shape[-1] != w.d:
        raise ValueError(f"feature width {v.shape[-1]} != {w.d}")
    q = v @ w.weight("wq").T
    key = v[k - 1 : k] @ w.weight("wk").T  # broadcast over query frames
    val = v[k - 1 : k] @ w.weight("wv").T
    return _attend(q, key, val, w.d) @ w.weight("wo").T


def temporal_attention(
    v: torch.Tensor, w: AttentionWeights, gate: torch.Tensor
) -> torch.Tensor:
    """Residual attention across the frame axis at every spatial site.

    v has shape (N, S, d); the gate is a d x d projection that is zero at
    initialization, so the output then equals v exactly.
    """
    if v.shape[-1] != w.d:
        raise ValueError(f"feature width {v.shape[-1]} != {w.d}")
    vt = v.transpose(0, 1)  # (S, N, d): sequence axis = frames
    attn = self_attention(vt, w)
    return v + (attn @ gate.T).transpose(0, 1)


# ---------------------------------------------------------------------------
# Network blocks


def timestep_embedding(t: int, width: int) -> torch.Tensor:
    """Standard sinusoidal embedding of a scalar timestep."""
    half = width // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    args = t * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)])
    if emb.shape[0] < width:
        emb = torch.cat([emb, torch.zeros(width - emb.shape[0], dtype=torch.float64)])
    return emb


class ResBlock(nn.Module):
    def __init__(self, d: int, emb_width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(d, d, 3, padding=1)
        self.conv2 = nn.Conv2d(d, d, 3, padding=1)
        self.emb_proj = nn.Linear(emb_width, d)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(x))
        h = h + self.emb_proj(emb)[None, :, None, None]
        h = self.conv2(torch.nn.functional.silu(h))
        return x + h


class AttentionSite(nn.Module):
    """Key-frame attention with an optional parallel zero-gated temporal branch."""

    def __init__(self, d: int, with_temporal: bool):
        super().__init__()
        self.kf = AttentionWeights(d)
        self.with_temporal = with_temporal
        if with_temporal:
            self.temporal = AttentionWeights(d)
            self.temporal_gate = nn.Parameter(torch.zeros(d, d, dtype=torch.float64))

    def forward(self, x: torch.Tensor, key_frame: int) -> torch.Tensor:
        n, d, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)  # (N, HW, d)
        out = tokens + key_frame_attention(tokens, self.kf, key_frame)
        if self.with_temporal:
            # parallel branch reading the same input as key-frame attention
            out = out + (
                temporal_attention(tokens, self.temporal, self.temporal_gate) - tokens
            )
        return out.transpose(1, 2).reshape(n, d, h, w)


class Stage(nn.Module):
    def __init__(self, d: int, emb_width: int, with_temporal: bool):
        super().__init__()
        self.res = ResBlock(d, emb_width)
        self.attn = AttentionSite(d, with_temporal)

    def forward(self, x: torch.Tensor, emb: torch.Tensor, key_frame: int) -> torch.Tensor:
        return self.attn(self.res(x, emb), key_frame)


class ControlBranch(nn.Module):
    """Copy of the main encoder + middle block that ingests one control tensor."""

    def __init__(self, cfg: "ModelConfig"):
        super().__init__()
        d = cfg.width
        self.conv_in = nn.Conv2d(cfg.channels, d, 3, padding=1)
        self.embed = nn.Conv2d(cfg.control_channels, d, 3, padding=1)
        self.enc1 = Stage(d, cfg.emb_width, with_temporal=False)
        self.down1 = nn.Conv2d(d, d, 3, stride=2, padding=1)
        self.enc2 = Stage(d, cfg.emb_width, with_temporal=False)
        self.down2 = nn.Conv2d(d, d, 3, stride=2, padding=1)
        self.mid = Stage(d, cfg.emb_width, with_temporal=False)
        self.gate1 = nn.Parameter(torch.zeros(d, d, dtype=torch.float64))
        self.gate2 = nn.Parameter(torch.zeros(d, d, dtype=torch.float64))
        self.gate_mid = nn.Parameter(torch.zeros(d, d, dtype=torch.float64))

    @staticmethod
    def _gate(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        # 1x1 zero convolution, expressed as a channel-mixing matrix
        return torch.einsum("oc,nchw->nohw", g, x)

    def forward(
        self, x: torch.Tensor, control: torch.Tensor, emb: torch.Tensor, key_frame: int
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h = self.conv_in(x) + self.embed(control)
        s1 = self.enc1(h, emb, key_frame)
        s2 = self.enc2(self.down1(s1), emb, key_frame)
        m = self.mid(self.down2(s2), emb, key_frame)
        return self._gate(s1, self.gate1), self._gate(s2, self.gate2), self._gate(m, self.gate_mid)


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 4
    width: int = 32
    text_width: int = 32
    emb_width: int = 32
    control_channels: int = 1
    key_frame: int = 1  # 1-based default reference frame


class Denoiser(nn.Module):
    """Noise-prediction network over latent videos, with visual controls."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.width
        self.conv_in = nn.Conv2d(cfg.channels, d, 3, padding=1)
        self.enc1 = Stage(d, cfg.emb_width, with_temporal=True)
        self.down1 = nn.Conv2d(d, d, 3, stride=2, padding=1)
        self.enc2 = Stage(d, cfg.emb_width, with_temporal=True)
        self.down2 = nn.Conv2d(d, d, 3, stride=2, padding=1)
        self.mid = Stage(d, cfg.emb_width, with_temporal=False)
        self.up1 = nn.ConvTranspose2d(d, d, 2, stride=2)
        self.dec1 = Stage(d, cfg.emb_width, with_temporal=True)
        self.up2 = nn.ConvTranspose2d(d, d, 2, stride=2)
        self.dec2 = Stage(d, cfg.emb_width, with_temporal=True)
        self.conv_out = nn.Conv2d(d, cfg.channels, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.emb_width, cfg.emb_width),
            nn.SiLU(),
            nn.Linear(cfg.emb_width, cfg.emb_width),
        )
        self.prompt_proj = nn.Linear(cfg.text_width, cfg.emb_width)
        self.control = ControlBranch(cfg)
        self.double()
        self._init_weights(seed)

    def _init_weights(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in sorted(self.named_parameters()):
                if p.ndim >= 2:
                    fan_in = p.shape[1] * (p.shape[2] * p.shape[3] if p.ndim == 4 else 1)
                    p.copy_(
                        torch.randn(p.shape, generator=gen, dtype=torch.float64)
                        / math.sqrt(fan_in)
                    )
                else:
                    p.zero_()
            # temporal attention starts as an exact copy of the site's
            # key-frame (base self-attention) weights; all gates start at zero
            for module in self.modules():
                if isinstance(module, AttentionSite) and module.with_temporal:
                    for w in ("wq", "wk", "wv", "wo"):
                        getattr(module.temporal, w).copy_(getattr(module.kf, w))
                    module.temporal_gate.zero_()
            # control branch starts as a copy of the main encoder + middle
            for main_name, ctrl_name in (
                ("conv_in", "conv_in"),
                ("enc1", "enc1"),
                ("down1", "down1"),
                ("enc2", "enc2"),
                ("down2", "down2"),
                ("mid", "mid"),
            ):
                src = dict(getattr(self, main_name).named_parameters())
                dst = dict(getattr(self.control, ctrl_name).named_parameters())
                for k in dst:
                    if k in src and src[k].shape == dst[k].shape:
                        dst[k].copy_(src[k])
            for g in (self.control.gate1, self.control.gate2, self.control.gate_mid):
                g.zero_()

    def _conditioning(self, prompt: PromptEmbedding, t: int) -> torch.Tensor:
        if prompt.width != self.cfg.text_width:
            raise ValueError(
                f"prompt width {prompt.width} != model text width {self.cfg.text_width}"
            )
        temb = self.time_mlp(timestep_embedding(t, self.cfg.emb_width))
        return temb + self.prompt_proj(prompt.pooled())

    def forward(
        self,
        xt: torch.Tensor,
        stack: ControlStack | None,
        prompt: PromptEmbedding,
        t: int,
        key_frame: int | None = None,
    ) -> torch.Tensor:
        """Predict per-frame noise for the latent video xt at timestep t."""
        if xt.ndim != 4 or xt.shape[1] != self.cfg.channels:
            raise ValueError(f"expected (N, {self.cfg.channels}, H, W), got {tuple(xt.shape)}")
        if xt.shape[2] % 4 or xt.shape[3] % 4:
            raise ValueError("latent height and width must be divisible by 4")
        if stack is not None and stack.controls and stack.frames != xt.shape[0]:
            raise ValueError(
                f"control frame count {stack.frames} != video frame count {xt.shape[0]}"
            )
        k = key_frame if key_frame is not None else self.cfg.key_frame
        emb = self._conditioning(prompt, t)

        # control branch, once per control, weighted per-control
        c1 = c2 = cm = None
        if stack is not None and stack.controls:
            masked = apply_mask_to_controls(stack)
            feats1, feats2, featsm = [], [], []
            for ctrl, lam in zip(masked.controls, masked.scales):
                s1, s2, m = self.control(xt, ctrl, emb, k)
                feats1.append((s1, lam))
                feats2.append((s2, lam))
                featsm.append((m, lam))
            c1 = control_fusion(torch.zeros_like(feats1[0][0]), feats1)
            c2 = control_fusion(torch.zeros_like(feats2[0][0]), feats2)
            cm = control_fusion(torch.zeros_like(featsm[0][0]), featsm)

        h0 = self.conv_in(xt)
        s1 = self.enc1(h0, emb, k)
        s2 = self.enc2(self.down1(s1), emb, k)
        hm = self.mid(self.down2(s2), emb, k)
        if cm is not None:
            hm = hm + cm
        skip2 = s2 if c2 is None else control_fusion(s2, [(c2, 1.0)])
        skip1 = s1 if c1 is None else control_fusion(s1, [(c1, 1.0)])
        u1 = self.dec1(self.up1(hm) + skip2, emb, k)
        u2 = self.dec2(self.up2(u1) + skip1, emb, k)
        return self.conv_out(u2)


def predict_noise(
    xt: torch.Tensor,
    stack: ControlStack | None,
    prompt: PromptEmbedding,
    t: int,
    model: Denoiser,
    key_frame: int | None = None,
) -> torch.Tensor:
    """Functional entry point for the denoiser forward pass."""
    return model(xt, stack, prompt, t, key_frame=key_frame)


def attach_lora(
    model: Denoiser,
    targets: tuple[str, ...] = ("enc1", "enc2", "mid", "dec1", "dec2"),
    rank: int = 4,
    scale: float = 1.0,
    matrices: tuple[str, ...] = ("wq", "wk", "wv", "wo"),
    seed: int = 0,
) -> Denoiser:
    """Attach fresh low-rank adapters to key-frame attention weights in place.

    Adapter B factors start at zero, so the forward pass is unchanged until
    they are trained. Targets are matched as prefixes of module paths.
    """
    gen = torch.Generator().manual_seed(seed)
    attached = 0
    for name, module in sorted(model.named_modules()):
        if not isinstance(module, AttentionWeights):
            continue
        if not name.endswith(".kf"):
            continue
        if not any(name.startswith(t) for t in targets):
            continue
        for m in matrices:
            module.adapters[m] = LoRAAdapter(module.d, rank, scale, gen)
        attached += 1
    if attached == 0:
        raise ValueError(f"no attention sites matched targets {targets}")
    return model


def has_lora(model: Denoiser) -> bool:
    return any(isinstance(m, LoRAAdapter) for m in model.modules())
