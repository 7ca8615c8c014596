import pytest
import torch

from videdit.data import extract_controls, synthesize_video
from videdit.diffusion import build_schedule
from videdit.model import ControlStack, Denoiser, ModelConfig, embed_prompt

SMALL = ModelConfig(width=8, text_width=16, emb_width=16)


@pytest.fixture(scope="session")
def small_model():
    return Denoiser(SMALL, seed=0)


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(100, "linear", 1e-4, 2e-2)


@pytest.fixture(scope="session")
def clip():
    video, masks = synthesize_video("moving_square", 4, 8, 8, 4, seed=0)
    return video, masks


@pytest.fixture(scope="session")
def clip_stack(clip):
    video, _ = clip
    return ControlStack(controls=[extract_controls(video, "edge_like")], scales=[1.0])


@pytest.fixture(scope="session")
def prompt():
    return embed_prompt("a silver jeep driving down a road", width=SMALL.text_width)


def rand_video(n=4, c=4, h=8, w=8, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, c, h, w, generator=gen, dtype=torch.float64)
