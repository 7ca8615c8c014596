"""Flat key=value run configuration.

The file format is one `key = value` pair per line; `#` starts a comment.
Unknown keys are hard errors (they are almost always typos in experiment
sweeps), and validation reports every violated field at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

_MISSING = object()


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _parse_str_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


# key -> (parser, default). Paths stay strings; existence is checked during
# validation only for the keys the subcommand actually uses.
SCHEMA: dict[str, tuple[Any, Any]] = {
    "seed": (int, 0),
    "log_level": (str, "info"),
    # input/output paths
    "source_video": (str, ""),
    "edited_video": (str, ""),
    "controls": (_parse_str_list, ()),
    "control_scales": (_parse_float_list, ()),
    "control_masks": (_parse_str_list, ()),
    "checkpoint": (str, ""),
    "metrics_mask": (str, ""),
    # prompts
    "source_prompt": (str, ""),
    "target_prompt": (str, ""),
    # synthetic data
    "data.kind": (str, "moving_square"),
    "data.frames": (int, 8),
    "data.height": (int, 8),
    "data.width": (int, 8),
    "data.channels": (int, 4),
    # control extraction
    "control.kind": (str, "edge_like"),
    # model
    "model.width": (int, 32),
    "model.seed": (int, 0),
    "lora.rank": (int, 0),
    "lora.scale": (float, 1.0),
    # diffusion schedule
    "schedule.T": (int, 1000),
    "schedule.kind": (str, "linear"),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 2e-2),
    # sampling
    "sampler.steps": (int, 50),
    "sampler.guidance": (float, 12.0),
    "sampler.init_mode": (str, "gaussian"),
    "sampler.start_step": (int, 0),  # 0 means T
    # training
    "train.iterations": (int, 80),
    "train.learning_rate": (float, 3e-5),
    "train.momentum": (float, 0.9),
    "train.trainable": (
        _parse_str_list,
        ("keyframe_wo", "temporal_attention", "temporal_gates"),
    ),
    # long video
    "long.window_length": (int, 16),
    "long.overlap": (int, 8),
    "long.weight_kind": (str, "gaussian"),
    "long.sigma": (float, 0.1),
    "long.key_weight": (float, 0.3),
    "long.scale_non_key": (_parse_bool, False),
    "long.dump_weights": (_parse_bool, False),
    # frame export range
    "export.lo": (float, -3.0),
    "export.hi": (float, 3.0),
    # metrics
    "metrics.data_range": (float, 1.0),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str) -> Any:
        return self.values[key]


class ConfigError(ValueError):
    pass


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse config text; apply string overrides; fail on any unknown key."""
    raw: dict[str, str] = {}
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            errors.append(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        raw[key] = value

    unknown = sorted(k for k in raw if k not in SCHEMA)
    for k in unknown:
        errors.append(f"unknown key {k!r}")

    values: dict[str, Any] = {}
    for key, (parser, default) in SCHEMA.items():
        if key not in raw:
            values[key] = default
            continue
        try:
            values[key] = parser(raw[key])
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(values=values)


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key in SCHEMA:
        v = cfg.values[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def validate_fields(cfg: RunConfig, checks: list[tuple[bool, str]]) -> None:
    """Fail with every violated field listed, not just the first."""
    problems = [msg for ok, msg in checks if not ok]
    if problems:
        raise ConfigError("; ".join(problems))
