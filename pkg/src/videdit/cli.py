"""Command-line pipeline: synthesize data, extract controls, train, edit.

Every subcommand reads a flat key=value config (plus --seed / --out
overrides), validates it with all violations enumerated, and writes its
artifacts under the output directory. Runs are byte-reproducible given the
same config and seed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from . import data as datagen
from .config import SCHEMA, ConfigError, RunConfig, load_config, parse_config, serialize_config
from .diffusion import SamplerConfig, build_schedule, make_initial_value
from .editing import edit, make_eps_predictor
from .longvideo import (
    KeyFusionConfig,
    WeightFunction,
    WEIGHT_KINDS,
    long_edit,
    fusion_weight_matrix,
    plan_windows,
    validate_long_settings,
)
from .metrics import report as metric_report
from .model import ControlStack, Denoiser, ModelConfig, attach_lora, embed_prompt
from .tensorio import (
    load_checkpoint,
    read_tensor,
    save_checkpoint,
    write_ppm,
    write_tensor,
)
from .training import TrainConfig, one_shot_finetune, write_loss_trace

log = logging.getLogger("videdit")


def _fail(problems: list[str]) -> None:
    raise ConfigError("; ".join(problems))


def _require_paths(pairs: list[tuple[str, str]]) -> list[str]:
    return [
        f"{key}: path does not exist: {path!r}"
        for key, path in pairs
        if not path or not Path(path).exists()
    ]


def _build_model(cfg: RunConfig) -> Denoiser:
    model = Denoiser(ModelConfig(width=cfg["model.width"]), seed=cfg["model.seed"])
    if cfg["lora.rank"] > 0:
        attach_lora(
            model, rank=cfg["lora.rank"], scale=cfg["lora.scale"], seed=cfg["model.seed"]
        )
    if cfg["checkpoint"]:
        load_checkpoint(model, cfg["checkpoint"])
    return model


def _build_schedule(cfg: RunConfig):
    return build_schedule(
        cfg["schedule.T"],
        cfg["schedule.kind"],
        cfg["schedule.beta_start"],
        cfg["schedule.beta_end"],
    )


def _build_stack(cfg: RunConfig) -> ControlStack | None:
    paths = cfg["controls"]
    if not paths:
        return None
    controls = [read_tensor(p).to(torch.float64) for p in paths]
    scales = list(cfg["control_scales"])
    if not scales:
        # paper defaults: scale 1 for a single control, 0.5 each for several
        scales = [1.0] if len(controls) == 1 else [0.5] * len(controls)
    masks: list[torch.Tensor | None] = []
    mask_paths = cfg["control_masks"]
    for i in range(len(controls)):
        p = mask_paths[i] if i < len(mask_paths) else ""
        masks.append(read_tensor(p).to(torch.float64) if p and p != "none" else None)
    return ControlStack(controls=controls, scales=scales, masks=masks)


def _build_sampler(cfg: RunConfig) -> SamplerConfig:
    start = cfg["sampler.start_step"] or None
    return SamplerConfig(
        steps=cfg["sampler.steps"],
        guidance_scale=cfg["sampler.guidance"],
        init_mode=cfg["sampler.init_mode"],
        start_step=start,
        seed=cfg["seed"],
    )


def _initial_value(cfg: RunConfig, video, stack, model, sched) -> torch.Tensor:
    sampler = _build_sampler(cfg)
    eps_fn = None
    if sampler.init_mode == "ddim_inversion":
        # inversion runs with the source prompt at guidance 1
        source = embed_prompt(cfg["source_prompt"])
        guided = make_eps_predictor(model, source, guidance_scale=1.0)

        def eps_fn(x, t):
            with torch.no_grad():
                return guided(x, stack, t, key_frame=1)

    gen = torch.Generator().manual_seed(cfg["seed"])
    return make_initial_value(video, sampler, sched, eps_fn=eps_fn, generator=gen)


def _write_meta(out: Path, cfg: RunConfig, extra: dict[str, str]) -> None:
    lines = [serialize_config(cfg).rstrip("\n")]
    lines += [f"{k} = {v}" for k, v in sorted(extra.items())]
    (out / "run_meta.txt").write_text("\n".join(lines) + "\n")


def _export_frames(out: Path, video: torch.Tensor, cfg: RunConfig) -> None:
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    for i in range(video.shape[0]):
        write_ppm(
            frames_dir / f"frame_{i:03d}.ppm",
            video[i],
            lo=cfg["export.lo"],
            hi=cfg["export.hi"],
        )


def cmd_synthesize_data(cfg: RunConfig, out: Path) -> None:
    problems = []
    if cfg["data.kind"] not in datagen.VIDEO_KINDS:
        problems.append(f"data.kind: unknown kind {cfg['data.kind']!r}")
    if cfg["data.frames"] < 1:
        problems.append("data.frames: must be >= 1")
    if problems:
        _fail(problems)
    video, masks = datagen.synthesize_video(
        cfg["data.kind"],
        cfg["data.frames"],
        cfg["data.height"],
        cfg["data.width"],
        cfg["data.channels"],
        seed=cfg["seed"],
    )
    write_tensor(out / "video.vdt", video)
    write_tensor(out / "masks.vdt", masks)
    _export_frames(out, video, cfg)
    _write_meta(out, cfg, {"artifact.video": "video.vdt", "artifact.masks": "masks.vdt"})


def cmd_extract_controls(cfg: RunConfig, out: Path) -> None:
    problems = _require_paths([("source_video", cfg["source_video"])])
    if cfg["control.kind"] not in datagen.CONTROL_KINDS:
        problems.append(f"control.kind: unknown kind {cfg['control.kind']!r}")
    if problems:
        _fail(problems)
    video = read_tensor(cfg["source_video"]).to(torch.float64)
    control = datagen.extract_controls(video, cfg["control.kind"])
    name = f"control_{cfg['control.kind']}.vdt"
    write_tensor(out / name, control)
    _write_meta(out, cfg, {"artifact.control": name})


def cmd_train(cfg: RunConfig, out: Path) -> None:
    problems = _require_paths([("source_video", cfg["source_video"])])
    problems += _require_paths([("controls", p) for p in cfg["controls"]])
    if cfg["train.iterations"] < 0:
        problems.append("train.iterations: must be >= 0")
    if cfg["train.learning_rate"] <= 0:
        problems.append("train.learning_rate: must be > 0")
    if problems:
        _fail(problems)
    video = read_tensor(cfg["source_video"]).to(torch.float64)
    stack = _build_stack(cfg)
    model = _build_model(cfg)
    sched = _build_schedule(cfg)
    tcfg = TrainConfig(
        iterations=cfg["train.iterations"],
        learning_rate=cfg["train.learning_rate"],
        momentum=cfg["train.momentum"],
        trainable=tuple(cfg["train.trainable"]),
        seed=cfg["seed"],
    )
    prompt = embed_prompt(cfg["source_prompt"])
    model, trace = one_shot_finetune(video, stack, prompt, model, tcfg, sched)
    save_checkpoint(model, out / "checkpoint.vdc")
    write_loss_trace(trace, out / "loss_trace.txt")
    _write_meta(
        out,
        cfg,
        {
            "artifact.checkpoint": "checkpoint.vdc",
            "artifact.loss_trace": "loss_trace.txt",
            "optimizer": f"sgd(momentum={cfg['train.momentum']})",
        },
    )


def _edit_common(cfg: RunConfig) -> tuple:
    problems = _require_paths([("source_video", cfg["source_video"])])
    problems += _require_paths([("controls", p) for p in cfg["controls"]])
    if cfg["checkpoint"]:
        problems += _require_paths([("checkpoint", cfg["checkpoint"])])
    if problems:
        _fail(problems)
    video = read_tensor(cfg["source_video"]).to(torch.float64)
    stack = _build_stack(cfg)
    model = _build_model(cfg)
    sched = _build_schedule(cfg)
    return video, stack, model, sched


def cmd_edit(cfg: RunConfig, out: Path) -> None:
    video, stack, model, sched = _edit_common(cfg)
    sampler = _build_sampler(cfg)
    x_init = _initial_value(cfg, video, stack, model, sched)
    edited = edit(x_init, stack, embed_prompt(cfg["target_prompt"]), model, sched, sampler)
    write_tensor(out / "edited.vdt", edited)
    _export_frames(out, edited, cfg)
    _write_meta(
        out,
        cfg,
        {
            "artifact.edited": "edited.vdt",
            "uncond_prompt": "all-zeros embedding",
        },
    )


def cmd_long_edit(cfg: RunConfig, out: Path) -> None:
    video, stack, model, sched = _edit_common(cfg)
    if cfg["long.weight_kind"] not in WEIGHT_KINDS:
        _fail([f"long.weight_kind: unknown kind {cfg['long.weight_kind']!r}"])
    N = video.shape[0]
    L = min(cfg["long.window_length"], N)
    a = min(cfg["long.overlap"], L - 1)
    plan = plan_windows(N, L, a)
    for note in validate_long_settings(L, a, cfg["long.key_weight"]):
        log.warning(note)
    f = WeightFunction(kind=cfg["long.weight_kind"], sigma=cfg["long.sigma"])
    kf = KeyFusionConfig(w=cfg["long.key_weight"], scale_non_key=cfg["long.scale_non_key"])
    sampler = _build_sampler(cfg)
    x_init = _initial_value(cfg, video, stack, model, sched)
    edited = long_edit(x_init, stack, embed_prompt(cfg["target_prompt"]), model, sched,
                       plan, f, kf, sampler)
    write_tensor(out / "edited.vdt", edited)
    _export_frames(out, edited, cfg)
    extra = {
        "artifact.edited": "edited.vdt",
        "plan.windows": ";".join(f"{s}-{e}" for s, e in plan.windows),
        "uncond_prompt": "all-zeros embedding",
    }
    if cfg["long.dump_weights"]:
        norm = fusion_weight_matrix(plan, f)
        lines = ["window\tframe\tweight"]
        for j, (s, e) in enumerate(plan.windows):
            for i in range(s, e + 1):
                lines.append(f"{j + 1}\t{i}\t{float(norm[j, i - 1])!r}")
        (out / "fusion_weights.txt").write_text("\n".join(lines) + "\n")
        extra["artifact.fusion_weights"] = "fusion_weights.txt"
    _write_meta(out, cfg, extra)


def cmd_metrics(cfg: RunConfig, out: Path) -> None:
    problems = _require_paths(
        [("source_video", cfg["source_video"]), ("edited_video", cfg["edited_video"])]
    )
    if cfg["metrics_mask"]:
        problems += _require_paths([("metrics_mask", cfg["metrics_mask"])])
    if problems:
        _fail(problems)
    source = read_tensor(cfg["source_video"]).to(torch.float64)
    edited = read_tensor(cfg["edited_video"]).to(torch.float64)
    masks = (
        read_tensor(cfg["metrics_mask"]).to(torch.float64) if cfg["metrics_mask"] else None
    )
    rep = metric_report(source, edited, masks=masks, data_range=cfg["metrics.data_range"])
    text = "\n".join(rep.lines()) + "\n"
    (out / "metrics.txt").write_text(text)
    sys.stdout.write(text)


COMMANDS = {
    "synthesize-data": cmd_synthesize_data,
    "extract-controls": cmd_extract_controls,
    "train": cmd_train,
    "edit": cmd_edit,
    "long-edit": cmd_long_edit,
    "metrics": cmd_metrics,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="videdit", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: VIDEDIT_OUT or .)")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a single config key",
    )
    args = parser.parse_args(argv)

    threads = os.environ.get("VIDEDIT_THREADS")
    if threads:
        torch.set_num_threads(int(threads))

    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)

    out_dir = args.out or os.environ.get("VIDEDIT_OUT") or "."
    try:
        cfg = (
            load_config(args.config, overrides)
            if args.config
            else parse_config("", overrides)
        )
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2

    logging.basicConfig(level=getattr(logging, cfg["log_level"].upper(), logging.INFO))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
