"""Experiment configuration: line-oriented `key = value` files with `#`
comments and dotted keys, overridable from the command line. Unknown keys
are rejected; every value is validated at parse time."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .losses import ContextualParams
from .trainer import (DISTORTION_KINDS, MODES, STRATEGY_KINDS, DistortionSpec,
                      DplConfig, TripletStrategy)

VALID_TASKS = ("darken", "colorcast", "blur")
VALID_METRICS = ("psnr", "ms_ssim", "dfd")


class ConfigError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_metrics(text: str) -> tuple:
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    for n in names:
        if n not in VALID_METRICS:
            raise ValueError(f"unknown metric {n!r}; choices: {VALID_METRICS}")
    if not names:
        raise ValueError("metric list is empty")
    return names


def _choice(options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {options}, got {t!r}")
        return t
    return parse


@dataclass
class _Key:
    parse: object
    default: object
    check: object = None
    help: str = ""


def _positive(name):
    def check(v):
        if v <= 0:
            raise ValueError(f"{name} must be > 0")
    return check


def _non_negative(name):
    def check(v):
        if v < 0:
            raise ValueError(f"{name} must be >= 0")
    return check


def _size_check(v):
    if v < 16 or v % 4:
        raise ValueError("size must be >= 16 and divisible by 4")


SCHEMA: dict[str, _Key] = {
    "task": _Key(_choice(VALID_TASKS), "colorcast", help="paired transformation task"),
    "size": _Key(int, 32, _size_check, "image extent in pixels"),
    "train_count": _Key(int, 400, _positive("train_count"), "training pair count"),
    "val_count": _Key(int, 50, _positive("val_count"), "validation pair count"),
    "seed": _Key(int, 0, help="master seed for every stream"),
    "out_dir": _Key(str, "runs/default", help="output directory"),
    "metrics": _Key(_parse_metrics, ("psnr", "ms_ssim", "dfd"),
                    help="comma-separated metric list"),
    "pretrain.epochs": _Key(int, 5, _positive("pretrain.epochs")),
    "pretrain.samples": _Key(int, 2000, _positive("pretrain.samples")),
    "pretrain.lr": _Key(float, 1e-3, _positive("pretrain.lr")),
    "dpl.strategy": _Key(_choice(STRATEGY_KINDS), "task_oriented"),
    "dpl.distortion": _Key(_choice(DISTORTION_KINDS + ("none",)), "color_jitter"),
    "dpl.blur_sigma_min": _Key(float, 1.0, _positive("dpl.blur_sigma_min")),
    "dpl.blur_sigma_max": _Key(float, 2.0, _positive("dpl.blur_sigma_max")),
    "dpl.jitter_scale_min": _Key(float, 0.6, _non_negative("dpl.jitter_scale_min")),
    "dpl.jitter_scale_max": _Key(float, 1.4, _non_negative("dpl.jitter_scale_max")),
    "dpl.jitter_bias_min": _Key(float, -0.1),
    "dpl.jitter_bias_max": _Key(float, 0.1),
    "dpl.crop": _Key(int, 16, _positive("dpl.crop"), "triplet crop size"),
    "dpl.interval": _Key(int, 4, _positive("dpl.interval"),
                         "iterations between selector updates"),
    "dpl.margin": _Key(float, 1.0, _non_negative("margin"), "triplet margin"),
    "dpl.mode": _Key(_choice(MODES), "feature_selection"),
    "dpl.iterations": _Key(int, 2000, _positive("dpl.iterations")),
    "dpl.lr_generator": _Key(float, 1e-4, _positive("dpl.lr_generator")),
    "dpl.lr_selector": _Key(float, 1e-4, _positive("dpl.lr_selector")),
    "dpl.w_perceptual": _Key(float, 1.0, _non_negative("dpl.w_perceptual")),
    "dpl.w_contextual": _Key(float, 0.0, _non_negative("dpl.w_contextual")),
    "dpl.w_pixel_l1": _Key(float, 0.0, _non_negative("dpl.w_pixel_l1")),
    "dpl.w_color": _Key(float, 0.0, _non_negative("dpl.w_color")),
    "dpl.w_texture": _Key(float, 0.0, _non_negative("dpl.w_texture")),
    "dpl.color_sigma": _Key(float, 3.0, _positive("dpl.color_sigma")),
    "dpl.contextual_bandwidth": _Key(float, 0.5, _positive("dpl.contextual_bandwidth")),
    "dpl.contextual_epsilon": _Key(float, 1e-5, _positive("dpl.contextual_epsilon")),
    "dpl.augment": _Key(_parse_bool, True, help="joint pair augmentation"),
    "train.sample_every": _Key(int, 500, _positive("train.sample_every"),
                               "iterations between sample triptychs"),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {k: spec.default for k, spec in SCHEMA.items()}
        full.update(self.values)
        self.values = full

    def __getitem__(self, key):
        return self.values[key]

    @property
    def task(self): return self.values["task"]

    @property
    def size(self): return self.values["size"]

    @property
    def seed(self): return self.values["seed"]

    @property
    def out_dir(self): return self.values["out_dir"]

    def distortion_spec(self) -> DistortionSpec | None:
        v = self.values
        if v["dpl.distortion"] == "none":
            return None
        return DistortionSpec(
            kind=v["dpl.distortion"],
            blur_sigma=(v["dpl.blur_sigma_min"], v["dpl.blur_sigma_max"]),
            jitter_scale=(v["dpl.jitter_scale_min"], v["dpl.jitter_scale_max"]),
            jitter_bias=(v["dpl.jitter_bias_min"], v["dpl.jitter_bias_max"]),
        )

    def triplet_strategy(self) -> TripletStrategy:
        v = self.values
        kind = v["dpl.strategy"]
        distortion = self.distortion_spec() if kind == "task_oriented" else None
        if kind == "task_oriented" and distortion is None:
            raise ConfigError("dpl.strategy = task_oriented requires a distortion")
        return TripletStrategy(kind=kind, crop=v["dpl.crop"], distortion=distortion)

    def dpl_config(self) -> DplConfig:
        v = self.values
        weights = {name: v[f"dpl.w_{name}"] for name in
                   ("perceptual", "contextual", "pixel_l1", "color", "texture")
                   if v[f"dpl.w_{name}"] > 0}
        return DplConfig(
            strategy=self.triplet_strategy(),
            interval=v["dpl.interval"],
            margin=v["dpl.margin"],
            mode=v["dpl.mode"],
            iterations=v["dpl.iterations"],
            lr_generator=v["dpl.lr_generator"],
            lr_selector=v["dpl.lr_selector"],
            loss_weights=weights,
            contextual_params=ContextualParams(v["dpl.contextual_bandwidth"],
                                               v["dpl.contextual_epsilon"]),
            color_sigma=v["dpl.color_sigma"],
            augment_pairs=v["dpl.augment"],
        )


def _set_value(values: dict, key: str, raw: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r} ({where})")
    spec = SCHEMA[key]
    try:
        value = spec.parse(raw)
        if spec.check is not None:
            spec.check(value)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad value for {key!r} ({where}): {e}") from None
    values[key] = value


def parse_config(path=None, overrides: dict | None = None,
                 use_env: bool = True) -> ExperimentConfig:
    """Defaults, then file, then DPL_SEED, then command-line overrides."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        for lineno, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"missing '=' at {path}:{lineno}: {line.strip()!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            _set_value(values, key, raw, f"{path}:{lineno}")
    if use_env and os.environ.get("DPL_SEED"):
        _set_value(values, "seed", os.environ["DPL_SEED"], "env DPL_SEED")
    for key, raw in (overrides or {}).items():
        _set_value(values, key, raw, "command line")
    return ExperimentConfig(values)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(config: ExperimentConfig) -> str:
    lines = [f"{key} = {_format_value(config.values[key])}" for key in SCHEMA]
    return "\n".join(lines) + "\n"
