"""Model and training configuration, presets, and the ``key = value`` file format."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .tensor import ConfigError

HEADS = ("pixelshuffle-sr", "conv-denoise")


@dataclass
class ModelConfig:
    channels: int = 32
    depth: int = 2              # ASSBs per group
    groups: int = 2
    d_state: int = 16
    num_prompts: int = 64       # T
    prompt_rank: int = 32       # r
    window: int = 8
    heads: int = 4
    ffn_expansion: float = 2.0
    scale: int = 2
    head: str = "pixelshuffle-sr"
    dtype: str = "f32"
    routing_mode: str = "hard"  # training-time routing; inference uses argmax
    temperature: float = 1.0
    in_channels: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.channels < 1 or self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} must be a positive multiple of heads={self.heads}")
        if self.scale not in (1, 2, 3, 4):
            raise ConfigError(f"scale must be one of 1, 2, 3, 4 (got {self.scale})")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be f32 or f64")
        if self.routing_mode not in ("hard", "soft", "argmax"):
            raise ConfigError(f"unknown routing mode {self.routing_mode!r}")
        for name in ("depth", "groups", "d_state", "num_prompts", "prompt_rank", "window", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.prompt_rank > self.num_prompts:
            raise ConfigError("prompt_rank must not exceed num_prompts")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")

    @property
    def np_dtype(self):
        import numpy as np
        return np.float32 if self.dtype == "f32" else np.float64


# Larger presets only fix plausible widths; they make no claim to match any
# published parameter count.
PRESETS: dict[str, dict] = {
    "v2-toy": {},
    "light": dict(channels=48, depth=4, groups=4, window=16, heads=4, num_prompts=64, prompt_rank=32),
    "small": dict(channels=96, depth=4, groups=4, window=16, heads=4),
    "base": dict(channels=144, depth=6, groups=6, window=16, heads=6),
    "large": dict(channels=174, depth=6, groups=8, window=16, heads=6),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    steps: int = 2000
    milestones: tuple[int, ...] = ()    # empty -> 60% and 80% of steps
    loss: str = "l1"
    patch_size: int = 32                # HQ patch side
    n_train: int = 2000
    n_val: int = 64
    dataset: str = "mixed"
    noise_sigma: float = 25.0           # for denoising, on the 0..255 scale
    clip_grad_norm: float = 1.0         # <= 0 disables
    augment: bool = True
    eval_every: int = 200
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if any(b >= a for a, b in zip(self.milestones[1:], self.milestones)):
            raise ConfigError("milestones must be strictly increasing")
        if self.loss not in ("l1", "charbonnier"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")

    def effective_milestones(self) -> tuple[int, ...]:
        if self.milestones:
            return self.milestones
        return tuple(sorted({int(self.steps * 0.6), int(self.steps * 0.8)}))


def _coerce(f: dataclasses.Field, raw: str):
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    if t == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: not a boolean: {raw!r}")
    if t.startswith("tuple"):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def _apply(cls, section: dict[str, str], base=None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    values = dataclasses.asdict(base) if base is not None else {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        try:
            values[key] = _coerce(fields[key], raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return cls(**values)


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read ``[model]`` and ``[train]`` sections; ``preset = name`` in ``[model]`` seeds defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for s in cp.sections():
        if s not in ("model", "train"):
            raise ConfigError(f"{path}: unknown section [{s}]")
    model_sec = dict(cp["model"]) if cp.has_section("model") else {}
    base = preset(model_sec.pop("preset", "v2-toy"))
    model = _apply(ModelConfig, model_sec, base)
    train = _apply(TrainConfig, dict(cp["train"]) if cp.has_section("train") else {})
    return model, train


def dump_config(path, model: ModelConfig, train: TrainConfig | None = None) -> None:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return str(v)

    lines = ["[model]"] + [f"{k} = {fmt(v)}" for k, v in dataclasses.asdict(model).items()]
    if train is not None:
        lines += ["", "[train]"] + [f"{k} = {fmt(v)}" for k, v in dataclasses.asdict(train).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
