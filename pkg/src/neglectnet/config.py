"""Configuration records and the flat run configuration used by the CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


UPSAMPLE_MODES = ("nn_conv", "deconv")


def layer_width(i: int, base_width: int, max_width: int) -> int:
    """Kernel count of the i-th (1-based) encoder stage."""
    return min(2 ** (i - 1) * base_width, max_width)


@dataclass(frozen=True)
class NetConfig:
    depth: int = 4
    base_width: int = 8
    max_width: int = 512
    in_channels: int = 3
    upsample_mode: str = "nn_conv"
    use_neglect_branch: bool = True
    image_h: int = 32
    image_w: int = 32
    leaky_slope: float = 0.2
    norm_eps: float = 1e-5
    d_depth: int = 3
    norm_first_layer: bool = False

    def __post_init__(self):
        if self.depth < 1 or self.d_depth < 1:
            raise ConfigError("depth and d_depth must be >= 1")
        if self.base_width < 1 or self.max_width < self.base_width:
            raise ConfigError("need 1 <= base_width <= max_width")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ConfigError(f"upsample_mode must be one of {UPSAMPLE_MODES}")
        for name in ("image_h", "image_w"):
            v = getattr(self, name)
            if v < 1 or v % 2 ** self.depth:
                raise ConfigError(f"{name}={v} not divisible by 2**depth={2 ** self.depth}")
            if v % 2 ** self.d_depth:
                raise ConfigError(f"{name}={v} not divisible by 2**d_depth={2 ** self.d_depth}")

    def width(self, i: int) -> int:
        return layer_width(i, self.base_width, self.max_width)

    @property
    def widths(self) -> list[int]:
        return [self.width(i) for i in range(1, self.depth + 1)]


@dataclass(frozen=True)
class LossWeights:
    lambda_f: float = 100.0
    lambda_s: float = 100.0

    def __post_init__(self):
        if self.lambda_f < 0 or self.lambda_s < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 500
    seed: int = 0
    max_loss: float = 1e6  # abort threshold

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("steps >= 0, batch_size >= 1, checkpoint_every >= 1 required")

    @property
    def d_lr(self) -> float:
        return self.lr / 2


@dataclass(frozen=True)
class SynthConfig:
    image_h: int = 32
    image_w: int = 32
    seed: int = 0
    # relative weights of background styles: gradient, noise, shapes
    bg_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    # relative weights of foreground styles: strokes, polygons, blobs
    fg_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    fg_min_frac: float = 0.25
    fg_max_frac: float = 0.9
    max_margin_frac: float = 0.5
    supersample: int = 4
    flip_prob: float = 0.0
    max_crop_frac: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0

    def __post_init__(self):
        if min(self.image_h, self.image_w) < 8:
            raise ConfigError("synthetic images must be at least 8x8")
        if not 0 < self.fg_min_frac <= self.fg_max_frac <= 1:
            raise ConfigError("need 0 < fg_min_frac <= fg_max_frac <= 1")


@dataclass
class RunConfig:
    """Every tunable of a run as one flat record; keys double as CLI flags."""

    # network
    depth: int = 4
    base_width: int = 8
    max_width: int = 512
    d_depth: int = 3
    upsample_mode: str = "nn_conv"
    mode: str = "full"
    image_size: int = 32
    leaky_slope: float = 0.2
    norm_eps: float = 1e-5
    norm_first_layer: bool = False
    # loss
    lambda_f: float = 100.0
    lambda_s: float = 100.0
    # schedule
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 500
    seed: int = 0
    # data
    n_train: int = 8
    n_test: int = 8
    test_seed: int = 1_000_003
    data_dir: str = ""
    fg_min_frac: float = 0.25
    fg_max_frac: float = 0.9
    max_margin_frac: float = 0.5
    flip_prob: float = 0.0
    max_crop_frac: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0
    # misc
    out_dir: str = "runs/latest"
    figures: bool = True

    def __post_init__(self):
        if self.mode not in ("full", "baseline"):
            raise ConfigError("mode must be 'full' or 'baseline'")
        self.net()
        self.schedule()
        self.loss_weights()

    def net(self) -> NetConfig:
        return NetConfig(
            depth=self.depth, base_width=self.base_width, max_width=self.max_width,
            upsample_mode=self.upsample_mode, use_neglect_branch=self.mode == "full",
            image_h=self.image_size, image_w=self.image_size, leaky_slope=self.leaky_slope,
            norm_eps=self.norm_eps, d_depth=self.d_depth, norm_first_layer=self.norm_first_layer,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_f, self.lambda_s)

    def schedule(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1,
            beta2=self.beta2, adam_eps=self.adam_eps, checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )

    def synth(self, seed: int | None = None) -> SynthConfig:
        return SynthConfig(
            image_h=self.image_size, image_w=self.image_size,
            seed=self.seed if seed is None else seed,
            fg_min_frac=self.fg_min_frac, fg_max_frac=self.fg_max_frac,
            max_margin_frac=self.max_margin_frac, flip_prob=self.flip_prob,
            max_crop_frac=self.max_crop_frac, brightness=self.brightness, contrast=self.contrast,
        )

    # -- persistence

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        clean = {k: _coerce(v, types[k], k) for k, v in d.items()}
        return cls(**clean)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def replace(self, **changes) -> RunConfig:
        return RunConfig.from_dict({**self.to_dict(), **changes})


def _coerce(value, type_name: str, key: str):
    try:
        if type_name == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if type_name == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if type_name == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None
