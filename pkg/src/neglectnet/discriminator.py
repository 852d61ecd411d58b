"""Conditional patch discriminator over (input, background) pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .config import ConfigError, NetConfig
from .generator import init_tensor
from .tensor import Tensor


@dataclass
class DiscriminatorParams:
    config: NetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def widths(self) -> list[int]:
        return [self.tensors[f"d{i}.w"].shape[0] for i in range(1, self.config.d_depth + 1)]


def build_discriminator(config: NetConfig, rng_seed: int = 0) -> DiscriminatorParams:
    tensors: dict[str, Tensor] = {}
    cin = 2 * config.in_channels
    for i in range(1, config.d_depth + 1):
        cout = config.width(i)
        tensors[f"d{i}.w"] = init_tensor(f"disc.d{i}.w", (cout, cin, 4, 4), rng_seed, "weight")
        tensors[f"d{i}.b"] = init_tensor(f"disc.d{i}.b", (cout,), rng_seed, "zero")
        tensors[f"d{i}.gamma"] = init_tensor(f"disc.d{i}.gamma", (cout,), rng_seed, "one")
        tensors[f"d{i}.beta"] = init_tensor(f"disc.d{i}.beta", (cout,), rng_seed, "zero")
        cin = cout
    tensors["head.w"] = init_tensor("disc.head.w", (1, cin, 1, 1), rng_seed, "weight")
    tensors["head.b"] = init_tensor("disc.head.b", (1,), rng_seed, "zero")
    return DiscriminatorParams(config, tensors)


def discriminator_patches(params: DiscriminatorParams, x: Tensor, y: Tensor) -> Tensor:
    """Per-patch realism scores, shape Bx1x(H/2**d)x(W/2**d)."""
    cfg = params.config
    if x.shape != y.shape:
        raise T.DimensionError(f"x and y must match: {x.shape} vs {y.shape}")
    h, w = x.shape[2:]
    step = 2 ** cfg.d_depth
    if h % step or w % step:
        raise ConfigError(f"{h}x{w} input not divisible by 2**{cfg.d_depth}")
    a = T.concat_channels(x, y)
    for i in range(1, cfg.d_depth + 1):
        a = T.conv2d(a, params[f"d{i}.w"], params[f"d{i}.b"], stride=2, padding=1)
        a = T.instance_norm(a, params[f"d{i}.gamma"], params[f"d{i}.beta"], cfg.norm_eps)
        a = T.leaky_relu(a, cfg.leaky_slope)
    return T.sigmoid(T.conv2d(a, params["head.w"], params["head.b"]))


def discriminator_forward(params: DiscriminatorParams, x: Tensor, y: Tensor) -> Tensor:
    """Mean patch score per batch item, shape (B,)."""
    return T.mean(discriminator_patches(params, x, y), axis=(1, 2, 3))
