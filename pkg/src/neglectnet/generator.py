"""Two-branch encoder-decoder generator with neglect nodes.

Layer ``i`` of every branch works at scale ``H / 2**i`` on its input side.
The segmentation decoder (``seg``) mirrors the encoder with skip
connections; the infilling decoder (``fill``) receives encoder features only
after a neglect node has gated them with a 1-channel mask computed from the
same input as the matching ``seg`` layer.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import NetConfig
from .tensor import Tensor

INIT_STD = 0.02


def init_tensor(name: str, shape: tuple[int, ...], seed: int, kind: str) -> Tensor:
    """Deterministic initial value; the stream depends only on (seed, name)."""
    if kind == "weight":
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        data = rng.normal(0.0, INIT_STD, size=shape)
    elif kind == "one":
        data = np.ones(shape)
    else:
        data = np.zeros(shape)
    return T.parameter(data.astype(np.float32), name=name)


@dataclass
class GeneratorParams:
    config: NetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def encoder_widths(self) -> list[int]:
        return [self.tensors[f"enc{i}.w"].shape[0] for i in range(1, self.config.depth + 1)]


@dataclass
class GeneratorOutput:
    y_p: Tensor
    z_p: Tensor | None = None
    neglect_masks: list[Tensor] = field(default_factory=list)


def layer_specs(config: NetConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """Name -> (shape, init kind) for every learnable tensor of the generator."""
    specs: dict[str, tuple[tuple[int, ...], str]] = {}
    d = config.depth

    def norm(prefix, c):
        specs[f"{prefix}.gamma"] = ((c,), "one")
        specs[f"{prefix}.beta"] = ((c,), "zero")

    for i in range(1, d + 1):
        cin = config.in_channels if i == 1 else config.width(i - 1)
        cout = config.width(i)
        specs[f"enc{i}.w"] = ((cout, cin, 4, 4), "weight")
        specs[f"enc{i}.b"] = ((cout,), "zero")
        if i > 1 or config.norm_first_layer:
            norm(f"enc{i}", cout)

    def dec_in(i):
        return config.width(d) if i == d else 2 * config.width(i)

    if config.use_neglect_branch:
        for i in range(d, 0, -1):
            cout = 1 if i == 1 else config.width(i - 1)
            specs[f"seg{i}.w"] = ((dec_in(i), cout, 4, 4), "weight")
            specs[f"seg{i}.b"] = ((cout,), "zero")
            if i > 1:
                norm(f"seg{i}", cout)
        for i in range(d, 0, -1):
            specs[f"neg{i}.w"] = ((1, dec_in(i), 1, 1), "weight")
            specs[f"neg{i}.b"] = ((1,), "zero")

    for i in range(d, 0, -1):
        cout = 3 if i == 1 else config.width(i - 1)
        if config.upsample_mode == "nn_conv":
            specs[f"fill{i}.w"] = ((cout, dec_in(i), 3, 3), "weight")
        else:
            specs[f"fill{i}.w"] = ((dec_in(i), cout, 4, 4), "weight")
        specs[f"fill{i}.b"] = ((cout,), "zero")
        if i > 1:
            norm(f"fill{i}", cout)
    return specs


def build_generator(config: NetConfig, rng_seed: int = 0) -> GeneratorParams:
    tensors = {name: init_tensor(name, shape, rng_seed, kind)
               for name, (shape, kind) in layer_specs(config).items()}
    return GeneratorParams(config, tensors)


def _norm(params, prefix: str, h: Tensor) -> Tensor:
    return T.instance_norm(h, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], params.config.norm_eps)


def encoder_forward(params: GeneratorParams, x: Tensor) -> list[Tensor]:
    cfg = params.config
    if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != (cfg.image_h, cfg.image_w):
        raise T.DimensionError(
            f"expected Bx{cfg.in_channels}x{cfg.image_h}x{cfg.image_w} input, got {x.shape}")
    feats = []
    h = x
    for i in range(1, cfg.depth + 1):
        h = T.conv2d(h, params[f"enc{i}.w"], params[f"enc{i}.b"], stride=2, padding=1)
        if f"enc{i}.gamma" in params:
            h = _norm(params, f"enc{i}", h)
        h = T.leaky_relu(h, cfg.leaky_slope)
        feats.append(h)
    return feats


def _seg_input(i: int, feats: list[Tensor], seg_hidden: dict[int, Tensor]) -> Tensor:
    e_i = feats[i - 1]
    if i == len(feats):
        return e_i
    return T.concat_channels(seg_hidden[i + 1], e_i)


def dec_seg_forward(params: GeneratorParams, feats: list[Tensor]) -> tuple[Tensor, dict[int, Tensor]]:
    """Returns the mask prediction and every seg layer's output keyed by layer index."""
    hidden: dict[int, Tensor] = {}
    for i in range(len(feats), 0, -1):
        h = T.conv_transpose2d(_seg_input(i, feats, hidden), params[f"seg{i}.w"], params[f"seg{i}.b"],
                               stride=2, padding=1)
        if i > 1:
            h = T.relu(_norm(params, f"seg{i}", h))
        hidden[i] = h
    return T.sigmoid(hidden[1]), hidden


def neglect_node(params: GeneratorParams, i: int, e_i: Tensor, seg_above: Tensor | None,
                 force: float | None = None) -> tuple[Tensor, Tensor]:
    """Gate encoder feature ``e_i``; returns (mask, gated feature).

    ``force`` replaces the learned mask by a constant, for ablation checks.
    """
    node_in = e_i if seg_above is None else T.concat_channels(seg_above, e_i)
    if force is None:
        mask = T.sigmoid(T.conv2d(node_in, params[f"neg{i}.w"], params[f"neg{i}.b"]))
    else:
        b, _, h, w = e_i.shape
        mask = Tensor(np.full((b, 1, h, w), force))
    return mask, T.mul(e_i, mask)


def _fill_stage(params: GeneratorParams, i: int, h: Tensor) -> Tensor:
    w, b = params[f"fill{i}.w"], params[f"fill{i}.b"]
    if params.config.upsample_mode == "nn_conv":
        return T.conv2d(T.upsample_nearest(h, 2), w, b, stride=1, padding=1)
    return T.conv_transpose2d(h, w, b, stride=2, padding=1)


def dec_fill_forward(params: GeneratorParams, feats: list[Tensor], seg_hidden: dict[int, Tensor] | None,
                     force_mask: float | None = None,
                     trace: dict[int, Tensor] | None = None) -> tuple[Tensor, list[Tensor]]:
    """Returns the background prediction and the neglect masks ordered finest first.

    ``seg_hidden=None`` runs the baseline: raw encoder skips, no gating.  When
    ``trace`` is given it receives each fill layer's input tensor.
    """
    d = len(feats)
    masks: dict[int, Tensor] = {}
    h: Tensor | None = None
    for i in range(d, 0, -1):
        e_i = feats[i - 1]
        if seg_hidden is None:
            skip = e_i
        else:
            seg_above = seg_hidden.get(i + 1) if i < d else None
            masks[i], skip = neglect_node(params, i, e_i, seg_above, force_mask)
        layer_in = skip if h is None else T.concat_channels(h, skip)
        if trace is not None:
            trace[i] = layer_in
        h = _fill_stage(params, i, layer_in)
        if i > 1:
            h = T.relu(_norm(params, f"fill{i}", h))
    return T.tanh(h), [masks[i] for i in sorted(masks)]


def generator_forward(params: GeneratorParams, x: Tensor, force_mask: float | None = None,
                      trace: dict[int, Tensor] | None = None) -> GeneratorOutput:
    feats = encoder_forward(params, x)
    if not params.config.use_neglect_branch:
        y_p, _ = dec_fill_forward(params, feats, None, trace=trace)
        return GeneratorOutput(y_p=y_p)
    z_p, hidden = dec_seg_forward(params, feats)
    y_p, masks = dec_fill_forward(params, feats, hidden, force_mask, trace)
    return GeneratorOutput(y_p=y_p, z_p=z_p, neglect_masks=masks)
