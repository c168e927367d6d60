"""The light field encoding network.

A small residual CNN mapping n sub-aperture views (channel-concatenated)
to k displayable images: input conv + relu, a stack of residual blocks
(conv, relu, conv, skip add), an output conv, and a sigmoid that clamps
every displayed pixel into [0, 1]. Built entirely from the autodiff
operator vocabulary so the whole display pipeline stays differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeMismatch


@dataclass(frozen=True)
class EncoderConfig:
    n: int
    k: int
    channels: int = 64
    blocks: int = 10
    kernel: int = 3

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.blocks < 0 or self.channels < 1:
            raise ConfigError("encoder counts must be positive (blocks may be zero)")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel size must be odd")


@dataclass
class EncoderWeights:
    """Parameter arrays keyed by canonical names.

    Layout: ``w_in``/``b_in`` (3n -> C), per block ``block{i}_w1/b1/w2/b2``
    (C -> C), ``w_out``/``b_out`` (C -> 3k).
    """

    config: EncoderConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    init_seed: int = 0

    def names(self) -> list[str]:
        out = ["w_in", "b_in"]
        for i in range(self.config.blocks):
            out += [f"block{i}_w1", f"block{i}_b1", f"block{i}_w2", f"block{i}_b2"]
        out += ["w_out", "b_out"]
        return out


def init_weights(config: EncoderConfig, seed: int = 0) -> EncoderWeights:
    """He-style normal init (std = sqrt(2 / fan_in)) with zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    kk, c = config.kernel, config.channels

    def conv_init(cin, cout):
        fan_in = kk * kk * cin
        return rng.standard_normal((kk, kk, cin, cout)) * np.sqrt(2.0 / fan_in)

    arrays = {"w_in": conv_init(3 * config.n, c), "b_in": np.zeros(c)}
    for i in range(config.blocks):
        arrays[f"block{i}_w1"] = conv_init(c, c)
        arrays[f"block{i}_b1"] = np.zeros(c)
        arrays[f"block{i}_w2"] = conv_init(c, c)
        arrays[f"block{i}_b2"] = np.zeros(c)
    arrays["w_out"] = conv_init(c, 3 * config.k)
    arrays["b_out"] = np.zeros(3 * config.k)
    return EncoderWeights(config=config, arrays=arrays, init_seed=seed)


def encode(views, weights: EncoderWeights | dict, config: EncoderConfig | None = None) -> list[ad.Value]:
    """Run the network on n views, returning k image Values in (0, 1).

    ``views`` is a sequence of (H, W, 3) arrays or Values; ``weights``
    either an :class:`EncoderWeights` (treated as constants) or a dict of
    Values (for training). Spatial resolution is preserved.
    """
    if isinstance(weights, EncoderWeights):
        config = weights.config
        w = {k: ad.Value(v) for k, v in weights.arrays.items()}
    else:
        if config is None:
            raise ConfigError("config required when weights are raw Values")
        w = weights
    if len(views) != config.n:
        raise ShapeMismatch(f"expected {config.n} views, got {len(views)}")

    x = ad.concat_channels(list(views))
    if x.data.shape[-1] != 3 * config.n:
        raise ShapeMismatch("each view must have 3 channels")
    h = ad.relu(ad.conv_layer(x, w["w_in"], w["b_in"]))
    for i in range(config.blocks):
        inner = ad.conv_layer(ad.relu(ad.conv_layer(h, w[f"block{i}_w1"], w[f"block{i}_b1"])),
                              w[f"block{i}_w2"], w[f"block{i}_b2"])
        h = ad.add(h, inner)
    out = ad.sigmoid(ad.conv_layer(h, w["w_out"], w["b_out"]))
    return ad.split_channels(out, config.k)


def encode_images(views, weights: EncoderWeights) -> list[np.ndarray]:
    """Inference convenience: plain arrays out."""
    return [v.data for v in encode(views, weights)]
