"""S/M/L residual backbones with a single-scale grid head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError
from . import functional as F
from .layers import Conv2d, Module, ResidualBlock, Stem

GRID_CELL = 32
IN_CHANNELS = 2
LAYER_STRIDES = (1, 2, 2, 2)

SIZE_PRESETS = {
    "S": ((1, 2, 2, 1), (16, 16, 32, 32)),
    "M": ((3, 4, 6, 3), (64, 64, 64, 64)),
    "L": ((2, 2, 2, 2), (64, 128, 256, 512)),
}
# parameter counts printed in the reference table for each preset
REFERENCE_PARAM_COUNTS = {"S": 96800, "M": 1222368, "L": 11222880}


@dataclass
class ModelConfig:
    size_tag: str = "S"
    blocks_per_layer: tuple = field(default=None)
    channels_per_layer: tuple = field(default=None)
    n_classes: int = 0
    crop: int = 128
    stem_channels: int = 64

    def __post_init__(self):
        tag = self.size_tag.upper()
        self.size_tag = tag
        if tag in SIZE_PRESETS:
            blocks, chans = SIZE_PRESETS[tag]
            if self.blocks_per_layer is None:
                self.blocks_per_layer = blocks
            if self.channels_per_layer is None:
                self.channels_per_layer = chans
            if tuple(self.blocks_per_layer) != blocks or tuple(self.channels_per_layer) != chans:
                raise ParameterError(f"size {tag} is fixed to blocks {blocks}, channels {chans}")
            if self.stem_channels != 64:
                raise ParameterError("standard sizes use a 64-kernel stem")
        elif tag != "CUSTOM":
            raise ParameterError(f"size_tag must be S, M, L or custom, got {self.size_tag!r}")
        elif self.blocks_per_layer is None or self.channels_per_layer is None:
            raise ParameterError("custom configs need explicit blocks and channels")
        self.blocks_per_layer = tuple(int(b) for b in self.blocks_per_layer)
        self.channels_per_layer = tuple(int(c) for c in self.channels_per_layer)
        if len(self.blocks_per_layer) != 4 or len(self.channels_per_layer) != 4:
            raise ParameterError("need exactly four layers")
        if min(self.blocks_per_layer) < 1 or min(self.channels_per_layer) < 1:
            raise ParameterError("blocks and channels must be >= 1")
        if self.n_classes not in (0, 2):
            raise ParameterError(f"n_classes must be 0 or 2, got {self.n_classes}")
        if tag != "CUSTOM" and (self.crop <= 0 or self.crop % GRID_CELL):
            raise ParameterError(f"crop must be a positive multiple of {GRID_CELL}, got {self.crop}")

    @property
    def grid(self) -> int:
        return max(self.crop // GRID_CELL, 1)

    @property
    def out_channels(self) -> int:
        return 3 + self.n_classes

    @classmethod
    def micro(cls, crop=16, channels=4, n_classes=0):
        return cls("custom", (1, 1, 1, 1), (channels,) * 4, n_classes, crop, channels)


class Model(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.stem = Stem(IN_CHANNELS, config.stem_channels, rng=rng)
        self.layers = []
        c_in = config.stem_channels
        for blocks, c_out, stride in zip(config.blocks_per_layer,
                                         config.channels_per_layer, LAYER_STRIDES):
            layer = []
            for b in range(blocks):
                layer.append(ResidualBlock(c_in, c_out, stride if b == 0 else 1, rng=rng))
                c_in = c_out
            self.layers.append(layer)
        self.head = Conv2d(c_in, config.out_channels, 1, bias=True, rng=rng)

    def named_children(self):
        kids = [("stem", self.stem)]
        for li, layer in enumerate(self.layers, 1):
            for bi, block in enumerate(layer):
                kids.append((f"layer{li}.{bi}", block))
        kids.append(("head", self.head))
        return kids

    def blocks(self):
        for layer in self.layers:
            yield from layer

    # -- tensors -------------------------------------------------------------
    def params(self):
        return dict(self.named_params())

    def buffers(self):
        return dict(self.named_buffers())

    def state(self):
        """Ordered name -> array for every parameter and buffer."""
        out = {name: p.data for name, p in self.named_params()}
        out.update(self.named_buffers())
        return out

    def param_count(self) -> int:
        return int(sum(p.data.size for _, p in self.named_params()))

    def stats_recorded(self) -> bool:
        return all(b[0] > 0 for n, b in self.named_buffers() if n.endswith("num_batches_tracked"))

    def astype(self, dtype):
        """Cast every parameter and buffer in place; returns self."""
        for _, p in self.named_params():
            p.data = p.data.astype(dtype)
        for mod in self.modules():
            for name in mod.own_buffers():
                setattr(mod, name, getattr(mod, name).astype(dtype))
        return self

    # -- compute ---------------------------------------------------------------
    def check_input(self, x):
        c = self.config
        if x.ndim != 4 or x.shape[1] != IN_CHANNELS or x.shape[2] != c.crop or x.shape[3] != c.crop:
            raise ShapeError(f"expected input (N, {IN_CHANNELS}, {c.crop}, {c.crop}), got {x.shape}")

    def forward_nhwc(self, x, train=False):
        h = self.stem.forward(x, train)
        for block in self.blocks():
            h = block.forward(h, train)
        return self.head.forward(h, train)

    def features_nhwc(self, x):
        h = self.stem.forward(x, False)
        for block in self.blocks():
            h = block.forward(h, False)
        return h

    def forward(self, batch, mode="eval"):
        """Grid logits (N, 3 + n_classes, S, S) for an (N, 2, crop, crop) batch."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        batch = np.asarray(batch)
        self.check_input(batch)
        dtype = self.head.weight.data.dtype
        x = F.to_nhwc(batch.astype(dtype, copy=False))
        return F.to_nchw(self.forward_nhwc(x, mode == "train"))

    def backward(self, dlogits):
        """Back-propagate (N, C, S, S) logit gradients through the last
        train-mode forward; returns name -> gradient."""
        dh = self.head.backward(F.to_nhwc(dlogits))
        for block in reversed(list(self.blocks())):
            dh = block.backward(dh)
        self.stem.backward(dh)
        return {name: p.grad for name, p in self.named_params()}


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    if config.size_tag != "CUSTOM" and config.crop % GRID_CELL:
        raise ParameterError(f"crop must be a multiple of {GRID_CELL}, got {config.crop}")
    return Model(config, seed)


def forward(model: Model, batch, mode="eval"):
    return model.forward(batch, mode)


def backward(model: Model, loss_grad):
    return model.backward(loss_grad)
