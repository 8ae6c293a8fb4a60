"""Dense-tensor CNN engine: kernels, residual backbones, SGD, checkpoints."""

from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .functional import (batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
                         to_nchw, to_nhwc)
from .layers import BatchNorm2d, Conv2d, Param, ResidualBlock, Stem
from .model import (GRID_CELL, REFERENCE_PARAM_COUNTS, SIZE_PRESETS, Model, ModelConfig, backward,
                    build_model, forward)
from .optim import SGD, cosine_lr, sgd_step


def residual_block_forward(x, block: ResidualBlock, train=False):
    """N-C-H-W convenience wrapper around ``ResidualBlock.forward``."""
    return to_nchw(block.forward(to_nhwc(x), train))


__all__ = [
    "BatchNorm2d", "Conv2d", "GRID_CELL", "Model", "ModelConfig", "Param",
    "REFERENCE_PARAM_COUNTS", "ResidualBlock", "SGD", "SIZE_PRESETS", "Stem", "backward",
    "batchnorm_backward", "batchnorm_forward", "build_model", "conv2d_backward",
    "conv2d_forward", "cosine_lr", "decode_checkpoint", "encode_checkpoint", "forward",
    "load_checkpoint", "residual_block_forward", "save_checkpoint", "sgd_step",
]
