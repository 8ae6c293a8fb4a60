from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import functional as F


class Param:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = data
        self.grad = None


class Module:
    """Tiny module protocol: forward caches what backward needs when
    ``train`` is set; eval-mode forward leaves the module untouched."""

    def named_children(self):
        return []

    def own_params(self):
        return {}

    def own_buffers(self):
        return {}

    def named_params(self, prefix=""):
        for name, p in self.own_params().items():
            yield prefix + name, p
        for cname, child in self.named_children():
            yield from child.named_params(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, b in self.own_buffers().items():
            yield prefix + name, b
        for cname, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self):
        yield self
        for _, child in self.named_children():
            yield from child.modules()


def he_uniform(rng, shape, dtype=np.float32):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, stride=1, bias=False, rng=None):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = k // 2
        self.weight = Param(he_uniform(rng, (c_out, c_in, k, k)))
        self.bias = Param(np.zeros(c_out, dtype=np.float32)) if bias else None
        self.need_input_grad = True
        self._cache = None

    def own_params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x, train):
        b = None if self.bias is None else self.bias.data
        y, cache = F.conv2d_forward_nhwc(x, self.weight.data, b, self.stride, self.padding)
        self._cache = cache if train else None
        return y

    def backward(self, dy):
        dx, dw, db = F.conv2d_backward_nhwc(dy, self._cache, self.need_input_grad)
        self._cache = None
        self.weight.grad = dw
        if self.bias is not None:
            self.bias.grad = db
        return dx


class BatchNorm2d(Module):
    def __init__(self, c, gamma=1.0):
        self.weight = Param(np.full(c, gamma, dtype=np.float32))
        self.bias = Param(np.zeros(c, dtype=np.float32))
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)
        self.num_batches_tracked = np.zeros(1, dtype=np.float32)
        self._cache = None

    def own_params(self):
        return {"weight": self.weight, "bias": self.bias}

    def own_buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "num_batches_tracked": self.num_batches_tracked}

    @property
    def tracked(self):
        return bool(self.num_batches_tracked[0] > 0)

    def forward(self, x, train):
        y, cache = F.batchnorm_forward_nhwc(x, self.weight.data, self.bias.data,
                                            self.running_mean, self.running_var,
                                            train, self.tracked)
        if train:
            self.num_batches_tracked += 1
            self._cache = cache
        return y

    def backward(self, dy):
        dx, dg, db = F.batchnorm_backward_nhwc(dy, self._cache)
        self._cache = None
        self.weight.grad, self.bias.grad = dg, db
        return dx


class ConvBN(Module):
    """Bias-free convolution followed by batch norm."""

    def __init__(self, c_in, c_out, k, stride=1, gamma=1.0, rng=None):
        self.conv = Conv2d(c_in, c_out, k, stride, rng=rng)
        self.bn = BatchNorm2d(c_out, gamma)

    def named_children(self):
        return [("conv", self.conv), ("bn", self.bn)]

    def forward(self, x, train):
        return self.bn.forward(self.conv.forward(x, train), train)

    def backward(self, dy):
        return self.conv.backward(self.bn.backward(dy))


class Stem(Module):
    """7x7 stride-2 convolution, BN, ReLU, 3x3 stride-2 max-pool."""

    def __init__(self, c_in, c_out, rng=None):
        self.conv = Conv2d(c_in, c_out, 7, 2, rng=rng)
        self.conv.need_input_grad = False
        self.bn = BatchNorm2d(c_out)
        self._relu = self._pool = None

    def named_children(self):
        return [("conv", self.conv), ("bn", self.bn)]

    def forward(self, x, train):
        h = self.bn.forward(self.conv.forward(x, train), train)
        h, relu = F.relu_forward(h)
        y, pool = F.maxpool_forward_nhwc(h)
        if train:
            self._relu, self._pool = relu, pool
        return y

    def backward(self, dy):
        dh = F.maxpool_backward_nhwc(dy, self._pool)
        dh = F.relu_backward(dh, self._relu)
        self._relu = self._pool = None
        return self.conv.backward(self.bn.backward(dh))


class ResidualBlock(Module):
    """out = ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x)).

    The shortcut is a 1x1 convolution + BN when the stride or the channel
    count changes, identity otherwise. ``zero_init`` sets the second BN's
    scale to zero so a fresh block passes ReLU(x) through.
    """

    def __init__(self, c_in, c_out, stride=1, zero_init=True, rng=None):
        self.stride = stride
        self.c_in, self.c_out = c_in, c_out
        self.branch1 = ConvBN(c_in, c_out, 3, stride, rng=rng)
        self.branch2 = ConvBN(c_out, c_out, 3, 1, gamma=0.0 if zero_init else 1.0, rng=rng)
        self.shortcut = ConvBN(c_in, c_out, 1, stride, rng=rng) if (
            stride != 1 or c_in != c_out) else None
        self._mid = self._out = None

    def named_children(self):
        kids = [("conv1", self.branch1.conv), ("bn1", self.branch1.bn),
                ("conv2", self.branch2.conv), ("bn2", self.branch2.bn)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        return kids

    def forward(self, x, train):
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"residual block expects {self.c_in} channels, got input {x.shape}")
        h, mid = F.relu_forward(self.branch1.forward(x, train))
        h = self.branch2.forward(h, train)
        sc = x if self.shortcut is None else self.shortcut.forward(x, train)
        h += sc
        y, out = F.relu_forward(h)
        if train:
            self._mid, self._out = mid, out
        return y

    def backward(self, dy):
        dh = F.relu_backward(dy, self._out)
        dmid = F.relu_backward(self.branch2.backward(dh), self._mid)
        dx = self.branch1.backward(dmid)
        dx += dh if self.shortcut is None else self.shortcut.backward(dh)
        self._mid = self._out = None
        return dx
