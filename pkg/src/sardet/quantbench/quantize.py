"""BN folding, min/max calibration and the emulated int8 inference path.

Integer convolutions run through the float kernels on integer-valued
operands. That is exact as long as every partial sum stays below the
float mantissa limit, so each layer picks float32 when its worst-case
accumulator fits in 24 bits and float64 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError, StateError
from ..nncore import functional as F
from ..nncore.model import Model, ModelConfig
from .qparams import (QMAX, QMIN, QuantParams, asymmetric_params, fixed_point, quantize_weights,
                      round_half_away, rounding_shift, symmetric_params)

# activation points and their signedness: post-ReLU points use the full
# asymmetric range, signed ones a symmetric range
SYMMETRIC_POINTS = ("input", "h2", "sc")
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


# ------------------------------------------------------------------ BN folding

@dataclass
class FoldedConv:
    weight: np.ndarray  # (F, C, k, k) float32
    bias: np.ndarray    # (F,) float32
    stride: int = 1

    @property
    def padding(self):
        return self.weight.shape[2] // 2

    def __call__(self, x):
        return F.conv2d_forward_nhwc(x, self.weight, self.bias, self.stride, self.padding)[0]


def fold_conv_bn(conv, bn) -> FoldedConv:
    """w' = w * g / sqrt(v + eps), b' = beta - mean * g / sqrt(v + eps)."""
    g = bn.weight.data.astype(np.float64) / np.sqrt(bn.running_var.astype(np.float64) + F.BN_EPS)
    w = conv.weight.data.astype(np.float64) * g[:, None, None, None]
    b = bn.bias.data.astype(np.float64) - bn.running_mean.astype(np.float64) * g
    if conv.bias is not None:
        b += conv.bias.data.astype(np.float64) * g
    return FoldedConv(np.ascontiguousarray(w, dtype=np.float32), b.astype(np.float32), conv.stride)


@dataclass
class FoldedBlock:
    name: str
    conv1: FoldedConv
    conv2: FoldedConv
    shortcut: FoldedConv | None


class FoldedModel:
    """Float model with every BN absorbed into the preceding convolution."""

    def __init__(self, model: Model):
        if not model.stats_recorded():
            raise StateError("cannot fold batch norm before running statistics were recorded")
        self.config = model.config
        self.stem = fold_conv_bn(model.stem.conv, model.stem.bn)
        self.blocks = []
        for (name, _), block in zip([(n, c) for n, c in model.named_children()
                                     if n.startswith("layer")], model.blocks()):
            sc = None if block.shortcut is None else fold_conv_bn(block.shortcut.conv,
                                                                  block.shortcut.bn)
            self.blocks.append(FoldedBlock(name, fold_conv_bn(block.branch1.conv, block.branch1.bn),
                                           fold_conv_bn(block.branch2.conv, block.branch2.bn), sc))
        head = model.head
        self.head = FoldedConv(np.ascontiguousarray(head.weight.data, dtype=np.float32),
                               head.bias.data.astype(np.float32), head.stride)

    def forward_nhwc(self, x, record=None):
        def rec(name, a):
            if record is not None:
                lo, hi = float(a.min()), float(a.max())
                if name in record:
                    plo, phi = record[name]
                    lo, hi = min(lo, plo), max(hi, phi)
                record[name] = (lo, hi)

        rec("input", x)
        h = np.maximum(self.stem(x), 0)
        rec("stem", h)
        h = F.maxpool_forward_nhwc(h)[0]
        for b in self.blocks:
            h1 = np.maximum(b.conv1(h), 0)
            rec(f"{b.name}.h1", h1)
            h2 = b.conv2(h1)
            rec(f"{b.name}.h2", h2)
            if b.shortcut is not None:
                sc = b.shortcut(h)
                rec(f"{b.name}.sc", sc)
            else:
                sc = h
            h = np.maximum(h2 + sc, 0)
            rec(f"{b.name}.out", h)
        return self.head(h)

    def forward(self, batch):
        x = F.to_nhwc(np.asarray(batch, dtype=np.float32))
        return F.to_nchw(self.forward_nhwc(x))


def fold_bn(model: Model) -> FoldedModel:
    return FoldedModel(model)


# ------------------------------------------------------------------ calibration

@dataclass
class Calibration:
    ranges: dict   # point name -> (min, max) seen on the calibration set
    params: dict   # point name -> QuantParams

    def __getitem__(self, name):
        return self.params[name]


def _as_batch(crops):
    if isinstance(crops, np.ndarray):
        return crops.astype(np.float32, copy=False)
    return np.stack([c.image.channels() for c in crops]).astype(np.float32)


def params_for(name, lo, hi):
    if name.rsplit(".", 1)[-1] in SYMMETRIC_POINTS:
        return symmetric_params(max(abs(lo), abs(hi)), name)
    return asymmetric_params(lo, hi, name)


def calibrate(model, calibration_crops, batch_size=16) -> Calibration:
    """Min/max activation ranges over the calibration crops.

    ``model`` is a trained ``Model`` (or an already folded one);
    ``calibration_crops`` is an (N, 2, H, W) array or a list of LabeledCrop.
    """
    batch = _as_batch(calibration_crops) if len(calibration_crops) else None
    if batch is None or batch.shape[0] == 0:
        raise ParameterError("calibration needs at least one crop")
    folded = model if isinstance(model, FoldedModel) else FoldedModel(model)
    ranges = {}
    for i in range(0, batch.shape[0], batch_size):
        folded.forward_nhwc(F.to_nhwc(batch[i:i + batch_size]), ranges)
    return Calibration(ranges, {n: params_for(n, lo, hi) for n, (lo, hi) in ranges.items()})


# ------------------------------------------------------------------ integer model

@dataclass
class QConv:
    qweight: np.ndarray      # int8 (F, C, k, k)
    wparams: QuantParams     # per output channel
    qbias: np.ndarray        # int32 (F,), scale s_in * s_w
    stride: int
    in_params: QuantParams
    out_params: QuantParams | None = None  # None for the head (dequantized output)
    relu: bool = False
    _prepared: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._prepare()  # eagerly, so concurrent forwards never race on the cache

    @property
    def padding(self):
        return self.qweight.shape[2] // 2

    @property
    def acc_scale(self):
        return np.float64(self.in_params.scale32) * self.wparams.scale32.astype(np.float64)

    def _prepare(self):
        if self._prepared:
            return self._prepared
        taps = int(np.prod(self.qweight.shape[1:]))
        in_span = max(QMAX - int(self.in_params.zero_point), int(self.in_params.zero_point) - QMIN)
        bound = taps * in_span * 127
        dtype = np.float32 if bound < 2 ** 24 else np.float64
        p = {"dtype": dtype, "w": np.ascontiguousarray(self.qweight, dtype=dtype),
             "bias": self.qbias.astype(np.int64)}
        if self.out_params is not None:
            mult = [fixed_point(m) for m in self.acc_scale / np.float64(self.out_params.scale32)]
            p["m0"] = np.array([m for m, _ in mult], dtype=np.int64)
            p["n"] = np.array([n for _, n in mult], dtype=np.int64)
        self._prepared.update(p)
        return p

    def accumulate(self, q):
        """int64 accumulators (N, H, W, F) for int8 input ``q``."""
        p = self._prepare()
        x = q.astype(p["dtype"]) - p["dtype"](self.in_params.zero_point)
        y = F.conv2d_forward_nhwc(x, p["w"], None, self.stride, self.padding)[0]
        return np.rint(y).astype(np.int64) + p["bias"]

    def __call__(self, q):
        acc = self.accumulate(q)
        p = self._prepare()
        if self.out_params is None:
            return (acc.astype(np.float64) * self.acc_scale).astype(np.float32)
        zp = int(self.out_params.zero_point)
        return _requant_acc(acc, p["m0"], p["n"], zp, zp if self.relu else QMIN)


def _requant_acc(acc, m0, n, zp, lo):
    q = rounding_shift(acc * m0, n) + zp
    return np.clip(q, lo, QMAX).astype(np.int8)


def make_qconv(fc: FoldedConv, in_params, out_params=None, relu=False) -> QConv:
    qw, wp = quantize_weights(fc.weight)
    bscale = np.float64(in_params.scale32) * wp.scale32.astype(np.float64)
    qb = np.clip(round_half_away(fc.bias.astype(np.float64) / bscale), INT32_MIN, INT32_MAX)
    return QConv(qw, wp, qb.astype(np.int32), fc.stride, in_params, out_params, relu)


@dataclass
class QAdd:
    """ReLU(a + b) of two int8 tensors with one rounding: both operands are
    rescaled to the output by multipliers sharing a single shift."""

    a_params: QuantParams
    b_params: QuantParams
    out_params: QuantParams

    def __post_init__(self):
        sa, sb = float(self.a_params.scale32), float(self.b_params.scale32)
        so = float(self.out_params.scale32)
        ma, mb = sa / so, sb / so
        e = max(np.frexp(ma)[1], np.frexp(mb)[1])
        n = int(min(62, 31 - e))
        if n < 1:
            raise ParameterError("residual rescale multiplier too large")
        self.n = n
        self.ma = int(round(ma * 2.0 ** n))
        self.mb = int(round(mb * 2.0 ** n))

    def __call__(self, qa, qb):
        a = qa.astype(np.int64) - int(self.a_params.zero_point)
        b = qb.astype(np.int64) - int(self.b_params.zero_point)
        zp = int(self.out_params.zero_point)
        return _requant_acc(a * self.ma + b * self.mb, 1, self.n, zp, zp)


@dataclass
class QBlock:
    name: str
    conv1: QConv
    conv2: QConv
    shortcut: QConv | None
    add: QAdd


@dataclass
class QuantizedModel:
    config: ModelConfig
    input_params: QuantParams
    stem: QConv
    blocks: list
    head: QConv

    def convs(self):
        yield "stem", self.stem
        for b in self.blocks:
            yield f"{b.name}.conv1", b.conv1
            yield f"{b.name}.conv2", b.conv2
            if b.shortcut is not None:
                yield f"{b.name}.shortcut", b.shortcut
        yield "head", self.head

    def forward_nhwc(self, x):
        q = self.input_params.quantize(x)
        h = self.stem(q)
        # max-pool commutes with the monotone quantizer, so pool the codes
        h = F.maxpool_forward_nhwc(h.astype(np.float32))[0].astype(np.int8)
        for b in self.blocks:
            h1 = b.conv1(h)
            h2 = b.conv2(h1)
            sc = h if b.shortcut is None else b.shortcut(h)
            h = b.add(h2, sc)
        return self.head(h)

    def forward(self, batch):
        batch = np.asarray(batch, dtype=np.float32)
        c = self.config
        if batch.ndim != 4 or batch.shape[1:] != (2, c.crop, c.crop):
            raise ShapeError(f"expected input (N, 2, {c.crop}, {c.crop}), got {batch.shape}")
        return F.to_nchw(self.forward_nhwc(F.to_nhwc(batch)))


def build_quantized(config, folded_or_weights, act) -> QuantizedModel:
    """Assemble a QuantizedModel from a FoldedModel and activation params."""
    fm = folded_or_weights
    a = act.params if isinstance(act, Calibration) else act
    stem = make_qconv(fm.stem, a["input"], a["stem"], relu=True)
    blocks = []
    prev = a["stem"]
    for b in fm.blocks:
        p = b.name
        c1 = make_qconv(b.conv1, prev, a[f"{p}.h1"], relu=True)
        c2 = make_qconv(b.conv2, a[f"{p}.h1"], a[f"{p}.h2"])
        if b.shortcut is not None:
            sc = make_qconv(b.shortcut, prev, a[f"{p}.sc"])
            sc_params = a[f"{p}.sc"]
        else:
            sc, sc_params = None, prev
        blocks.append(QBlock(p, c1, c2, sc, QAdd(a[f"{p}.h2"], sc_params, a[f"{p}.out"])))
        prev = a[f"{p}.out"]
    head = make_qconv(fm.head, prev)
    return QuantizedModel(config, a["input"], stem, blocks, head)


def quantize(model: Model, act_params) -> QuantizedModel:
    """Fold BN, quantize weights per output channel and wire in the
    calibrated activation parameters."""
    return build_quantized(model.config, FoldedModel(model), act_params)


def quantized_forward(qmodel: QuantizedModel, batch):
    return qmodel.forward(batch)


def logit_deviation(model: Model, qmodel: QuantizedModel, batch):
    """Mean absolute difference between float and int8 logits."""
    ref = model.forward(batch, "eval").astype(np.float64)
    out = qmodel.forward(batch).astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise StateError("quantized logits contain NaN or Inf")
    return float(np.mean(np.abs(ref - out)))
