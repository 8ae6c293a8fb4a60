"""Affine int8 quantization parameters and fixed-point requantization.

All rounding is half-away-from-zero so results do not depend on the
floating-point rounding mode of the host.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError

QMIN, QMAX = -128, 127
SCALE_FLOOR = 1e-8
BITS = 8


def round_half_away(x):
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor (activation) or per-output-channel (weight) parameters.

    ``scale`` and ``zero_point`` are scalars for per-tensor parameters and
    1-D arrays for per-channel ones.
    """

    scale: object
    zero_point: object = 0
    granularity: str = "tensor"
    bits: int = BITS

    def __post_init__(self):
        if self.granularity not in ("tensor", "channel"):
            raise ParameterError(f"granularity must be 'tensor' or 'channel', got "
                                 f"{self.granularity!r}")
        if np.any(np.asarray(self.scale) <= 0):
            raise ParameterError("quantization scale must be > 0")
        zp = np.asarray(self.zero_point)
        if np.any(zp < QMIN) or np.any(zp > QMAX):
            raise ParameterError(f"zero point must lie in [{QMIN}, {QMAX}]")

    @property
    def scale32(self):
        return np.float32(self.scale) if self.granularity == "tensor" else \
            np.asarray(self.scale, dtype=np.float32)

    def quantize(self, x):
        q = round_half_away(np.asarray(x, dtype=np.float64) / np.float64(self.scale32)) \
            + self.zero_point
        return np.clip(q, QMIN, QMAX).astype(np.int8)

    def dequantize(self, q):
        return ((np.asarray(q, dtype=np.float64) - self.zero_point)
                * np.float64(self.scale32)).astype(np.float32)

    @property
    def representable(self):
        """(low, high) real range covered without clamping."""
        s = float(self.scale32)
        return (QMIN - int(self.zero_point)) * s, (QMAX - int(self.zero_point)) * s


def _floored(scale, what):
    if scale < SCALE_FLOOR:
        warnings.warn(f"{what}: degenerate range, scale floored to {SCALE_FLOOR:g}", stacklevel=3)
        return SCALE_FLOOR
    return scale


def _f32_up(x):
    # stored scales are f32; round up so the calibrated range stays covered
    s = np.float32(x)
    return float(np.nextafter(s, np.float32(np.inf)) if s < x else s)


def symmetric_params(max_abs, what="activation") -> QuantParams:
    """Signed range [-m, m]; 255 steps span 2m."""
    return QuantParams(_f32_up(_floored(2.0 * float(max_abs) / 255.0, what)), 0)


def asymmetric_params(lo, hi, what="activation") -> QuantParams:
    """Range [lo, hi] (lo forced <= 0 so real zero stays exact)."""
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    scale = _f32_up(_floored((hi - lo) / 255.0, what))
    zp = int(np.clip(QMIN - round_half_away(lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def weight_params(w) -> QuantParams:
    """Per-output-channel symmetric weights on [-127, 127]."""
    w = np.asarray(w, dtype=np.float32)
    max_abs = np.abs(w.reshape(w.shape[0], -1)).max(axis=1).astype(np.float64)
    scale = max_abs / 127.0
    if np.any(scale < SCALE_FLOOR):
        warnings.warn("weight channel with zero range, scale floored", stacklevel=2)
    scale = np.maximum(scale, SCALE_FLOOR).astype(np.float32)
    return QuantParams(scale, np.zeros(w.shape[0], dtype=np.int32), "channel")


def quantize_weights(w):
    params = weight_params(w)
    s = params.scale32.astype(np.float64).reshape((-1,) + (1,) * (np.ndim(w) - 1))
    q = np.clip(round_half_away(np.asarray(w, dtype=np.float64) / s), -127, 127)
    return q.astype(np.int8), params


# ------------------------------------------------------------ fixed-point requantization

def fixed_point(m: float):
    """Return (M0, n) with m ~= M0 / 2**n and M0 in [2**30, 2**31)."""
    if m <= 0:
        raise ParameterError(f"requantization multiplier must be > 0, got {m}")
    f, e = math.frexp(m)
    m0 = int(round(f * (1 << 31)))
    if m0 == 1 << 31:
        m0 //= 2
        e += 1
    n = 31 - e
    if n > 62:  # multiplier far below any representable step: output is zero
        return 0, 1
    if n < 1:
        raise ParameterError(f"requantization multiplier {m} too large")
    return m0, n


def rounding_shift(prod, n):
    """Round-half-away-from-zero of ``prod / 2**n`` on int64 arrays."""
    n = np.asarray(n, dtype=np.int64)
    half = np.int64(1) << (n - 1)
    mag = (np.abs(prod) + half) >> n
    return np.where(prod < 0, -mag, mag)


def requantize(acc, m0, n, zero_point, lo=QMIN, hi=QMAX):
    """int8 output from int64 accumulators and per-channel (M0, n)."""
    prod = np.asarray(acc, dtype=np.int64) * np.asarray(m0, dtype=np.int64)
    q = rounding_shift(prod, np.asarray(n, dtype=np.int64)) + zero_point
    return np.clip(q, lo, hi).astype(np.int8)
