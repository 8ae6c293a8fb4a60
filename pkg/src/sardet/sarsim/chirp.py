"""LFM chirp generation, matched-filter range compression and the
half-chirp range shift applied to raw Stripmap echoes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from ..errors import ParameterError, StateError
from .types import ComplexImage, Domain


@dataclass(frozen=True)
class ChirpParams:
    """Linear-FM transmit pulse.

    Attributes
    ----------
    sample_rate : float
        Range sampling rate in Hz.
    chirp_rate : float
        FM rate K in Hz/s; sign selects up- or down-chirp.
    duration : float
        Pulse length T in seconds.
    """

    sample_rate: float
    chirp_rate: float
    duration: float

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ParameterError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not self.duration > 0:
            raise ParameterError(f"duration must be > 0, got {self.duration}")
        if self.length_samples < 1:
            raise ParameterError(
                f"duration*sample_rate rounds to {self.length_samples} samples; need >= 1")
        # small slack so from_samples(bandwidth_fraction=1.0) is accepted
        if abs(self.chirp_rate) * self.duration > self.sample_rate * (1 + 1e-12):
            raise ParameterError(
                f"swept bandwidth |K|*T = {abs(self.chirp_rate) * self.duration:g} Hz "
                f"exceeds sample_rate {self.sample_rate:g} Hz")

    @property
    def length_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def half_length(self) -> int:
        return self.length_samples // 2

    @classmethod
    def from_samples(cls, length: int, sample_rate: float = 1.0e8,
                     bandwidth_fraction: float = 0.8) -> "ChirpParams":
        """Chirp of ``length`` samples sweeping ``bandwidth_fraction`` of the
        sampling bandwidth."""
        if length < 1:
            raise ParameterError(f"chirp length must be >= 1, got {length}")
        if not 0 <= bandwidth_fraction <= 1:
            raise ParameterError("bandwidth_fraction must lie in [0, 1]")
        duration = length / sample_rate
        return cls(sample_rate, bandwidth_fraction * sample_rate / duration, duration)


def generate_chirp(params: ChirpParams) -> np.ndarray:
    """Unit-magnitude baseband LFM pulse ``exp(j*pi*K*t**2)``.

    The time axis is centred on the pulse, ``t_n = (n - L/2) / fs``.
    Returned as complex128 with length ``params.length_samples``.
    """
    n = np.arange(params.length_samples, dtype=np.float64)
    t = (n - params.length_samples / 2.0) / params.sample_rate
    return np.exp(1j * np.pi * params.chirp_rate * t * t)


def _filter_spectrum(chirp: np.ndarray, nfft: int) -> np.ndarray:
    return np.conj(sp_fft.fft(chirp, nfft))


def matched_filter_rows(data: np.ndarray, chirp: np.ndarray) -> np.ndarray:
    """Correlate every row of ``data`` with ``chirp``.

    ``out[:, b] = sum_n data[:, b + n] * conj(chirp[n])``, with samples past the
    right edge treated as zero. An echo whose first sample is at bin ``r``
    therefore peaks exactly at ``r``. Computed with a zero-padded FFT long
    enough that no circular wraparound reaches the retained bins.
    """
    width = data.shape[-1]
    length = chirp.shape[0]
    nfft = sp_fft.next_fast_len(width + length - 1)
    spec = sp_fft.fft(data.astype(np.complex128, copy=False), nfft, axis=-1)
    spec *= _filter_spectrum(chirp, nfft)
    return sp_fft.ifft(spec, axis=-1)[..., :width]


def range_compress(img: ComplexImage, chirp: ChirpParams) -> ComplexImage:
    """Matched-filter every azimuth line of a raw image.

    Output has the same size as the input; the compressed peak of a point
    echo lands on its label-space range coordinate (the echo start bin).
    """
    if img.domain is not Domain.RAW:
        raise StateError(f"range_compress needs a raw image, got {img.domain.name.lower()}")
    out = matched_filter_rows(img.data, generate_chirp(chirp))
    return ComplexImage(out.astype(np.complex64), Domain.RANGE_COMPRESSED)


def half_chirp_shift(img: ComplexImage, chirp: ChirpParams) -> ComplexImage:
    """Advance every raw line by ``floor(L/2)`` range bins.

    Content moves toward lower indices; the vacated tail is zero-filled and
    the leading ``floor(L/2)`` bins are discarded. After the shift a point
    echo's energy is centred on its label-space range coordinate.
    """
    if img.domain is not Domain.RAW:
        raise StateError(f"half_chirp_shift needs a raw image, got {img.domain.name.lower()}")
    shift = chirp.half_length
    if shift >= img.width:
        raise ParameterError(f"half chirp length {shift} >= image width {img.width}")
    out = np.zeros_like(img.data)
    out[:, :img.width - shift] = img.data[:, shift:]
    return ComplexImage(out, Domain.RAW_SHIFTED)


def energy_centroid(row_energy: np.ndarray) -> float:
    """Energy-weighted mean bin index of a 1-D energy profile."""
    total = float(row_energy.sum())
    if total == 0.0:
        return math.nan
    return float(np.dot(np.arange(row_energy.shape[0]), row_energy) / total)
