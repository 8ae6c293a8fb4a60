from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError


class Domain(enum.IntEnum):
    RAW = 0
    RAW_SHIFTED = 1
    RANGE_COMPRESSED = 2
    FOCUSED_LABEL_SPACE = 3


class TargetClass(enum.IntEnum):
    SHIP = 0
    WINDMILL = 1

    @classmethod
    def parse(cls, value) -> "TargetClass":
        if isinstance(value, TargetClass):
            return value
        if isinstance(value, str):
            text = value.strip()
            if text.isdigit():
                return cls(int(text))
            try:
                return cls[text.upper()]
            except KeyError:
                raise ParameterError(f"unknown target class {value!r}") from None
        return cls(int(value))

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass
class ComplexImage:
    """Complex raster, rows = azimuth lines, columns = range samples."""

    data: np.ndarray
    domain: Domain = Domain.RAW

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ParameterError(f"ComplexImage needs 2-D data, got shape {self.data.shape}")
        if self.data.dtype != np.complex64:
            self.data = self.data.astype(np.complex64)
        self.domain = Domain(self.domain)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channels(self) -> np.ndarray:
        """(2, H, W) float32 stack of real and imaginary parts."""
        return np.stack([self.data.real, self.data.imag]).astype(np.float32)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.data.astype(np.complex128)) ** 2))


@dataclass(frozen=True)
class TargetSpec:
    range_px: int
    azimuth_px: int
    amplitude: float = 1.0
    cls: TargetClass = TargetClass.SHIP

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ParameterError(f"target amplitude must be > 0, got {self.amplitude}")
        object.__setattr__(self, "cls", TargetClass.parse(self.cls))


@dataclass
class SceneSpec:
    height: int
    width: int
    targets: list = field(default_factory=list)
    noise_sigma: float = 0.0
    clutter_sigma: float = 0.0
    azimuth_extent: int = 1
    rng_seed: int = 0
    # optional high-clutter column band standing in for near-shore water
    shore_band: tuple | None = None
    shore_clutter_gain: float = 4.0

    def validate(self, min_size: int = 1):
        if self.height < min_size or self.width < min_size:
            raise ParameterError(
                f"scene {self.height}x{self.width} smaller than minimum {min_size}")
        if self.noise_sigma < 0 or self.clutter_sigma < 0:
            raise ParameterError("noise_sigma and clutter_sigma must be >= 0")
        if self.azimuth_extent < 1:
            raise ParameterError("azimuth_extent must be >= 1")
        for t in self.targets:
            if not (0 <= t.range_px < self.width and 0 <= t.azimuth_px < self.height):
                raise ParameterError(
                    f"target at range {t.range_px}, azimuth {t.azimuth_px} "
                    f"outside {self.height}x{self.width} scene")


@dataclass(frozen=True)
class Label:
    """Ground-truth position in label space; x = range column, y = azimuth row."""

    x: float
    y: float
    cls: int = 0
    amplitude: float = math.nan
    truncated: bool = False
    near_shore: bool = False

    def moved(self, dx: float, dy: float) -> "Label":
        return Label(self.x + dx, self.y + dy, self.cls, self.amplitude,
                     self.truncated, self.near_shore)


@dataclass
class LabeledCrop:
    image: ComplexImage
    labels: list
    origin: tuple = (0, 0)
    scene_id: int = -1
    n_classes: int = 0

    @property
    def crop(self) -> int:
        return self.image.height
