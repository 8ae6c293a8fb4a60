"""Experiment configuration files.

Plain text, ``key = value`` per line, ``#`` comments, ``[section]``
headers. Every key is optional; missing keys take the defaults below.
Parsing is done by :mod:`configparser`; serialization writes every key of
every section in declaration order so a complete file round-trips.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .detector import LossWeights
from .errors import ParameterError
from .pipeline import TrainConfig
from .sarsim.types import Domain
from .suites import SuiteConfig

SIZES = ("S", "M", "L")
CROPS = (128, 256)


def _ints(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _strs(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"expected a boolean, got {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


@dataclass
class ExperimentSection:
    mode: str = "stripmap"
    size: str = "S"
    crop: int = 128
    seeds: tuple = (0, 1, 2)


@dataclass
class SuiteSection:
    """Overrides of the mode's suite preset; empty values keep the preset."""

    scenes: tuple = ()
    height: int | None = None
    width: int | None = None
    chirp_samples: int | None = None
    noise_sigma: float | None = None
    clutter_sigma: float | None = None
    azimuth_extent: int | None = None
    windmill_fraction: float | None = None
    count_probs: tuple = ()


@dataclass
class TrainSection:
    epochs: int = 12
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: float = 1.0
    objectness_prior: float = 0.02
    augment: bool = True
    train_overlap: float = 0.0  # fraction of a crop shared by neighbouring training tiles
    lambda_coord: float = 5.0
    lambda_noobj: float = 0.5
    lambda_class: float = 1.0


@dataclass
class DataSection:
    train_dir: str = ""
    val_dir: str = ""
    test_dir: str = ""


@dataclass
class EvalSection:
    threshold: str = "auto"  # auto | a fixed value in [0, 1]


@dataclass
class BenchSection:
    duration: float = 5.0
    runs: int = 5
    batch: int = 8
    prf: float = 1664.0
    samples_per_line: int = 19950


@dataclass
class SweepSection:
    sizes: tuple = ("S", "M", "L")
    crops: tuple = (128, 256)


SECTIONS = (("experiment", ExperimentSection), ("suite", SuiteSection),
            ("train", TrainSection), ("data", DataSection), ("eval", EvalSection),
            ("bench", BenchSection), ("sweep", SweepSection))

_TUPLE_PARSERS = {"seeds": _ints, "scenes": _ints, "count_probs": _floats,
                  "sizes": _strs, "crops": _ints}


def _convert(section, key, default, text):
    try:
        if key in _TUPLE_PARSERS:
            return _TUPLE_PARSERS[key](text)
        if isinstance(default, bool):
            return _bool(text)
        if text == "":
            return None if default is None else type(default)()
        if isinstance(default, int) or key in ("height", "width", "chirp_samples",
                                               "azimuth_extent"):
            return int(text)
        if isinstance(default, float) or key in ("noise_sigma", "clutter_sigma",
                                                 "windmill_fraction"):
            return float(text)
        return text
    except ValueError as exc:
        raise ParameterError(f"[{section}] {key}: cannot parse {text!r}: {exc}") from None


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    suite: SuiteSection = field(default_factory=SuiteSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        self.validate()

    # -- parsing ---------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None,
                                       default_section="__none__")
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ParameterError(f"config syntax error: {exc}") from None
        known = dict(SECTIONS)
        parts = {}
        for name in cp.sections():
            if name not in known:
                raise ParameterError(f"unknown config section [{name}]")
            proto = known[name]()
            valid = {f.name for f in fields(proto)}
            values = {}
            for key, text_value in cp.items(name):
                if key not in valid:
                    raise ParameterError(f"unknown key {key!r} in section [{name}]")
                values[key] = _convert(name, key, getattr(proto, key), text_value.strip())
            parts[name] = replace(proto, **values)
        return cls(**parts)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_text(p.read_text())

    def to_text(self) -> str:
        lines = []
        for name, _ in SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(sec):
                value = _fmt(getattr(sec, f.name))
                lines.append(f"{f.name} = {value}" if value else f"{f.name} =")
            lines.append("")
        return "\n".join(lines)

    # -- checks and derived objects ---------------------------------------------
    def validate(self):
        e = self.experiment
        e.size = e.size.upper()
        if e.mode not in ("stripmap", "iw"):
            raise ParameterError(f"mode must be stripmap or iw, got {e.mode!r}")
        if e.size not in SIZES:
            raise ParameterError(f"size must be one of {SIZES}, got {e.size!r}")
        if e.crop not in CROPS:
            raise ParameterError(f"crop must be one of {CROPS}, got {e.crop}")
        if not e.seeds:
            raise ParameterError("need at least one seed")
        if not 0.0 <= self.train.train_overlap < 1.0:
            raise ParameterError("train_overlap must lie in [0, 1)")
        self.threshold_value()
        for size in self.sweep.sizes:
            if size.upper() not in SIZES:
                raise ParameterError(f"sweep size {size!r} is not one of {SIZES}")
        for crop in self.sweep.crops:
            if crop not in CROPS:
                raise ParameterError(f"sweep crop {crop} is not one of {CROPS}")

    @property
    def domain(self) -> Domain:
        """Detector input domain implied by the acquisition mode."""
        return Domain.RAW_SHIFTED if self.experiment.mode == "stripmap" else \
            Domain.RANGE_COMPRESSED

    def threshold_value(self):
        """None for the automatic policy, else the fixed threshold."""
        text = str(self.eval.threshold).strip().lower()
        if text == "auto":
            return None
        try:
            t = float(text)
        except ValueError:
            raise ParameterError(f"threshold must be 'auto' or a number, got {text!r}") from None
        if not math.isfinite(t) or t < 0:
            raise ParameterError(f"threshold must be >= 0, got {t}")
        return t

    def suite_config(self, seed: int) -> SuiteConfig:
        s = self.suite
        overrides = {k: v for k, v in ((f.name, getattr(s, f.name)) for f in fields(s))
                     if v not in (None, ())}
        make = SuiteConfig.stripmap if self.experiment.mode == "stripmap" else SuiteConfig.iw
        try:
            return make(seed=seed, **overrides)
        except TypeError as exc:
            raise ParameterError(str(exc)) from None

    def train_stride(self, crop: int):
        """Training tile stride in pixels; None for non-overlapping tiles."""
        if not self.train.train_overlap:
            return None
        return max(int(round(crop * (1.0 - self.train.train_overlap))), 1)

    def n_classes(self, seed=0) -> int:
        return self.suite_config(seed).n_classes

    def train_config(self, seed: int, size=None, crop=None) -> TrainConfig:
        t = self.train
        return TrainConfig(size=size or self.experiment.size, crop=crop or self.experiment.crop,
                           n_classes=self.n_classes(seed), epochs=t.epochs,
                           batch_size=t.batch_size, lr=t.lr, momentum=t.momentum,
                           weight_decay=t.weight_decay, warmup_epochs=t.warmup_epochs,
                           objectness_prior=t.objectness_prior, augment=t.augment, seed=seed,
                           train_stride=self.train_stride(crop or self.experiment.crop),
                           loss=LossWeights(t.lambda_coord, t.lambda_noobj, t.lambda_class))
