"""Seeded synthetic scene suites for the Stripmap and IW experiments.

A suite is a list of scenes split into train / val / test. Stripmap scenes
are fed to the detector as half-chirp-shifted raw echoes; IW scenes are
range-compressed, their labels live in SLC space behind an affine pixel
offset and are brought back per crop by the centre-pixel correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError
from .sarsim import (AffineOffset, ChirpParams, ComplexImage, Domain, LabeledCrop, SceneSpec,
                     TargetClass, TargetSpec, half_chirp_shift, iw_offset_correct,
                     labels_in_window, range_compress, simulate_raw, slc_labels, tile_origins)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SuiteConfig:
    mode: str = "stripmap"                   # stripmap | iw
    scenes: tuple = (9, 1, 2)                # train / val / test
    height: int = 1664
    width: int = 1664
    chirp_samples: int = 64
    noise_sigma: float = 0.3
    clutter_sigma: float = 0.2
    azimuth_extent: int = 16
    block: int = 128                         # target counts are drawn per block
    count_probs: tuple = (0.62, 0.28, 0.07, 0.03)  # P(0..3 targets per block)
    amplitude: tuple = (0.5, 2.0)            # uniform amplitude range
    min_separation: float = 40.0
    windmill_fraction: float = 0.0
    # IW only: affine feature-to-label offset (row0, col0, row_grad, col_grad)
    offset: tuple = (0.0, 0.0, (0.0, 0.0), (0.0, 0.0))
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("stripmap", "iw"):
            raise ParameterError(f"mode must be 'stripmap' or 'iw', got {self.mode!r}")
        if len(self.scenes) != 3 or min(self.scenes) < 1:
            raise ParameterError("scenes needs three positive counts (train, val, test)")
        if abs(sum(self.count_probs) - 1.0) > 1e-9:
            raise ParameterError("count_probs must sum to 1")
        if not 0.0 <= self.windmill_fraction <= 1.0:
            raise ParameterError("windmill_fraction must lie in [0, 1]")

    @property
    def n_classes(self):
        return 2 if self.windmill_fraction > 0 else 0

    @property
    def domain(self):
        return Domain.RAW_SHIFTED if self.mode == "stripmap" else Domain.RANGE_COMPRESSED

    @property
    def chirp(self):
        return ChirpParams.from_samples(self.chirp_samples)

    @property
    def offset_map(self):
        r0, c0, rg, cg = self.offset
        return AffineOffset(r0, c0, tuple(rg), tuple(cg))

    def scene_ids(self, split):
        start = sum(self.scenes[:SPLITS.index(split)])
        return list(range(start, start + self.scenes[SPLITS.index(split)]))

    @classmethod
    def stripmap(cls, seed=0, **kw):
        return cls(mode="stripmap", seed=seed, **kw)

    @classmethod
    def iw(cls, seed=0, **kw):
        """Harder suite: ships and windmills, stronger clutter, long
        azimuth smear and a scene-varying label offset."""
        base = dict(mode="iw", scenes=(8, 1, 2), height=2048, width=2048, chirp_samples=64,
                    noise_sigma=1.0, clutter_sigma=0.6, azimuth_extent=48,
                    count_probs=(0.55, 0.3, 0.1, 0.05), amplitude=(0.25, 1.0),
                    min_separation=40.0, windmill_fraction=0.35,
                    offset=(6.0, -9.0, (0.002, -0.001), (0.0015, 0.002)))
        base.update(kw)
        return cls(seed=seed, **base)


@dataclass
class Scene:
    scene_id: int
    image: ComplexImage          # detector input domain
    labels: list                 # stripmap: label space; iw: SLC space
    offset_map: object = None    # iw only
    truncated: int = 0


def place_targets(cfg: SuiteConfig, rng) -> list:
    """Per-block Poisson-like counts with a minimum pairwise separation."""
    placed = []
    pts = np.zeros((0, 2))
    for r0 in range(0, cfg.height - cfg.block + 1, cfg.block):
        for c0 in range(0, cfg.width - cfg.block + 1, cfg.block):
            k = rng.choice(len(cfg.count_probs), p=cfg.count_probs)
            for _ in range(k):
                for _attempt in range(50):
                    pos = rng.uniform((r0, c0), (r0 + cfg.block, c0 + cfg.block))
                    if not len(pts) or np.min(np.hypot(*(pts - pos).T)) >= cfg.min_separation:
                        break
                else:
                    continue
                pts = np.vstack([pts, pos])
                cls = (TargetClass.WINDMILL if rng.random() < cfg.windmill_fraction
                       else TargetClass.SHIP)
                placed.append(TargetSpec(int(pos[1]), int(pos[0]),
                                         float(rng.uniform(*cfg.amplitude)), cls))
    return placed


def generate_scene(cfg: SuiteConfig, scene_id: int) -> Scene:
    rng = np.random.default_rng([cfg.seed, scene_id])
    targets = place_targets(cfg, rng)
    chirp = cfg.chirp
    # stripmap echoes start at the label bin; the shift moves them onto it
    spec = SceneSpec(cfg.height, cfg.width, targets, cfg.noise_sigma, cfg.clutter_sigma,
                     cfg.azimuth_extent, int(rng.integers(2 ** 31)))
    raw, labels = simulate_raw(spec, chirp)
    truncated = sum(lab.truncated for lab in labels)
    if cfg.mode == "stripmap":
        img = half_chirp_shift(raw, chirp)
        return Scene(scene_id, img, labels, None, truncated)
    img = range_compress(raw, chirp)
    # unit noise gain: the matched filter amplifies white noise by sqrt(L)
    img = ComplexImage(img.data / np.float32(np.sqrt(chirp.length_samples)), img.domain)
    return Scene(scene_id, img, slc_labels(labels, cfg.offset_map), cfg.offset_map, truncated)


def crop_scene(scene: Scene, crop: int, stride: int, n_classes=0):
    """Tile a scene; IW label crops get the centre-pixel offset correction.

    Returns ``(crops, dropped)`` where ``dropped`` counts labels pushed out
    of their crop by the correction.
    """
    crops, dropped = [], 0
    img = scene.image
    for r0, c0 in tile_origins(img.height, img.width, crop, stride):
        labs = labels_in_window(scene.labels, (r0, c0), crop)
        if scene.offset_map is not None:
            labs, d = iw_offset_correct(labs, (r0, c0), scene.offset_map, crop)
            dropped += d
        sub = ComplexImage(img.data[r0:r0 + crop, c0:c0 + crop].copy(), img.domain)
        crops.append(LabeledCrop(sub, labs, (r0, c0), scene.scene_id, n_classes))
    return crops, dropped


def scene_labels(crops):
    """Scene-level ground truth in global input-pixel coordinates, from a
    non-overlapping tiling."""
    out = []
    for c in crops:
        r0, c0 = c.origin
        out.extend(lab.moved(c0, r0) for lab in c.labels)
    return out


@dataclass
class SuiteData:
    config: SuiteConfig
    scenes: dict = field(default_factory=dict)  # split -> list of Scene

    def crops(self, split, crop, stride=None):
        stride = stride or crop
        out, dropped = [], 0
        for s in self.scenes[split]:
            c, d = crop_scene(s, crop, stride, self.config.n_classes)
            out.extend(c)
            dropped += d
        return out, dropped


def build_suite(cfg: SuiteConfig, splits=SPLITS) -> SuiteData:
    data = SuiteData(cfg)
    for split in splits:
        data.scenes[split] = [generate_scene(cfg, i) for i in cfg.scene_ids(split)]
    return data


def with_seed(cfg: SuiteConfig, seed: int) -> SuiteConfig:
    return replace(cfg, seed=seed)
