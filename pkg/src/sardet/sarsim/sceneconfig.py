"""Plain-text scene description (``key = value`` per line, ``#`` comments)."""

from __future__ import annotations

from pathlib import Path

from ..errors import ParameterError
from .chirp import ChirpParams
from .types import SceneSpec, TargetClass, TargetSpec

_INT_KEYS = {"height", "width", "chirp_samples", "azimuth_extent", "seed"}
_FLOAT_KEYS = {"noise_sigma", "clutter_sigma"}
KEY_ORDER = ("height", "width", "chirp_samples", "noise_sigma", "clutter_sigma",
             "azimuth_extent", "seed", "shore_band", "targets")


def _parse_targets(text):
    targets = []
    for item in filter(None, (t.strip() for t in text.split(";"))):
        fields = [f.strip() for f in item.split(",")]
        if len(fields) != 4:
            raise ParameterError(f"target {item!r} needs r,a,amp,class")
        r, a, amp, cls = fields
        targets.append(TargetSpec(int(r), int(a), float(amp), TargetClass.parse(cls)))
    return targets


def parse_scene_config(text: str):
    """Returns ``(SceneSpec, ChirpParams)``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEY_ORDER:
            raise ParameterError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    missing = {"height", "width", "chirp_samples"} - values.keys()
    if missing:
        raise ParameterError(f"scene config missing keys: {sorted(missing)}")
    ints = {k: int(values[k]) for k in _INT_KEYS if k in values}
    floats = {k: float(values[k]) for k in _FLOAT_KEYS if k in values}
    shore = None
    if "shore_band" in values:
        lo, hi = (int(v) for v in values["shore_band"].split(","))
        shore = (lo, hi)
    scene = SceneSpec(
        height=ints["height"], width=ints["width"],
        targets=_parse_targets(values.get("targets", "")),
        noise_sigma=floats.get("noise_sigma", 0.0),
        clutter_sigma=floats.get("clutter_sigma", 0.0),
        azimuth_extent=ints.get("azimuth_extent", 1),
        rng_seed=ints.get("seed", 0),
        shore_band=shore,
    )
    scene.validate()
    return scene, ChirpParams.from_samples(ints["chirp_samples"])


def format_scene_config(scene: SceneSpec, chirp: ChirpParams) -> str:
    targets = ";".join(f"{t.range_px},{t.azimuth_px},{t.amplitude!r},{t.cls.label}"
                       for t in scene.targets)
    lines = [
        f"height = {scene.height}",
        f"width = {scene.width}",
        f"chirp_samples = {chirp.length_samples}",
        f"noise_sigma = {scene.noise_sigma!r}",
        f"clutter_sigma = {scene.clutter_sigma!r}",
        f"azimuth_extent = {scene.azimuth_extent}",
        f"seed = {scene.rng_seed}",
    ]
    if scene.shore_band is not None:
        lines.append(f"shore_band = {scene.shore_band[0]},{scene.shore_band[1]}")
    lines.append(f"targets = {targets}")
    return "\n".join(lines) + "\n"


def load_scene_config(path):
    return parse_scene_config(Path(path).read_text())
