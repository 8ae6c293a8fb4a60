"""Point-target raw echo synthesis."""

from __future__ import annotations

import numpy as np
from scipy.signal.windows import triang

from .chirp import ChirpParams, generate_chirp
from .types import ComplexImage, Domain, Label, SceneSpec, TargetClass

# windmill signature: three equal echoes this many range bins apart
WINDMILL_SPACING = 4
WINDMILL_OFFSETS = (-WINDMILL_SPACING, 0, WINDMILL_SPACING)


def azimuth_taper(extent: int) -> tuple[np.ndarray, int]:
    """Triangular weights over ``extent`` lines and the offset of the first
    line relative to the target's azimuth position."""
    return triang(extent), -((extent - 1) // 2)


def _place(data, pulse, row0, col0):
    """Add ``pulse`` (rows x cols) at (row0, col0); returns True if clipped."""
    h, w = data.shape
    ph, pw = pulse.shape
    r0, r1 = max(row0, 0), min(row0 + ph, h)
    c0, c1 = max(col0, 0), min(col0 + pw, w)
    if r0 < r1 and c0 < c1:
        data[r0:r1, c0:c1] += pulse[r0 - row0:r1 - row0, c0 - col0:c1 - col0]
    return (r0, r1, c0, c1) != (row0, row0 + ph, col0, col0 + pw)


def _complex_normal(rng, shape, sigma):
    # E|z|^2 = sigma^2
    scale = sigma / np.sqrt(2.0)
    return scale * rng.standard_normal(shape) + 1j * scale * rng.standard_normal(shape)


def simulate_raw(scene: SceneSpec, chirp: ChirpParams):
    """Synthesize the raw echo image of ``scene``.

    Each target's chirp starts at its range bin and is replicated over
    ``azimuth_extent`` lines with a triangular taper. Windmills are three
    equal echoes 4 bins apart with twice the azimuth extent. Sea clutter is
    a field of random scatterers illuminated by the same chirp; thermal
    noise is white. Echoes crossing the scene edge are truncated and the
    label is flagged.

    Returns
    -------
    image : ComplexImage
        Raw-domain image.
    labels : list of Label
        One per target at (range_px, azimuth_px), sorted by descending
        amplitude so file order encodes collision priority.
    """
    scene.validate()
    rng = np.random.default_rng(scene.rng_seed)
    pulse = generate_chirp(chirp)
    data = np.zeros((scene.height, scene.width), dtype=np.complex128)
    labels = []
    phases = rng.uniform(0.0, 2 * np.pi, size=len(scene.targets))
    for target, phase in zip(scene.targets, phases):
        if target.cls is TargetClass.WINDMILL:
            extent, offsets = 2 * scene.azimuth_extent, WINDMILL_OFFSETS
        else:
            extent, offsets = scene.azimuth_extent, (0,)
        taper, first = azimuth_taper(extent)
        echo = (target.amplitude * np.exp(1j * phase)) * taper[:, None] * pulse[None, :]
        clipped = False
        for off in offsets:
            clipped |= _place(data, echo, target.azimuth_px + first, target.range_px + off)
        near_shore = (scene.shore_band is not None
                      and scene.shore_band[0] <= target.range_px < scene.shore_band[1])
        labels.append(Label(float(target.range_px), float(target.azimuth_px), int(target.cls),
                            float(target.amplitude), bool(clipped), near_shore))

    if scene.clutter_sigma > 0 or scene.shore_band is not None:
        sigma = np.full(scene.width, scene.clutter_sigma)
        if scene.shore_band is not None:
            lo, hi = scene.shore_band
            sigma[lo:hi] = max(scene.clutter_sigma, 1e-3) * scene.shore_clutter_gain
        # scatterers left of the scene still leak chirp tails into it
        sigma = np.concatenate([np.full(pulse.size - 1, sigma[0]), sigma])
        scatterers = _complex_normal(rng, (scene.height, sigma.size), 1.0) * sigma
        # echo at bin b collects scatterers at bins b - n, n < L
        clutter = np.fft.ifft(np.fft.fft(scatterers, axis=1)
                              * np.fft.fft(pulse, sigma.size), axis=1)
        data += clutter[:, pulse.size - 1:] / np.sqrt(pulse.size)
    if scene.noise_sigma > 0:
        data += _complex_normal(rng, data.shape, scene.noise_sigma)

    labels.sort(key=lambda lab: -lab.amplitude)
    return ComplexImage(data.astype(np.complex64), Domain.RAW), labels
