"""Binary crop files (``*.sarc``) and dataset directories.

Layout, little-endian::

    "SARC" | u32 version=1 | u32 height | u32 width | u8 domain | u8 n_classes
    | u16 n_labels | n_labels x (f32 x, f32 y, u8 class, 3 pad)
    | height*width x (f32 real, f32 imag), row-major

A dataset is a directory of crop files plus ``manifest.txt`` naming them one
per line. Scene id and crop origin travel in the file name
(``SSSS_RRRRR_CCCCC.sarc``) because the record itself has no slot for them.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .types import ComplexImage, Domain, Label, LabeledCrop

MAGIC = b"SARC"
VERSION = 1
MANIFEST = "manifest.txt"

_HEADER = struct.Struct("<4sIIIBBH")
_LABEL = struct.Struct("<ffB3x")
_NAME_RE = re.compile(r"^(\d+)_(\d+)_(\d+)\.sarc$")


def crop_filename(crop: LabeledCrop) -> str:
    return f"{max(crop.scene_id, 0):04d}_{crop.origin[0]:05d}_{crop.origin[1]:05d}.sarc"


def encode_crop(crop: LabeledCrop) -> bytes:
    img = crop.image
    if len(crop.labels) > 0xFFFF:
        raise FormatError(f"{len(crop.labels)} labels exceed the u16 label count")
    parts = [_HEADER.pack(MAGIC, VERSION, img.height, img.width, int(img.domain),
                          crop.n_classes, len(crop.labels))]
    parts.extend(_LABEL.pack(lab.x, lab.y, lab.cls) for lab in crop.labels)
    parts.append(np.ascontiguousarray(img.data, dtype="<c8").tobytes())
    return b"".join(parts)


def decode_crop(buf: bytes, path=None) -> LabeledCrop:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes",
                          path, len(buf))
    magic, version, height, width, domain, n_classes, n_labels = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", path, 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", path, 4)
    try:
        domain = Domain(domain)
    except ValueError:
        raise FormatError(f"unknown domain tag {domain}", path, 16) from None
    offset = _HEADER.size
    labels_end = offset + n_labels * _LABEL.size
    if len(buf) < labels_end:
        raise FormatError(f"truncated label table ({n_labels} labels declared)",
                          path, len(buf))
    labels = []
    for _ in range(n_labels):
        x, y, cls = _LABEL.unpack_from(buf, offset)
        labels.append(Label(x, y, cls))
        offset += _LABEL.size
    data_end = offset + height * width * 8
    if len(buf) < data_end:
        raise FormatError(f"truncated sample block, expected {height * width * 8} bytes",
                          path, len(buf))
    if len(buf) > data_end:
        raise FormatError(f"{len(buf) - data_end} trailing bytes", path, data_end)
    data = np.frombuffer(buf, dtype="<c8", count=height * width, offset=offset)
    image = ComplexImage(data.reshape(height, width).astype(np.complex64), domain)
    scene_id, origin = -1, (0, 0)
    if path is not None:
        m = _NAME_RE.match(Path(path).name)
        if m:
            scene_id, origin = int(m.group(1)), (int(m.group(2)), int(m.group(3)))
    return LabeledCrop(image, labels, origin, scene_id, n_classes)


def write_crop(crop: LabeledCrop, path):
    Path(path).write_bytes(encode_crop(crop))


def read_crop(path) -> LabeledCrop:
    return decode_crop(Path(path).read_bytes(), path)


def write_dataset(crops, path):
    """Write crops plus manifest into directory ``path`` (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for crop in crops:
        name = crop_filename(crop)
        write_crop(crop, root / name)
        names.append(name)
    (root / MANIFEST).write_text("".join(f"{n}\n" for n in names))
    return names


def read_dataset(path):
    """Read every crop listed in the manifest, or every ``*.sarc`` file in
    name order when there is no manifest."""
    root = Path(path)
    if not root.is_dir():
        raise FormatError("dataset directory does not exist", root)
    manifest = root / MANIFEST
    if manifest.exists():
        names = [line.strip() for line in manifest.read_text().splitlines() if line.strip()]
    else:
        names = sorted(p.name for p in root.glob("*.sarc"))
    return [read_crop(root / name) for name in names]
