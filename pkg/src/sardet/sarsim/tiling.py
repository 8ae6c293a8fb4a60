"""Scene tiling and the IW centre-pixel label offset correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .types import ComplexImage, LabeledCrop

GRID_CELL = 32


def check_crop(crop: int):
    if crop <= 0 or crop % GRID_CELL:
        raise ParameterError(f"crop must be a positive multiple of {GRID_CELL}, got {crop}")


def tile_origins(height: int, width: int, crop: int, stride: int):
    """Raster-order (row, col) origins of every full crop."""
    check_crop(crop)
    if not 1 <= stride <= crop:
        raise ParameterError(f"stride must lie in [1, {crop}], got {stride}")
    if crop > height or crop > width:
        raise ParameterError(f"crop {crop} larger than scene {height}x{width}")
    rows = range(0, height - crop + 1, stride)
    cols = range(0, width - crop + 1, stride)
    return [(r, c) for r in rows for c in cols]


def labels_in_window(labels, origin, crop):
    """Labels inside the crop window shifted to crop-local coordinates."""
    r0, c0 = origin
    return [lab.moved(-c0, -r0) for lab in labels
            if c0 <= lab.x < c0 + crop and r0 <= lab.y < r0 + crop]


def tile(scene_img: ComplexImage, labels, crop: int, stride: int,
         scene_id: int = -1, n_classes: int = 0):
    """Cut ``scene_img`` into full ``crop`` x ``crop`` tiles.

    A label lands in every tile whose window contains it; partial border
    tiles are dropped.
    """
    crops = []
    for r0, c0 in tile_origins(scene_img.height, scene_img.width, crop, stride):
        img = ComplexImage(scene_img.data[r0:r0 + crop, c0:c0 + crop].copy(), scene_img.domain)
        crops.append(LabeledCrop(img, labels_in_window(labels, (r0, c0), crop),
                                 (r0, c0), scene_id, n_classes))
    return crops


@dataclass(frozen=True)
class AffineOffset:
    """Integer pixel offset field ``(d_row, d_col)`` that is affine in the
    pixel position before rounding.

    Maps range-compressed pixel space to label space: a feature at ``p``
    has its SLC label at ``p - offset(p)``.
    """

    row0: float = 0.0
    col0: float = 0.0
    row_grad: tuple = (0.0, 0.0)  # d(d_row)/d(row), d(d_row)/d(col)
    col_grad: tuple = (0.0, 0.0)

    def __call__(self, row, col):
        row = np.asarray(row, dtype=np.float64)
        col = np.asarray(col, dtype=np.float64)
        drow = self.row0 + self.row_grad[0] * row + self.row_grad[1] * col
        dcol = self.col0 + self.col_grad[0] * row + self.col_grad[1] * col
        return _round_int(drow), _round_int(dcol)

    def as_array(self, height, width):
        rr, cc = np.mgrid[0:height, 0:width]
        return np.stack(self(rr, cc), axis=-1)


def _round_int(v):
    out = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return out.astype(np.int64) if np.ndim(out) else int(out)


def evaluate_offset(offset_map, row, col):
    """Offset at one pixel from either a callable or an (H, W, 2) array."""
    if callable(offset_map):
        drow, dcol = offset_map(row, col)
    else:
        drow, dcol = np.asarray(offset_map)[row, col]
    return int(drow), int(dcol)


def iw_offset_correct(labels, crop_origin, offset_map, crop: int):
    """Translate a crop's labels by the offset at the crop centre pixel.

    ``x <- x + d_col``, ``y <- y + d_row``. Labels pushed out of the crop are
    dropped.

    Returns
    -------
    labels : list of Label
    dropped : int
    """
    r0, c0 = crop_origin
    drow, dcol = evaluate_offset(offset_map, r0 + crop // 2, c0 + crop // 2)
    kept = []
    for lab in labels:
        moved = lab.moved(dcol, drow)
        if 0 <= moved.x < crop and 0 <= moved.y < crop:
            kept.append(moved)
    return kept, len(labels) - len(kept)


def slc_labels(labels, offset_map):
    """Map feature-space labels to label (SLC) space: ``p - offset(p)``."""
    out = []
    for lab in labels:
        drow, dcol = evaluate_offset(offset_map, int(lab.y), int(lab.x))
        out.append(lab.moved(-dcol, -drow))
    return out
