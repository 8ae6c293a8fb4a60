"""Synthetic raw SAR echoes, range compression, alignment preprocessing,
tiling and the crop dataset format."""

from .chirp import (ChirpParams, energy_centroid, generate_chirp, half_chirp_shift,
                    matched_filter_rows, range_compress)
from .dataset import (crop_filename, decode_crop, encode_crop, read_crop, read_dataset,
                      write_crop, write_dataset)
from .sceneconfig import format_scene_config, load_scene_config, parse_scene_config
from .simulate import WINDMILL_SPACING, azimuth_taper, simulate_raw
from .tiling import (GRID_CELL, AffineOffset, check_crop, iw_offset_correct, labels_in_window,
                     slc_labels, tile, tile_origins)
from .types import ComplexImage, Domain, Label, LabeledCrop, SceneSpec, TargetClass, TargetSpec

__all__ = [
    "AffineOffset", "ChirpParams", "ComplexImage", "Domain", "GRID_CELL", "Label",
    "LabeledCrop", "SceneSpec", "TargetClass", "TargetSpec", "WINDMILL_SPACING",
    "azimuth_taper", "check_crop", "crop_filename", "decode_crop", "encode_crop",
    "energy_centroid", "format_scene_config", "generate_chirp", "half_chirp_shift",
    "iw_offset_correct", "labels_in_window", "load_scene_config", "matched_filter_rows",
    "parse_scene_config", "range_compress", "read_crop", "read_dataset", "simulate_raw",
    "slc_labels", "tile", "tile_origins", "write_crop", "write_dataset",
]
