"""Post-training int8 quantization, integer inference and throughput benchmark."""

from .bench import CSV_HEADER, BenchReport, bench, required_fps
from .qcheckpoint import decode_qcheckpoint, encode_qcheckpoint, load_qcheckpoint, save_qcheckpoint
from .qparams import QuantParams, asymmetric_params, quantize_weights, symmetric_params
from .quantize import (Calibration, FoldedModel, QuantizedModel, calibrate, fold_bn,
                       logit_deviation, quantize, quantized_forward)

__all__ = [
    "BenchReport", "CSV_HEADER", "Calibration", "FoldedModel", "QuantParams", "QuantizedModel",
    "asymmetric_params", "bench", "calibrate", "decode_qcheckpoint", "encode_qcheckpoint",
    "fold_bn", "load_qcheckpoint", "logit_deviation", "quantize", "quantize_weights",
    "quantized_forward", "required_fps", "save_qcheckpoint", "symmetric_params",
]
