"""Keyword-spotting runtime: MFCC frontend, int8 CNN engine, model format, eval harness."""

from .dsp import AudioClip, MfccConfig, extract_features
from .engine import ModelGraph, run_inference
from .model_io import calibrate_and_quantize, load_model, save_model
from .tensors import QuantParams, Tensor, choose_qparams, dequantize, quantize

__all__ = [
    "AudioClip",
    "MfccConfig",
    "ModelGraph",
    "QuantParams",
    "Tensor",
    "calibrate_and_quantize",
    "choose_qparams",
    "dequantize",
    "extract_features",
    "load_model",
    "quantize",
    "run_inference",
    "save_model",
]
