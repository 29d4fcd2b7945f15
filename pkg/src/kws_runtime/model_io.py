"""Binary model serialization and post-training calibration quantization.

File layout (all integers little-endian):

    "KWSM" | u16 version | u64 total_size | u8 mode | u8 flags | input shape
    [input QuantParams] | u32 layer_count | layer records... | u32 CRC32

Each layer record is a kind tag, a flag byte (relu, four-vector mul_add),
optional input/output QuantParams (f64 scale + i32 zero_point), kind-specific
scalars, and its weight tensors (elem kind, optional QuantParams, shape, raw
little-endian bytes). The CRC32 covers every preceding byte. Encoding is
byte-exact deterministic: the same graph always produces the same file.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import (
    LOGISTIC_OUT_QP,
    Conv2D,
    FullyConnected,
    GlobalMean,
    Logistic,
    MaxPool2D,
    ModelGraph,
    MulAdd,
    run_layers,
)
from .errors import (
    BadMagicError,
    ChecksumError,
    GraphValidationError,
    InvalidInputError,
    ModelFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .tensors import QuantParams, Tensor, choose_qparams, int32, quantize, real32, round_half_away

MAGIC = b"KWSM"
VERSION = 1

_MODE_TAGS = {"float": 0, "integer": 1}
_MODE_NAMES = {v: k for k, v in _MODE_TAGS.items()}

_KIND_TAGS = {"conv2d": 1, "mul_add": 2, "maxpool2d": 3, "mean": 4, "fully_connected": 5, "logistic": 6}
_KIND_NAMES = {v: k for k, v in _KIND_TAGS.items()}

_ELEM_TAGS = {"real32": 0, "int8": 1, "int32": 2}
_ELEM_NAMES = {v: k for k, v in _ELEM_TAGS.items()}
_ELEM_DTYPES = {"real32": "<f4", "int8": "<i1", "int32": "<i4"}

_FLAG_RELU = 1
_FLAG_FOUR_PARAM = 2
_FLAG_IN_QP = 4
_FLAG_OUT_QP = 8


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _pack_qp(buf: bytearray, qp: QuantParams) -> None:
    buf += struct.pack("<dl", qp.scale, qp.zero_point)


def _pack_shape(buf: bytearray, shape) -> None:
    buf += struct.pack("<B", len(shape))
    buf += struct.pack(f"<{len(shape)}I", *shape)


def _pack_tensor(buf: bytearray, t: Tensor) -> None:
    buf += struct.pack("<BB", _ELEM_TAGS[t.elem_kind], 1 if t.quant else 0)
    if t.quant:
        _pack_qp(buf, t.quant)
    _pack_shape(buf, t.shape)
    raw = np.ascontiguousarray(t.data, dtype=_ELEM_DTYPES[t.elem_kind]).tobytes()
    buf += struct.pack("<Q", len(raw))
    buf += raw


def _layer_record(layer) -> bytes:
    buf = bytearray()
    kind = getattr(layer, "kind", None)
    if kind not in _KIND_TAGS:
        raise ModelFormatError(f"unencodable layer kind {kind!r}")
    flags = 0
    if getattr(layer, "relu_after", False):
        flags |= _FLAG_RELU
    if isinstance(layer, MulAdd) and layer.four_param:
        flags |= _FLAG_FOUR_PARAM
    in_qp = getattr(layer, "in_qp", None)
    out_qp = getattr(layer, "out_qp", None)
    if in_qp:
        flags |= _FLAG_IN_QP
    if out_qp:
        flags |= _FLAG_OUT_QP
    buf += struct.pack("<BB", _KIND_TAGS[kind], flags)
    if in_qp:
        _pack_qp(buf, in_qp)
    if out_qp:
        _pack_qp(buf, out_qp)

    if isinstance(layer, MaxPool2D):
        buf += struct.pack("<BB", layer.window, layer.stride)
        tensors = []
    elif isinstance(layer, MulAdd):
        if layer.four_param:
            buf += struct.pack("<d", layer.eps)
            tensors = [layer.gamma, layer.beta, layer.mean, layer.var]
        else:
            tensors = [layer.scale, layer.offset]
    elif isinstance(layer, (Conv2D, FullyConnected)):
        tensors = [layer.weights] + ([layer.bias] if layer.bias is not None else [])
    else:
        tensors = []
    buf += struct.pack("<B", len(tensors))
    for t in tensors:
        _pack_tensor(buf, t)
    return bytes(buf)


def model_to_bytes(graph: ModelGraph) -> bytes:
    """Deterministic encoding: same graph, same bytes."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", VERSION)
    size_at = len(buf)
    buf += struct.pack("<Q", 0)  # patched below
    flags = 1 if graph.input_qp else 0
    buf += struct.pack("<BB", _MODE_TAGS[graph.mode], flags)
    _pack_shape(buf, graph.input_shape)
    if graph.input_qp:
        _pack_qp(buf, graph.input_qp)
    buf += struct.pack("<I", len(graph.layers))
    for layer in graph.layers:
        buf += _layer_record(layer)
    total = len(buf) + 4
    struct.pack_into("<Q", buf, size_at, total)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def save_model(graph: ModelGraph, path) -> None:
    Path(path).write_bytes(model_to_bytes(graph))


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncatedFileError(f"record overruns file at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"blob overruns file at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _read_qp(cur: _Cursor) -> QuantParams:
    scale, zp = cur.take("<dl")
    return QuantParams(scale, zp)


def _read_shape(cur: _Cursor):
    (ndim,) = cur.take("<B")
    return tuple(cur.take(f"<{ndim}I")) if ndim else ()


def _read_tensor(cur: _Cursor) -> Tensor:
    elem_tag, has_quant = cur.take("<BB")
    if elem_tag not in _ELEM_NAMES:
        raise GraphValidationError(f"unknown element kind tag {elem_tag}")
    quant = _read_qp(cur) if has_quant else None
    shape = _read_shape(cur)
    (nbytes,) = cur.take("<Q")
    raw = cur.take_bytes(nbytes)
    kind = _ELEM_NAMES[elem_tag]
    dtype = np.dtype(_ELEM_DTYPES[kind])
    expected = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
    if nbytes != expected:
        raise GraphValidationError(f"tensor blob of {nbytes} bytes, shape {shape} needs {expected}")
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return Tensor(shape, kind, arr.copy(), quant)


def _read_layer(cur: _Cursor):
    kind_tag, flags = cur.take("<BB")
    if kind_tag not in _KIND_NAMES:
        raise GraphValidationError(f"unknown layer kind tag {kind_tag}")
    kind = _KIND_NAMES[kind_tag]
    relu = bool(flags & _FLAG_RELU)
    in_qp = _read_qp(cur) if flags & _FLAG_IN_QP else None
    out_qp = _read_qp(cur) if flags & _FLAG_OUT_QP else None

    if kind == "maxpool2d":
        window, stride = cur.take("<BB")
        cur.take("<B")  # tensor count, always 0
        return MaxPool2D(window, stride)
    if kind == "mul_add" and flags & _FLAG_FOUR_PARAM:
        (eps,) = cur.take("<d")
        (count,) = cur.take("<B")
        if count != 4:
            raise GraphValidationError(f"four-vector mul_add carries {count} tensors, expected 4")
        g, b, m, v = (_read_tensor(cur) for _ in range(4))
        return MulAdd(gamma=g, beta=b, mean=m, var=v, eps=eps, relu_after=relu,
                      in_qp=in_qp, out_qp=out_qp)
    (count,) = cur.take("<B")
    tensors = [_read_tensor(cur) for _ in range(count)]
    if kind == "mul_add":
        if count != 2:
            raise GraphValidationError(f"mul_add carries {count} tensors, expected 2")
        return MulAdd(scale=tensors[0], offset=tensors[1], relu_after=relu,
                      in_qp=in_qp, out_qp=out_qp)
    if kind in ("conv2d", "fully_connected"):
        if count not in (1, 2):
            raise GraphValidationError(f"{kind} carries {count} tensors, expected 1 or 2")
        cls = Conv2D if kind == "conv2d" else FullyConnected
        return cls(tensors[0], tensors[1] if count == 2 else None, relu_after=relu,
                   in_qp=in_qp, out_qp=out_qp)
    if count != 0:
        raise GraphValidationError(f"{kind} carries {count} tensors, expected 0")
    if kind == "mean":
        return GlobalMean()
    return Logistic(in_qp=in_qp, out_qp=out_qp)


def model_from_bytes(data: bytes) -> ModelGraph:
    """Decode and validate; returns a complete graph or raises, never partial."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a KWSM model file")
    if len(data) < 14:
        raise TruncatedFileError(f"file of {len(data)} bytes is shorter than the fixed header")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version}, this build reads {VERSION}")
    (total_size,) = struct.unpack_from("<Q", data, 6)
    if total_size != len(data):
        raise TruncatedFileError(f"file is {len(data)} bytes, header declares {total_size}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(f"CRC32 mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")

    cur = _Cursor(data[:-4])
    cur.pos = 14
    mode_tag, flags = cur.take("<BB")
    if mode_tag not in _MODE_NAMES:
        raise GraphValidationError(f"unknown arithmetic mode tag {mode_tag}")
    input_shape = _read_shape(cur)
    input_qp = _read_qp(cur) if flags & 1 else None
    (layer_count,) = cur.take("<I")
    layers = [_read_layer(cur) for _ in range(layer_count)]
    if cur.pos != len(cur.data):
        raise GraphValidationError(f"{len(cur.data) - cur.pos} trailing bytes after last layer")
    return ModelGraph(_MODE_NAMES[mode_tag], input_shape, tuple(layers), input_qp)


def load_model(path) -> ModelGraph:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return model_from_bytes(path.read_bytes())


# ---------------------------------------------------------------------------
# Calibration + quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationStats:
    """Running min/max of the model input and of every float layer output."""

    input_range: tuple
    layer_ranges: tuple

    def __post_init__(self):
        for lo, hi in (self.input_range, *self.layer_ranges):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise InvalidInputError(f"calibration range ({lo}, {hi}) is not a finite min<=max")


def collect_calibration_stats(graph: ModelGraph, features_list: Sequence[np.ndarray]) -> CalibrationStats:
    """Run the float graph over the calibration set recording per-tensor ranges.

    Min/max only, order-insensitive: permuting the set yields identical stats.
    """
    if graph.mode != "float":
        raise InvalidInputError("calibration runs on the float graph")
    features_list = list(features_list)
    if not features_list:
        raise InvalidInputError("calibration set is empty")
    inf = float("inf")
    in_lo, in_hi = inf, -inf
    lo = [inf] * len(graph.layers)
    hi = [-inf] * len(graph.layers)
    for features in features_list:
        arr = np.asarray(features, dtype=np.float64)
        in_lo = min(in_lo, float(arr.min()))
        in_hi = max(in_hi, float(arr.max()))
        for i, out in enumerate(run_layers(graph, features)):
            lo[i] = min(lo[i], float(out.min()))
            hi[i] = max(hi[i], float(out.max()))
    return CalibrationStats((in_lo, in_hi), tuple(zip(lo, hi)))


def _quantize_weights(values: np.ndarray) -> Tensor:
    arr = np.asarray(values, dtype=np.float64)
    qp = choose_qparams(float(arr.min()), float(arr.max()), symmetric=True)
    return quantize(real32(arr), qp)


def _quantize_bias(values: np.ndarray, in_scale: float, w_scale: float) -> Tensor:
    bias_scale = in_scale * w_scale
    q = round_half_away(np.asarray(values, dtype=np.float64) / bias_scale)
    q = np.clip(q, -(1 << 31), (1 << 31) - 1)
    return int32(q, QuantParams(bias_scale, 0))


def _fold_conv(conv: Conv2D, bn: MulAdd):
    """Absorb per-channel scale/offset into conv weights and bias."""
    scale, offset = bn.effective_scale_offset()
    w = conv.weights.data.astype(np.float64) * scale
    b = conv.bias.data.astype(np.float64) if conv.bias is not None else 0.0
    return w, b * scale + offset


def calibrate_and_quantize(graph: ModelGraph, calib_features: Sequence[np.ndarray],
                           fold_bn: bool = True) -> ModelGraph:
    """Post-training quantization from min/max calibration statistics.

    Activations get asymmetric per-tensor QuantParams from observed ranges,
    weights symmetric per-tensor, biases int32 at scale in_scale*weight_scale.
    Batchnorm folds into the preceding conv when fold_bn is set; otherwise it
    becomes a standalone integer rescale.
    """
    stats = collect_calibration_stats(graph, calib_features)
    input_qp = choose_qparams(*stats.input_range)
    out_qps = [choose_qparams(*r) for r in stats.layer_ranges]

    layers = list(graph.layers)
    new_layers = []
    current_qp = input_qp
    i = 0
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, Conv2D) and fold_bn and i + 1 < len(layers) and isinstance(layers[i + 1], MulAdd):
            bn = layers[i + 1]
            w64, b64 = _fold_conv(layer, bn)
            out_qp = out_qps[i + 1]
            wq = _quantize_weights(w64)
            new_layers.append(Conv2D(
                wq, _quantize_bias(b64, current_qp.scale, wq.quant.scale),
                relu_after=bn.relu_after, in_qp=current_qp, out_qp=out_qp))
            current_qp = out_qp
            i += 2
            continue
        if isinstance(layer, Conv2D):
            out_qp = out_qps[i]
            wq = _quantize_weights(layer.weights.data)
            bias = layer.bias.data if layer.bias is not None else np.zeros(layer.weights.shape[-1])
            new_layers.append(Conv2D(
                wq, _quantize_bias(bias, current_qp.scale, wq.quant.scale),
                relu_after=layer.relu_after, in_qp=current_qp, out_qp=out_qp))
            current_qp = out_qp
        elif isinstance(layer, MulAdd):
            out_qp = out_qps[i]
            scale64, offset64 = layer.effective_scale_offset()
            sq = _quantize_weights(scale64)
            new_layers.append(MulAdd(
                scale=sq, offset=_quantize_bias(offset64, current_qp.scale, sq.quant.scale),
                relu_after=layer.relu_after, in_qp=current_qp, out_qp=out_qp))
            current_qp = out_qp
        elif isinstance(layer, FullyConnected):
            out_qp = out_qps[i]
            wq = _quantize_weights(layer.weights.data)
            bias = layer.bias.data if layer.bias is not None else np.zeros(layer.weights.shape[-1])
            new_layers.append(FullyConnected(
                wq, _quantize_bias(bias, current_qp.scale, wq.quant.scale),
                relu_after=layer.relu_after, in_qp=current_qp, out_qp=out_qp))
            current_qp = out_qp
        elif isinstance(layer, Logistic):
            new_layers.append(Logistic(in_qp=current_qp, out_qp=LOGISTIC_OUT_QP))
            current_qp = LOGISTIC_OUT_QP
        else:
            new_layers.append(layer)  # pool / mean: quantization-transparent
        i += 1

    return ModelGraph("integer", graph.input_shape, tuple(new_layers), input_qp)
