"""Layer graph and execution for the keyword-spotting CNN.

Two arithmetic modes share one graph structure:

  float   -- real32 weights, standard float32 kernels; the reference path
             used for calibration and as the accuracy baseline.
  integer -- int8 weights/activations, int32 accumulators, rescaled between
             layers with the fixed-point multiplier scheme from tensors.py.
             Results are bit-exact across platforms.

The default architecture chains
(98,20,1) -> conv3x3x32 -> bn -> pool -> conv3x3x64 -> bn -> pool
          -> global mean -> fc128 -> fc1 -> logistic
with valid padding everywhere and an optional ReLU flag per weighted layer.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ContractError, GraphValidationError, InvalidInputError
from .tensors import (
    INT32_MAX,
    INT32_MIN,
    QuantParams,
    Tensor,
    div_round_half_away,
    quantize,
    quantize_multiplier,
    real32,
    requantize_to_int8,
    round_half_away,
    tensors_equal,
)

INPUT_SHAPE = (98, 20, 1)

# Integer logistic output domain is pinned so scores are comparable across
# models: score = (q + 128) / 256.
LOGISTIC_OUT_QP = QuantParams(1.0 / 256.0, -128)


# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Conv2D:
    """3x3-style convolution, stride 1, valid padding. Weights are (kh, kw, cin, cout)."""

    weights: Tensor
    bias: Optional[Tensor] = None
    relu_after: bool = False
    in_qp: Optional[QuantParams] = None
    out_qp: Optional[QuantParams] = None

    kind = "conv2d"

    def __post_init__(self):
        if len(self.weights.shape) != 4:
            raise GraphValidationError(f"conv2d weights must be (kh, kw, cin, cout), got {self.weights.shape}")
        if self.bias is not None and self.bias.shape != (self.weights.shape[-1],):
            raise GraphValidationError(
                f"conv2d bias shape {self.bias.shape} != ({self.weights.shape[-1]},)")

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise GraphValidationError(f"conv2d needs rank-3 input, got {in_shape}")
        kh, kw, cin, cout = self.weights.shape
        h, w, c = in_shape
        if c != cin:
            raise GraphValidationError(f"conv2d input channels {c} != kernel cin {cin}")
        if h < kh or w < kw:
            raise GraphValidationError(f"conv2d kernel {kh}x{kw} larger than input {h}x{w}")
        return (h - kh + 1, w - kw + 1, cout)


@dataclass(frozen=True, eq=False)
class MulAdd:
    """Per-channel y = x * scale + offset (inference form of batchnorm).

    Carries either the two-vector form (scale, offset) or the four-vector
    training statistics (gamma, beta, mean, var, eps) from which the two
    vectors derive: scale = gamma / sqrt(var + eps), offset = beta - mean * scale.
    """

    scale: Optional[Tensor] = None
    offset: Optional[Tensor] = None
    gamma: Optional[Tensor] = None
    beta: Optional[Tensor] = None
    mean: Optional[Tensor] = None
    var: Optional[Tensor] = None
    eps: float = 1e-3
    relu_after: bool = False
    in_qp: Optional[QuantParams] = None
    out_qp: Optional[QuantParams] = None

    kind = "mul_add"

    @property
    def four_param(self) -> bool:
        return self.gamma is not None

    def __post_init__(self):
        two = self.scale is not None and self.offset is not None
        four = all(t is not None for t in (self.gamma, self.beta, self.mean, self.var))
        if two == four:
            raise GraphValidationError("mul_add needs either scale/offset or gamma/beta/mean/var")
        lengths = {t.shape for t in self._tensors()}
        if len(lengths) != 1 or len(next(iter(lengths))) != 1:
            raise GraphValidationError(f"mul_add vectors must share one 1-D shape, got {lengths}")

    def _tensors(self):
        group = (self.scale, self.offset) if not self.four_param else (
            self.gamma, self.beta, self.mean, self.var)
        return [t for t in group if t is not None]

    @property
    def channels(self) -> int:
        return self._tensors()[0].shape[0]

    def effective_scale_offset(self):
        """Reduce to the two-vector form as float64 arrays."""
        if not self.four_param:
            return self.scale.data.astype(np.float64), self.offset.data.astype(np.float64)
        gamma = self.gamma.data.astype(np.float64)
        var = self.var.data.astype(np.float64)
        mean = self.mean.data.astype(np.float64)
        beta = self.beta.data.astype(np.float64)
        scale = gamma / np.sqrt(var + self.eps)
        return scale, beta - mean * scale

    def out_shape(self, in_shape):
        if in_shape[-1] != self.channels:
            raise GraphValidationError(
                f"mul_add has {self.channels} channels, input has {in_shape[-1]}")
        return tuple(in_shape)


@dataclass(frozen=True, eq=False)
class MaxPool2D:
    """Window max with floor semantics on odd extents; quantization-transparent."""

    window: int = 2
    stride: int = 2

    kind = "maxpool2d"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise GraphValidationError(f"maxpool2d needs rank-3 input, got {in_shape}")
        h, w, c = in_shape
        if h < self.window or w < self.window:
            raise GraphValidationError(f"maxpool2d window {self.window} larger than input {h}x{w}")
        return ((h - self.window) // self.stride + 1,
                (w - self.window) // self.stride + 1, c)


@dataclass(frozen=True, eq=False)
class GlobalMean:
    """Per-channel mean over all spatial positions; keeps QuantParams."""

    kind = "mean"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise GraphValidationError(f"mean needs rank-3 input, got {in_shape}")
        return (in_shape[2],)


@dataclass(frozen=True, eq=False)
class FullyConnected:
    """Dense layer; weights are (in_features, out_features)."""

    weights: Tensor
    bias: Optional[Tensor] = None
    relu_after: bool = False
    in_qp: Optional[QuantParams] = None
    out_qp: Optional[QuantParams] = None

    kind = "fully_connected"

    def __post_init__(self):
        if len(self.weights.shape) != 2:
            raise GraphValidationError(f"fully_connected weights must be (in, out), got {self.weights.shape}")
        if self.bias is not None and self.bias.shape != (self.weights.shape[-1],):
            raise GraphValidationError(
                f"fully_connected bias shape {self.bias.shape} != ({self.weights.shape[-1]},)")

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise GraphValidationError(f"fully_connected needs rank-1 input, got {in_shape}")
        n_in, n_out = self.weights.shape
        if in_shape[0] != n_in:
            raise GraphValidationError(f"fully_connected input {in_shape[0]} != weights in {n_in}")
        return (n_out,)


@dataclass(frozen=True, eq=False)
class Logistic:
    """Scalar sigmoid; integer mode runs a 256-entry lookup table."""

    in_qp: Optional[QuantParams] = None
    out_qp: Optional[QuantParams] = None

    kind = "logistic"

    def out_shape(self, in_shape):
        if tuple(in_shape) != (1,):
            raise GraphValidationError(f"logistic needs scalar input, got {in_shape}")
        return (1,)


Layer = Union[Conv2D, MulAdd, MaxPool2D, GlobalMean, FullyConnected, Logistic]

_WEIGHTED = (Conv2D, FullyConnected)
_QUANTIZED_KINDS = (Conv2D, MulAdd, FullyConnected, Logistic)


# ---------------------------------------------------------------------------
# Model graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Ordered layer list with validated shape chain and arithmetic mode."""

    mode: str
    input_shape: tuple
    layers: tuple
    input_qp: Optional[QuantParams] = None

    def __post_init__(self):
        if self.mode not in ("float", "integer"):
            raise GraphValidationError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise GraphValidationError("graph has no layers")
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except GraphValidationError as exc:
                raise GraphValidationError(f"layer {i} ({layer.kind}): {exc}") from exc
        if shape != (1,):
            raise GraphValidationError(f"graph must end in a scalar, got {shape}")
        if self.mode == "integer":
            self._validate_integer()
        else:
            self._validate_float()

    def _validate_float(self):
        if self.input_qp is not None:
            raise GraphValidationError("float graph must not carry input QuantParams")
        for i, layer in enumerate(self.layers):
            for t in _layer_tensors(layer):
                if t.elem_kind != "real32":
                    raise GraphValidationError(f"layer {i}: float graph holds {t.elem_kind} tensor")

    def _validate_integer(self):
        if self.input_qp is None:
            raise GraphValidationError("integer graph requires input QuantParams")
        current = self.input_qp
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (MaxPool2D, GlobalMean)):
                continue  # quantization-transparent
            if layer.in_qp is None or layer.out_qp is None:
                raise GraphValidationError(f"layer {i} ({layer.kind}): missing QuantParams")
            if layer.in_qp != current:
                raise GraphValidationError(
                    f"layer {i} ({layer.kind}): in_qp {layer.in_qp} breaks the chain {current}")
            if isinstance(layer, _WEIGHTED):
                self._check_weighted(i, layer)
            elif isinstance(layer, MulAdd):
                self._check_mul_add(i, layer)
            elif isinstance(layer, Logistic) and layer.out_qp != LOGISTIC_OUT_QP:
                raise GraphValidationError(f"layer {i}: integer logistic output must be {LOGISTIC_OUT_QP}")
            current = layer.out_qp

    def _check_weighted(self, i, layer):
        if layer.weights.elem_kind != "int8":
            raise GraphValidationError(f"layer {i}: integer weights must be int8")
        if layer.bias is not None:
            self._check_bias(i, layer.bias, layer.in_qp.scale * layer.weights.quant.scale)

    def _check_mul_add(self, i, layer):
        if layer.four_param:
            raise GraphValidationError(f"layer {i}: integer mul_add must carry scale/offset form")
        if layer.scale.elem_kind != "int8":
            raise GraphValidationError(f"layer {i}: integer mul_add scale must be int8")
        self._check_bias(i, layer.offset, layer.in_qp.scale * layer.scale.quant.scale)

    @staticmethod
    def _check_bias(i, bias, expected_scale):
        if bias.elem_kind != "int32" or bias.quant is None:
            raise GraphValidationError(f"layer {i}: integer bias must be int32 with QuantParams")
        if bias.quant.zero_point != 0 or bias.quant.scale != expected_scale:
            raise GraphValidationError(
                f"layer {i}: bias scale must be in_scale*weight_scale with zero_point 0")

    def output_shapes(self):
        """Shape chain including the input shape."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.out_shape(shapes[-1]))
        return shapes


def _layer_tensors(layer):
    if isinstance(layer, _WEIGHTED):
        return [t for t in (layer.weights, layer.bias) if t is not None]
    if isinstance(layer, MulAdd):
        return layer._tensors()
    return []


def graphs_equal(a: ModelGraph, b: ModelGraph) -> bool:
    """Structural equality: modes, shapes, flags, QuantParams bits, weights."""
    if (a.mode, a.input_shape, a.input_qp, len(a.layers)) != (
            b.mode, b.input_shape, b.input_qp, len(b.layers)):
        return False
    for la, lb in zip(a.layers, b.layers):
        if type(la) is not type(lb) or la.kind != lb.kind:
            return False
        for attr in ("relu_after", "in_qp", "out_qp", "window", "stride", "eps"):
            if getattr(la, attr, None) != getattr(lb, attr, None):
                return False
        ta, tb = _layer_tensors(la), _layer_tensors(lb)
        if len(ta) != len(tb) or not all(tensors_equal(x, y) for x, y in zip(ta, tb)):
            return False
        if isinstance(la, MulAdd) and la.four_param != lb.four_param:
            return False
    return True


# ---------------------------------------------------------------------------
# Float kernels
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int):
    """(h, w, c) -> (oh*ow, kh*kw*c) patches matching (kh, kw, cin, cout) weights."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    oh, ow = windows.shape[0], windows.shape[1]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * x.shape[2])
    return cols, oh, ow


def _relu(x):
    return np.maximum(x, 0)


def _conv2d_float(x: np.ndarray, layer: Conv2D) -> np.ndarray:
    kh, kw, cin, cout = layer.weights.shape
    cols, oh, ow = _im2col(x, kh, kw)
    y = cols @ layer.weights.data.reshape(-1, cout)
    if layer.bias is not None:
        y = y + layer.bias.data
    y = y.reshape(oh, ow, cout)
    return _relu(y) if layer.relu_after else y


def _mul_add_float(x: np.ndarray, layer: MulAdd) -> np.ndarray:
    scale, offset = layer.effective_scale_offset()
    y = (x * scale.astype(np.float32) + offset.astype(np.float32)).astype(np.float32)
    return _relu(y) if layer.relu_after else y


def _maxpool_raw(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    h, w, c = x.shape
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(0, 1))
    return view[::stride, ::stride].max(axis=(3, 4))[:oh, :ow]


def _fully_connected_float(x: np.ndarray, layer: FullyConnected) -> np.ndarray:
    y = x @ layer.weights.data
    if layer.bias is not None:
        y = y + layer.bias.data
    return _relu(y) if layer.relu_after else y


def _logistic_float(x: np.ndarray) -> np.ndarray:
    return (1.0 / (1.0 + np.exp(-x.astype(np.float64)))).astype(np.float32)


# ---------------------------------------------------------------------------
# Integer kernels
#
# Accumulation is carried in int64 (exact); a range check enforces the int32
# accumulator contract. The float64 matmul inside _int_matmul is exact for
# these magnitudes (|products| < 2^16, sums < 2^24 << 2^53), so results are
# identical to pure integer arithmetic on any platform.
# ---------------------------------------------------------------------------


def _check_acc_range(acc: np.ndarray, where: str) -> None:
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise ContractError(f"{where}: int32 accumulator overflow")


@functools.lru_cache(maxsize=512)
def _derived_int_weights(layer):
    """Per-layer cache: float64 weight matrix, float64 bias, requant multiplier.

    Layers are immutable and hashed by identity, so entries stay valid for
    the lifetime of the layer object.
    """
    w = layer.weights.data.astype(np.float64)
    w = w.reshape(-1, w.shape[-1]) if w.ndim == 4 else w
    bias = layer.bias.data.astype(np.float64) if layer.bias is not None else None
    mult = quantize_multiplier(
        layer.in_qp.scale * layer.weights.quant.scale / layer.out_qp.scale)
    return w, bias, mult


def _conv2d_int_acc(x_q: np.ndarray, layer: Conv2D) -> np.ndarray:
    kh, kw, cin, cout = layer.weights.shape
    w64, bias64, _ = _derived_int_weights(layer)
    centered = x_q.astype(np.float64)
    centered -= layer.in_qp.zero_point
    cols, oh, ow = _im2col(centered, kh, kw)
    # products and partial sums are integers far below 2^53, so the float64
    # matmul is exact and the int64 cast loses nothing
    acc = cols @ w64
    if bias64 is not None:
        acc += bias64
    return acc.astype(np.int64).reshape(oh, ow, cout)


def _requantize_layer(acc: np.ndarray, mult, layer, where: str) -> np.ndarray:
    _check_acc_range(acc, where)
    # integer ReLU max(q, zp) folds into the requant clamp floor
    floor = layer.out_qp.zero_point if layer.relu_after else -128
    return requantize_to_int8(acc, mult, layer.out_qp.zero_point, floor=floor)


def _conv2d_int(x_q: np.ndarray, layer: Conv2D) -> np.ndarray:
    acc = _conv2d_int_acc(x_q, layer)
    return _requantize_layer(acc, _derived_int_weights(layer)[2], layer, "conv2d")


@functools.lru_cache(maxsize=512)
def _derived_mul_add(layer):
    mult = quantize_multiplier(
        layer.in_qp.scale * layer.scale.quant.scale / layer.out_qp.scale)
    return layer.scale.data.astype(np.int64), layer.offset.data.astype(np.int64), mult


def _mul_add_int_acc(x_q: np.ndarray, layer: MulAdd) -> np.ndarray:
    scale64, offset64, _ = _derived_mul_add(layer)
    acc = x_q.astype(np.int64)
    acc -= layer.in_qp.zero_point
    acc *= scale64
    acc += offset64
    return acc


def _mul_add_int(x_q: np.ndarray, layer: MulAdd) -> np.ndarray:
    acc = _mul_add_int_acc(x_q, layer)
    return _requantize_layer(acc, _derived_mul_add(layer)[2], layer, "mul_add")


def _global_mean_int(x_q: np.ndarray) -> np.ndarray:
    h, w, _ = x_q.shape
    sums = x_q.astype(np.int64).sum(axis=(0, 1))
    q = div_round_half_away(sums, h * w)
    return np.clip(q, -128, 127).astype("<i1")


def _fully_connected_int_acc(x_q: np.ndarray, layer: FullyConnected) -> np.ndarray:
    w64, bias64, _ = _derived_int_weights(layer)
    centered = x_q.astype(np.float64)
    centered -= layer.in_qp.zero_point
    acc = centered @ w64
    if bias64 is not None:
        acc += bias64
    return acc.astype(np.int64)


def _fully_connected_int(x_q: np.ndarray, layer: FullyConnected) -> np.ndarray:
    acc = _fully_connected_int_acc(x_q, layer)
    return _requantize_layer(acc, _derived_int_weights(layer)[2], layer, "fully_connected")


@functools.lru_cache(maxsize=64)
def logistic_lut(in_qp: QuantParams, out_qp: QuantParams = LOGISTIC_OUT_QP) -> np.ndarray:
    """256-entry sigmoid table indexed by q + 128."""
    codes = np.arange(-128, 128, dtype=np.float64)
    x = (codes - in_qp.zero_point) * in_qp.scale
    y = 1.0 / (1.0 + np.exp(-x))
    q = round_half_away(y / out_qp.scale) + out_qp.zero_point
    return np.clip(q, -128, 127).astype("<i1")


def _logistic_int(x_q: np.ndarray, layer: Logistic) -> np.ndarray:
    lut = logistic_lut(layer.in_qp, layer.out_qp)
    return lut[x_q.astype(np.int64) + 128]


# ---------------------------------------------------------------------------
# Tensor-level operations
#
# Thin public wrappers over the kernels: dispatch on the input's element
# kind, validate shapes and QuantParams agreement, and re-wrap results.
# ---------------------------------------------------------------------------


def _op_shape(layer, t: Tensor):
    try:
        return layer.out_shape(t.shape)
    except GraphValidationError as exc:
        raise ContractError(str(exc)) from exc


def _check_int_input(t: Tensor, layer) -> None:
    if t.elem_kind != "int8":
        raise ContractError(f"{layer.kind}: integer path needs an int8 tensor, got {t.elem_kind}")
    if layer.in_qp is None or layer.out_qp is None:
        raise ContractError(f"{layer.kind}: integer layer is missing QuantParams")
    if t.quant != layer.in_qp:
        raise ContractError(f"{layer.kind}: input QuantParams {t.quant} != layer in_qp {layer.in_qp}")


def conv2d(t: Tensor, layer: Conv2D) -> Tensor:
    shape = _op_shape(layer, t)
    if t.elem_kind == "real32":
        return Tensor(shape, "real32", _conv2d_float(t.data, layer))
    _check_int_input(t, layer)
    return Tensor(shape, "int8", _conv2d_int(t.data, layer), layer.out_qp)


def mul_add(t: Tensor, layer: MulAdd) -> Tensor:
    shape = _op_shape(layer, t)
    if t.elem_kind == "real32":
        return Tensor(shape, "real32", _mul_add_float(t.data, layer))
    _check_int_input(t, layer)
    return Tensor(shape, "int8", _mul_add_int(t.data, layer), layer.out_qp)


def maxpool2d(t: Tensor, layer: MaxPool2D = MaxPool2D()) -> Tensor:
    shape = _op_shape(layer, t)
    out = _maxpool_raw(t.data, layer.window, layer.stride)
    return Tensor(shape, t.elem_kind, out, t.quant)


def global_mean(t: Tensor) -> Tensor:
    shape = _op_shape(GlobalMean(), t)
    if t.elem_kind == "real32":
        return Tensor(shape, "real32", t.data.mean(axis=(0, 1)))
    return Tensor(shape, "int8", _global_mean_int(t.data), t.quant)


def fully_connected(t: Tensor, layer: FullyConnected) -> Tensor:
    shape = _op_shape(layer, t)
    if t.elem_kind == "real32":
        return Tensor(shape, "real32", _fully_connected_float(t.data, layer))
    _check_int_input(t, layer)
    return Tensor(shape, "int8", _fully_connected_int(t.data, layer), layer.out_qp)


def logistic(t: Tensor, layer: Optional[Logistic] = None) -> Tensor:
    shape = _op_shape(layer if layer is not None else Logistic(), t)
    if t.elem_kind == "real32":
        return Tensor(shape, "real32", _logistic_float(t.data))
    if layer is None or layer.in_qp is None:
        raise ContractError("integer logistic needs a layer with QuantParams")
    _check_int_input(t, layer)
    return Tensor(shape, "int8", _logistic_int(t.data, layer), layer.out_qp)


def relu(t: Tensor) -> Tensor:
    """Float: max(x, 0). Integer: max(q, zero_point); QuantParams unchanged."""
    if t.elem_kind == "real32":
        return Tensor(t.shape, "real32", _relu(t.data))
    return Tensor(t.shape, t.elem_kind, np.maximum(t.data, t.quant.zero_point), t.quant)


# ---------------------------------------------------------------------------
# Graph execution
# ---------------------------------------------------------------------------


def _run_layer_float(x: np.ndarray, layer) -> np.ndarray:
    if isinstance(layer, Conv2D):
        return _conv2d_float(x, layer)
    if isinstance(layer, MulAdd):
        return _mul_add_float(x, layer)
    if isinstance(layer, MaxPool2D):
        return _maxpool_raw(x, layer.window, layer.stride)
    if isinstance(layer, GlobalMean):
        return x.mean(axis=(0, 1))
    if isinstance(layer, FullyConnected):
        return _fully_connected_float(x, layer)
    if isinstance(layer, Logistic):
        return _logistic_float(x)
    raise ContractError(f"unknown layer kind {layer!r}")


def _run_layer_int(x: np.ndarray, layer) -> np.ndarray:
    if isinstance(layer, Conv2D):
        return _conv2d_int(x, layer)
    if isinstance(layer, MulAdd):
        return _mul_add_int(x, layer)
    if isinstance(layer, MaxPool2D):
        return _maxpool_raw(x, layer.window, layer.stride)
    if isinstance(layer, GlobalMean):
        return _global_mean_int(x)
    if isinstance(layer, FullyConnected):
        return _fully_connected_int(x, layer)
    if isinstance(layer, Logistic):
        return _logistic_int(x, layer)
    raise ContractError(f"unknown layer kind {layer!r}")


def _prepare_input(graph: ModelGraph, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features)
    if x.shape == graph.input_shape[:-1] and graph.input_shape[-1] == 1:
        x = x[..., None]
    if tuple(x.shape) != graph.input_shape:
        raise ContractError(f"features shaped {x.shape}, graph expects {graph.input_shape}")
    if graph.mode == "float":
        return x.astype(np.float32)
    return quantize(real32(x), graph.input_qp).data


def run_layers(graph: ModelGraph, features: np.ndarray):
    """Execute the graph, returning the activation after every layer."""
    x = _prepare_input(graph, features)
    run = _run_layer_float if graph.mode == "float" else _run_layer_int
    outputs = []
    for layer in graph.layers:
        x = run(x, layer)
        outputs.append(x)
    return outputs


def run_inference(graph: ModelGraph, features: np.ndarray) -> float:
    """End-to-end score in [0, 1] for one feature matrix."""
    final = run_layers(graph, features)[-1]
    if graph.mode == "float":
        return float(final[0])
    qp = graph.layers[-1].out_qp if getattr(graph.layers[-1], "out_qp", None) else LOGISTIC_OUT_QP
    return float((int(final[0]) - qp.zero_point) * qp.scale)


def accumulator_extrema(graph: ModelGraph, features: np.ndarray):
    """Per-layer int32 accumulator (min, max) for overflow instrumentation.

    Returns a list aligned with graph.layers; entries are None for layers
    without accumulators (pool, mean, logistic).
    """
    if graph.mode != "integer":
        raise InvalidInputError("accumulator instrumentation applies to integer graphs")
    x = _prepare_input(graph, features)
    extrema = []
    for layer in graph.layers:
        if isinstance(layer, Conv2D):
            acc = _conv2d_int_acc(x, layer)
            extrema.append((int(acc.min()), int(acc.max())))
        elif isinstance(layer, MulAdd):
            acc = _mul_add_int_acc(x, layer)
            extrema.append((int(acc.min()), int(acc.max())))
        elif isinstance(layer, FullyConnected):
            acc = _fully_connected_int_acc(x, layer)
            extrema.append((int(acc.min()), int(acc.max())))
        else:
            extrema.append(None)
        x = _run_layer_int(x, layer)
    return extrema


# ---------------------------------------------------------------------------
# Default architecture
# ---------------------------------------------------------------------------


def default_float_graph(weights: dict, relu: bool = True, eps: float = 1e-3) -> ModelGraph:
    """Assemble the default architecture from a dict of float arrays.

    Expected keys: conv1_w (3,3,1,32), conv1_b (32,), bn1_{gamma,beta,mean,var},
    conv2_w (3,3,32,64), conv2_b (64,), bn2_{gamma,beta,mean,var},
    fc1_w (64,128), fc1_b (128,), fc2_w (128,1), fc2_b (1,).
    """
    def bn(prefix):
        return MulAdd(
            gamma=real32(weights[f"{prefix}_gamma"]), beta=real32(weights[f"{prefix}_beta"]),
            mean=real32(weights[f"{prefix}_mean"]), var=real32(weights[f"{prefix}_var"]),
            eps=eps, relu_after=relu)

    layers = (
        Conv2D(real32(weights["conv1_w"]), real32(weights["conv1_b"])),
        bn("bn1"),
        MaxPool2D(),
        Conv2D(real32(weights["conv2_w"]), real32(weights["conv2_b"])),
        bn("bn2"),
        MaxPool2D(),
        GlobalMean(),
        FullyConnected(real32(weights["fc1_w"]), real32(weights["fc1_b"]), relu_after=relu),
        FullyConnected(real32(weights["fc2_w"]), real32(weights["fc2_b"])),
        Logistic(),
    )
    return ModelGraph("float", INPUT_SHAPE, layers)


def random_float_model(seed: int, logit_gain: float = 0.5) -> ModelGraph:
    """Seeded random default-architecture model (fixtures and tests)."""
    rng = np.random.default_rng(seed)

    def he(shape, fan_in, gain=1.0):
        return rng.normal(0.0, gain * math.sqrt(2.0 / fan_in), size=shape)

    weights = {
        "conv1_w": he((3, 3, 1, 32), 9), "conv1_b": rng.normal(0.0, 0.05, 32),
        "bn1_gamma": rng.uniform(0.7, 1.3, 32), "bn1_beta": rng.normal(0.0, 0.2, 32),
        "bn1_mean": rng.normal(0.0, 0.3, 32), "bn1_var": rng.uniform(0.5, 1.5, 32),
        "conv2_w": he((3, 3, 32, 64), 288), "conv2_b": rng.normal(0.0, 0.05, 64),
        "bn2_gamma": rng.uniform(0.7, 1.3, 64), "bn2_beta": rng.normal(0.0, 0.2, 64),
        "bn2_mean": rng.normal(0.0, 0.3, 64), "bn2_var": rng.uniform(0.5, 1.5, 64),
        "fc1_w": he((64, 128), 64), "fc1_b": rng.normal(0.0, 0.05, 128),
        "fc2_w": he((128, 1), 128, gain=logit_gain), "fc2_b": rng.normal(0.0, 0.05, 1),
    }
    return default_float_graph(weights)


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamCounts:
    trainable: int
    non_trainable: int

    @property
    def total(self) -> int:
        return self.trainable + self.non_trainable


def param_count(graph: ModelGraph) -> ParamCounts:
    """Stored parameter counts. Four-vector mul_add layers split into the two
    learned vectors (trainable) and the two running statistics (non-trainable),
    matching training-framework conventions."""
    trainable = 0
    non_trainable = 0
    for layer in graph.layers:
        if isinstance(layer, _WEIGHTED):
            trainable += layer.weights.size + (layer.bias.size if layer.bias is not None else 0)
        elif isinstance(layer, MulAdd):
            if layer.four_param:
                trainable += layer.gamma.size + layer.beta.size
                non_trainable += layer.mean.size + layer.var.size
            else:
                trainable += layer.scale.size + layer.offset.size
    return ParamCounts(trainable, non_trainable)


def quantized_param_report(graph: ModelGraph) -> dict:
    """Parameter totals for a quantized graph under both published readings.

    The reference architecture's quantized layer listing admits two readings:
    as printed, the first conv's weight cell equals the float layer's
    weight+bias total and the first per-channel scale row is listed at twice
    the channel count; the channel-consistent reading keeps scale rows equal
    to the channel count. Both totals are returned together with the stored
    count so the 32-entry discrepancy is visible.
    """
    rows = []
    for layer in graph.layers:
        if isinstance(layer, _WEIGHTED):
            rows.append((layer.kind, layer.weights.size,
                         layer.bias.size if layer.bias is not None else 0))
        elif isinstance(layer, MulAdd):
            scale_n = layer.scale.size if not layer.four_param else layer.gamma.size
            rows.append((layer.kind, scale_n, scale_n))
        else:
            rows.append((layer.kind, 0, 0))
    stored = sum(w + b for _, w, b in rows)
    first_conv_bias = next((b for k, _, b in rows if k == "conv2d"), 0)
    first_mul_add_scale = next((w for k, w, _ in rows if k == "mul_add"), 0)
    return {
        "rows": rows,
        "stored": stored,
        "as_printed": stored + first_conv_bias + first_mul_add_scale,
        "channel_consistent": stored + first_conv_bias,
        "reading_gap": first_mul_add_scale,
    }
