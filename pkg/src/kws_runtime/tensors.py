"""Shaped tensors and the affine int8 quantization scheme.

All quantized arithmetic in the runtime is defined here so that the engine,
the model format, and calibration agree bit-exactly:

  real = scale * (q - zero_point)

with q a signed 8-bit code. Rounding is round-half-away-from-zero everywhere
a real value is converted to a code, and int32 accumulators are rescaled to
int8 with a fixed-point multiplier (int32 mantissa + right shift) so integer
results are platform-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, InvalidInputError

INT8_MIN = -128
INT8_MAX = 127
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

_DTYPES = {
    "real32": np.dtype("<f4"),
    "int8": np.dtype("<i1"),
    "int32": np.dtype("<i4"),
}


@dataclass(frozen=True)
class QuantParams:
    """Affine mapping real = scale * (q - zero_point)."""

    scale: float
    zero_point: int

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"scale must be finite and positive, got {self.scale}")
        if not (INT8_MIN <= self.zero_point <= INT8_MAX):
            raise InvalidInputError(f"zero_point {self.zero_point} outside int8 range")


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable shaped numeric container.

    elem_kind is one of real32 / int8 / int32; int8 tensors must carry
    QuantParams. Data is stored C-contiguous (row-major) and read-only.
    """

    shape: tuple
    elem_kind: str
    data: np.ndarray
    quant: Optional[QuantParams] = None

    def __post_init__(self):
        if self.elem_kind not in _DTYPES:
            raise InvalidInputError(f"unknown elem_kind {self.elem_kind!r}")
        if tuple(self.data.shape) != tuple(self.shape):
            raise ContractError(f"data shape {self.data.shape} != declared {self.shape}")
        if any(d <= 0 for d in self.shape):
            raise ContractError(f"non-positive extent in shape {self.shape}")
        if self.data.dtype != _DTYPES[self.elem_kind]:
            raise ContractError(
                f"dtype {self.data.dtype} does not match elem_kind {self.elem_kind}"
            )
        if self.elem_kind == "int8" and self.quant is None:
            raise ContractError("int8 tensors require QuantParams")
        arr = np.ascontiguousarray(self.data)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))

    @property
    def size(self) -> int:
        return int(self.data.size)


def real32(values) -> Tensor:
    arr = np.asarray(values, dtype="<f4")
    return Tensor(tuple(arr.shape), "real32", arr)


def int8(values, quant: QuantParams) -> Tensor:
    arr = np.asarray(values, dtype="<i1")
    return Tensor(tuple(arr.shape), "int8", arr, quant)


def int32(values, quant: Optional[QuantParams] = None) -> Tensor:
    arr = np.asarray(values, dtype="<i4")
    return Tensor(tuple(arr.shape), "int32", arr, quant)


def tensors_equal(a: Tensor, b: Tensor) -> bool:
    """Structural equality including QuantParams bit patterns."""
    if a.elem_kind != b.elem_kind or a.shape != b.shape:
        return False
    if (a.quant is None) != (b.quant is None):
        return False
    if a.quant is not None:
        same_scale = np.float64(a.quant.scale).tobytes() == np.float64(b.quant.scale).tobytes()
        if not same_scale or a.quant.zero_point != b.quant.zero_point:
            return False
    return bool(np.array_equal(a.data, b.data))


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero. Returns int64."""
    v = np.asarray(values, dtype=np.float64)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


def round_half_away_scalar(x: float) -> int:
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def quantize(t: Tensor, qp: QuantParams) -> Tensor:
    """Map a real32 tensor to int8 codes: clamp(round(x/scale) + zp)."""
    if t.elem_kind != "real32":
        raise InvalidInputError(f"quantize expects real32 input, got {t.elem_kind}")
    x = t.data.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("quantize: input contains non-finite values")
    q = round_half_away(x / qp.scale) + qp.zero_point
    q = np.clip(q, INT8_MIN, INT8_MAX).astype("<i1")
    return Tensor(t.shape, "int8", q, qp)


def dequantize(t: Tensor) -> Tensor:
    """Map integer codes back to real32 via scale * (q - zero_point)."""
    if t.quant is None:
        raise ContractError("dequantize: tensor carries no QuantParams")
    x = (t.data.astype(np.float64) - t.quant.zero_point) * t.quant.scale
    return Tensor(t.shape, "real32", x.astype("<f4"))


def choose_qparams(vmin: float, vmax: float, symmetric: bool = False) -> QuantParams:
    """Pick QuantParams covering [vmin, vmax].

    Asymmetric ranges are first widened to include 0 so that real zero is
    always exactly representable. Symmetric params pin zero_point to 0 for
    weights. A degenerate all-zero range falls back to scale=1, zp=0.
    """
    if not (math.isfinite(vmin) and math.isfinite(vmax)):
        raise InvalidInputError("choose_qparams: range must be finite")
    if vmin > vmax:
        raise InvalidInputError(f"choose_qparams: min {vmin} > max {vmax}")
    if symmetric:
        scale = max(abs(vmin), abs(vmax)) / 127.0
        if scale <= 0.0:  # zero or subnormal-underflow range
            return QuantParams(1.0, 0)
        return QuantParams(scale, 0)
    lo = min(vmin, 0.0)
    hi = max(vmax, 0.0)
    scale = (hi - lo) / 255.0
    if scale <= 0.0:
        return QuantParams(1.0, 0)
    zp = round_half_away_scalar(-128.0 - lo / scale)
    zp = max(INT8_MIN, min(INT8_MAX, zp))
    return QuantParams(scale, zp)


# ---------------------------------------------------------------------------
# Fixed-point requantization: int32 accumulator -> int8 output domain.
#
# A real multiplier M (= s_in * s_w / s_out) is encoded as a Q31 mantissa m0
# in [2^30, 2^31) and a right shift, M = m0 / 2^31 / 2^shift. Applying it is
# a rounding-doubling high multiply followed by a rounding right shift, both
# with ties away from zero.
# ---------------------------------------------------------------------------

_NUDGE_POS = np.int64(1 << 30)
_NUDGE_NEG = np.int64(1 - (1 << 30))


@dataclass(frozen=True)
class FixedPointMultiplier:
    """Q31 mantissa + right shift encoding of a positive real multiplier."""

    mantissa: int
    right_shift: int

    @property
    def real_value(self) -> float:
        return self.mantissa / (1 << 31) / 2.0 ** self.right_shift


def quantize_multiplier(m: float) -> FixedPointMultiplier:
    if not (math.isfinite(m) and m > 0):
        raise InvalidInputError(f"multiplier must be finite and positive, got {m}")
    mant, exp = math.frexp(m)  # m = mant * 2**exp with mant in [0.5, 1)
    m0 = int(math.floor(mant * (1 << 31) + 0.5))
    if m0 == (1 << 31):
        m0 //= 2
        exp += 1
    return FixedPointMultiplier(m0, -exp)


_MASK31 = np.int64((1 << 31) - 1)
_S63 = np.int64(63)


def _srdhm(x: np.ndarray, m0: int) -> np.ndarray:
    """Rounding doubling high multiply of int32-range x by Q31 m0.

    The nudged sum is divided by 2^31 truncating toward zero (C semantics),
    which together with the nudge rounds to nearest, ties away from zero.
    Branch-free: sign bits select the nudge and the truncation bias.
    """
    v = x * np.int64(m0)
    # nudge: 2^30 for v >= 0, 1 - 2^30 for v < 0 (sign word is 0 or -1)
    nudge = (v >> _S63) * np.int64((1 << 31) - 1)
    nudge += _NUDGE_POS
    v += nudge
    # truncate-toward-zero division by 2^31: bias negatives before the shift
    v += (v >> _S63) & _MASK31
    v >>= np.int64(31)
    return v


def _rounding_rshift(x: np.ndarray, exponent: int) -> np.ndarray:
    """Arithmetic right shift rounding to nearest, ties away from zero."""
    if exponent == 0:
        return x
    mask = np.int64((1 << exponent) - 1)
    threshold = x >> _S63
    threshold &= np.int64(1)
    threshold += mask >> np.int64(1)  # (mask >> 1) + (1 if x < 0 else 0)
    remainder = x & mask
    remainder -= threshold
    out = x >> np.int64(exponent)
    # add 1 where remainder > threshold, i.e. remainder - threshold - 1 >= 0
    remainder -= np.int64(1)
    remainder >>= _S63
    out += np.int64(1)
    out += remainder
    return out


def multiply_by_quantized_multiplier(acc: np.ndarray, mult: FixedPointMultiplier) -> np.ndarray:
    """Apply the encoded multiplier to an int64 array of int32-range values."""
    acc = np.asarray(acc, dtype=np.int64)
    if mult.right_shift >= 0:
        return _rounding_rshift(_srdhm(acc, mult.mantissa), mult.right_shift)
    # Multiplier >= 1: pre-shift left. Exact python-int path; rare, and the
    # int64 fast path could overflow for large accumulators.
    left = -mult.right_shift
    flat = acc.reshape(-1).tolist()
    out = [_srdhm_scalar(v << left, mult.mantissa) for v in flat]
    return np.asarray(out, dtype=np.int64).reshape(acc.shape)


def _srdhm_scalar(a: int, b: int) -> int:
    ab = a * b
    nudge = (1 << 30) if ab >= 0 else (1 - (1 << 30))
    v = ab + nudge
    return v >> 31 if v >= 0 else -((-v) >> 31)


_jit_requant = None
_jit_tried = False


def _get_jit_requant():
    """Compile the fused requant loop once; None when numba is unavailable."""
    global _jit_requant, _jit_tried
    if _jit_tried:
        return _jit_requant
    _jit_tried = True
    try:
        import numba
    except ImportError:
        return None

    @numba.njit("int8[::1](int64[::1], int64, int64, int64, int64)",
                cache=True, nogil=True)
    def kernel(acc, m0, right_shift, zero_point, floor):  # pragma: no cover
        n = acc.size
        out = np.empty(n, dtype=np.int8)
        for i in range(n):
            v = acc[i] * m0
            v += (1 << 30) if v >= 0 else (1 - (1 << 30))
            if v < 0:
                v += (1 << 31) - 1  # truncate toward zero at the next shift
            v >>= 31
            if right_shift > 0:
                mask = (np.int64(1) << right_shift) - 1
                remainder = v & mask
                threshold = (mask >> 1) + (1 if v < 0 else 0)
                v >>= right_shift
                if remainder > threshold:
                    v += 1
            v += zero_point
            if v < floor:
                v = floor
            elif v > 127:
                v = 127
            out[i] = v
        return out

    _jit_requant = kernel
    return kernel


def requantize_to_int8(acc: np.ndarray, mult: FixedPointMultiplier, zero_point: int,
                       floor: int = INT8_MIN) -> np.ndarray:
    """Rescale int32 accumulators into int8 codes of the output domain.

    Semantically multiply_by_quantized_multiplier followed by zero-point add
    and clamp to [floor, 127]; a floor above -128 expresses a fused integer
    ReLU (max with the output zero_point). The fused single-pass kernel is
    the hot path; the numpy pipeline below is the fallback and the reference.
    """
    acc = np.asarray(acc, dtype=np.int64)
    if mult.right_shift >= 0:
        kernel = _get_jit_requant()
        if kernel is not None:
            flat = np.ascontiguousarray(acc.reshape(-1))
            out = kernel(flat, mult.mantissa, mult.right_shift, zero_point, floor)
            return out.reshape(acc.shape)
    y = multiply_by_quantized_multiplier(acc, mult) + np.int64(zero_point)
    return np.clip(y, floor, INT8_MAX).astype("<i1")


def div_round_half_away(numer: np.ndarray, denom: int) -> np.ndarray:
    """Integer division rounding to nearest, ties away from zero (denom > 0)."""
    n = np.asarray(numer, dtype=np.int64)
    q, r = np.divmod(np.abs(n), np.int64(denom))
    q = q + (2 * r >= denom).astype(np.int64)
    return np.sign(n) * q
