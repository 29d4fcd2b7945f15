"""Fake quantization for QAT: int8 forward simulation, full-precision backward.

The forward transform is exactly dequantize(quantize(x)) under the runtime's
rules: q = clamp(round_half_away(x / scale) + zero_point, -128, 127),
x' = scale * (q - zero_point). The backward pass is a straight-through
estimator. Weights use per-tensor symmetric parameters recomputed from the
current tensor each forward; activations use EMA min/max observers.
"""

import math

import torch
from torch import nn


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def choose_qparams(lo: float, hi: float, symmetric: bool = False):
    """Same parameter-selection rule as the runtime's calibration."""
    if symmetric:
        scale = max(abs(lo), abs(hi)) / 127.0
        return (1.0, 0) if scale <= 0.0 else (scale, 0)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    scale = (hi - lo) / 255.0
    if scale <= 0.0:
        return (1.0, 0)
    zp = _round_half_away(-128.0 - lo / scale)
    return (scale, max(-128, min(127, zp)))


class _FakeQuant(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale, zero_point):
        # round half away from zero: trunc(v + copysign(0.5, v)); the
        # zero-point add and subtract fold into shifted clamp bounds
        v = x / scale
        v = torch.trunc(v + torch.copysign(torch.full_like(v, 0.5), v))
        v = torch.clamp(v, -128 - zero_point, 127 - zero_point)
        return v * scale

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None, None  # straight-through


def fake_quant(x: torch.Tensor, scale: float, zero_point: int) -> torch.Tensor:
    return _FakeQuant.apply(x, scale, zero_point)


def fake_quant_weight(w: torch.Tensor) -> torch.Tensor:
    """Symmetric per-tensor fake quant from the tensor's current range."""
    with torch.no_grad():
        lo, hi = float(w.min()), float(w.max())
    scale, zp = choose_qparams(lo, hi, symmetric=True)
    return fake_quant(w, scale, zp)


class ActObserver(nn.Module):
    """EMA min/max observer with asymmetric fake quantization."""

    def __init__(self, momentum: float = 0.99):
        super().__init__()
        self.momentum = momentum
        self.register_buffer("lo", torch.zeros(1))
        self.register_buffer("hi", torch.zeros(1))
        self.register_buffer("initialized", torch.zeros(1, dtype=torch.bool))

    @torch.no_grad()
    def observe(self, x: torch.Tensor) -> None:
        lo, hi = x.min(), x.max()
        if not bool(self.initialized):
            self.lo.fill_(float(lo))
            self.hi.fill_(float(hi))
            self.initialized.fill_(True)
        else:
            m = self.momentum
            self.lo.mul_(m).add_((1.0 - m) * lo)
            self.hi.mul_(m).add_((1.0 - m) * hi)

    def range(self):
        return float(self.lo), float(self.hi)

    def qparams(self):
        return choose_qparams(*self.range())

    def forward(self, x: torch.Tensor, observe: bool = True) -> torch.Tensor:
        if self.training and observe:
            self.observe(x)
        if not bool(self.initialized):
            return x
        scale, zp = self.qparams()
        return fake_quant(x, scale, zp)
