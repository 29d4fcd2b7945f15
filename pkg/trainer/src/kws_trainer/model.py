"""The keyword CNN in PyTorch, mirroring the runtime's default architecture."""

import torch
from torch import nn
import torch.nn.functional as F

from .fakequant import ActObserver, fake_quant_weight


class KwsNet(nn.Module):
    """(N, 1, 98, 20) -> logits (N,). Valid padding everywhere.

    conv3x3x32 -> bn -> relu -> pool2 -> conv3x3x64 -> bn -> relu -> pool2
    -> global mean -> dropout -> fc128 -> relu -> fc1
    """

    def __init__(self, dropout: float = 0.25):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 32, 3)
        self.bn1 = nn.BatchNorm2d(32)
        self.conv2 = nn.Conv2d(32, 64, 3)
        self.bn2 = nn.BatchNorm2d(64)
        self.dropout = nn.Dropout(dropout)
        self.fc1 = nn.Linear(64, 128)
        self.fc2 = nn.Linear(128, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.max_pool2d(x, 2)
        x = F.relu(self.bn2(self.conv2(x)))
        x = F.max_pool2d(x, 2)
        x = x.mean(dim=(2, 3))
        x = self.dropout(x)
        x = F.relu(self.fc1(x))
        return self.fc2(x).squeeze(-1)


class QatKwsNet(KwsNet):
    """KwsNet with fake quantization at the deployment quantization points.

    Weights are fake-quantized per tensor (symmetric) each forward pass;
    activations carry EMA observers at the model input, after each
    conv-bn-relu block, and after each dense layer. Fake quantization is
    monotone, so it commutes with max pooling exactly; applying it after
    the pool gives identical values at a quarter of the cost. The global
    mean reuses the second block's lattice (the integer runtime keeps
    QuantParams across the mean), so that point applies the existing
    parameters without re-observing.
    """

    def __init__(self, dropout: float = 0.25):
        super().__init__(dropout)
        self.fq_in = ActObserver()
        self.fq_block1 = ActObserver()
        self.fq_block2 = ActObserver()
        self.fq_fc1 = ActObserver()
        self.fq_fc2 = ActObserver()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.fq_in(x)
        x = F.conv2d(x, fake_quant_weight(self.conv1.weight), self.conv1.bias)
        x = F.max_pool2d(F.relu(self.bn1(x)), 2)
        x = self.fq_block1(x)
        x = F.conv2d(x, fake_quant_weight(self.conv2.weight), self.conv2.bias)
        x = F.max_pool2d(F.relu(self.bn2(x)), 2)
        x = self.fq_block2(x)
        x = x.mean(dim=(2, 3))
        x = self.fq_block2(x, observe=False)
        x = self.dropout(x)
        x = F.relu(F.linear(x, fake_quant_weight(self.fc1.weight), self.fc1.bias))
        x = self.fq_fc1(x)
        x = F.linear(x, fake_quant_weight(self.fc2.weight), self.fc2.bias)
        x = self.fq_fc2(x)
        return x.squeeze(-1)

    def observed_ranges(self) -> dict:
        return {
            "input": self.fq_in.range(),
            "block1": self.fq_block1.range(),
            "block2": self.fq_block2.range(),
            "fc1": self.fq_fc1.range(),
            "fc2": self.fq_fc2.range(),
        }

    def recommended_qparams(self) -> dict:
        out = {}
        for name, obs in (("input", self.fq_in), ("block1", self.fq_block1),
                          ("block2", self.fq_block2), ("fc1", self.fq_fc1),
                          ("fc2", self.fq_fc2)):
            scale, zp = obs.qparams()
            lo, hi = obs.range()
            out[name] = {"min": lo, "max": hi, "scale": scale, "zero_point": zp}
        return out
