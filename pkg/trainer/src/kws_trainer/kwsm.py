"""KWSM model-file encoding for trained float models.

Implements the runtime's binary format verbatim: "KWSM" magic, u16 version,
u64 total size, mode byte, input shape, layer records (kind tag, flag byte,
kind-specific scalars, little-endian tensor blobs), trailing CRC32. Batchnorm
layers are written in the four-vector training form (gamma, beta, running
mean, running variance, epsilon). Only the float mode is read or written
here; quantization belongs to the runtime.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .model import KwsNet

MAGIC = b"KWSM"
VERSION = 1

KIND_CONV2D = 1
KIND_MUL_ADD = 2
KIND_MAXPOOL2D = 3
KIND_MEAN = 4
KIND_FULLY_CONNECTED = 5
KIND_LOGISTIC = 6

ELEM_REAL32 = 0

FLAG_RELU = 1
FLAG_FOUR_PARAM = 2

INPUT_SHAPE = (98, 20, 1)


def _pack_shape(buf: bytearray, shape) -> None:
    buf += struct.pack("<B", len(shape))
    buf += struct.pack(f"<{len(shape)}I", *shape)


def _pack_tensor(buf: bytearray, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf += struct.pack("<BB", ELEM_REAL32, 0)
    _pack_shape(buf, arr.shape)
    raw = arr.tobytes()
    buf += struct.pack("<Q", len(raw))
    buf += raw


def _layer(buf: bytearray, kind: int, flags: int, tensors, extra: bytes = b"") -> None:
    buf += struct.pack("<BB", kind, flags)
    buf += extra
    buf += struct.pack("<B", len(tensors))
    for arr in tensors:
        _pack_tensor(buf, arr)


def model_to_bytes(net: KwsNet) -> bytes:
    """Serialize a trained float model deterministically."""
    net = net.eval()

    def npy(t):
        return t.detach().cpu().numpy()

    conv_w = lambda conv: npy(conv.weight).transpose(2, 3, 1, 0)  # OIHW -> HWIO
    fc_w = lambda fc: npy(fc.weight).T  # (out, in) -> (in, out)

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", VERSION)
    size_at = len(buf)
    buf += struct.pack("<Q", 0)
    buf += struct.pack("<BB", 0, 0)  # float mode, no input quant params
    _pack_shape(buf, INPUT_SHAPE)
    buf += struct.pack("<I", 10)

    _layer(buf, KIND_CONV2D, 0, [conv_w(net.conv1), npy(net.conv1.bias)])
    _layer(buf, KIND_MUL_ADD, FLAG_RELU | FLAG_FOUR_PARAM,
           [npy(net.bn1.weight), npy(net.bn1.bias),
            npy(net.bn1.running_mean), npy(net.bn1.running_var)],
           extra=struct.pack("<d", net.bn1.eps))
    _layer(buf, KIND_MAXPOOL2D, 0, [], extra=struct.pack("<BB", 2, 2))
    _layer(buf, KIND_CONV2D, 0, [conv_w(net.conv2), npy(net.conv2.bias)])
    _layer(buf, KIND_MUL_ADD, FLAG_RELU | FLAG_FOUR_PARAM,
           [npy(net.bn2.weight), npy(net.bn2.bias),
            npy(net.bn2.running_mean), npy(net.bn2.running_var)],
           extra=struct.pack("<d", net.bn2.eps))
    _layer(buf, KIND_MAXPOOL2D, 0, [], extra=struct.pack("<BB", 2, 2))
    _layer(buf, KIND_MEAN, 0, [])
    _layer(buf, KIND_FULLY_CONNECTED, FLAG_RELU, [fc_w(net.fc1), npy(net.fc1.bias)])
    _layer(buf, KIND_FULLY_CONNECTED, 0, [fc_w(net.fc2), npy(net.fc2.bias)])
    _layer(buf, KIND_LOGISTIC, 0, [])

    total = len(buf) + 4
    struct.pack_into("<Q", buf, size_at, total)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def save_model(net: KwsNet, path) -> None:
    Path(path).write_bytes(model_to_bytes(net))


def save_ranges_sidecar(path, recommended: dict) -> Path:
    """QAT's observed ranges + recommended QuantParams, next to the model."""
    sidecar = Path(str(path) + ".ranges.json")
    sidecar.write_text(json.dumps(recommended, indent=2, sort_keys=True) + "\n")
    return sidecar


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return out

    def shape(self):
        (ndim,) = self.take("<B")
        return tuple(self.take(f"<{ndim}I"))

    def tensor(self):
        elem, has_quant = self.take("<BB")
        if elem != ELEM_REAL32 or has_quant:
            raise ValueError("trainer reads float tensors only")
        shape = self.shape()
        (nbytes,) = self.take("<Q")
        raw = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def load_model(path) -> KwsNet:
    """Read a float KWSM file back into a KwsNet (for QAT fine-tuning)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a KWSM file")
    (version,) = struct.unpack_from("<H", data, 4)
    (total,) = struct.unpack_from("<Q", data, 6)
    if version != VERSION or total != len(data):
        raise ValueError(f"{path}: unsupported version or truncated file")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if crc != zlib.crc32(data[:-4]) & 0xFFFFFFFF:
        raise ValueError(f"{path}: checksum mismatch")

    r = _Reader(data[:-4])
    r.pos = 14
    mode, flags = r.take("<BB")
    if mode != 0:
        raise ValueError(f"{path}: not a float-mode model")
    r.shape()
    (layer_count,) = r.take("<I")

    tensors = []
    for _ in range(layer_count):
        kind, lflags = r.take("<BB")
        if kind == KIND_MAXPOOL2D:
            r.take("<BB")
        elif kind == KIND_MUL_ADD and lflags & FLAG_FOUR_PARAM:
            r.take("<d")
        (count,) = r.take("<B")
        tensors.append((kind, [r.tensor() for _ in range(count)]))

    net = KwsNet()
    conv1, bn1, conv2, bn2, fc1, fc2 = (t for k, t in tensors if k in (
        KIND_CONV2D, KIND_MUL_ADD, KIND_FULLY_CONNECTED))
    with torch.no_grad():
        net.conv1.weight.copy_(torch.from_numpy(conv1[0].transpose(3, 2, 0, 1)))
        net.conv1.bias.copy_(torch.from_numpy(conv1[1]))
        for bn, vals in ((net.bn1, bn1), (net.bn2, bn2)):
            bn.weight.copy_(torch.from_numpy(vals[0]))
            bn.bias.copy_(torch.from_numpy(vals[1]))
            bn.running_mean.copy_(torch.from_numpy(vals[2]))
            bn.running_var.copy_(torch.from_numpy(vals[3]))
        net.conv2.weight.copy_(torch.from_numpy(conv2[0].transpose(3, 2, 0, 1)))
        net.conv2.bias.copy_(torch.from_numpy(conv2[1]))
        net.fc1.weight.copy_(torch.from_numpy(fc1[0].T.copy()))
        net.fc1.bias.copy_(torch.from_numpy(fc1[1]))
        net.fc2.weight.copy_(torch.from_numpy(fc2[0].T.copy()))
        net.fc2.bias.copy_(torch.from_numpy(fc2[1]))
    return net
