"""MFCC frontend for training, numerically matched to the runtime's.

Same constants and formulas as the inference runtime (25 ms Hamming frames,
10 ms hop, 512-point power spectrum, 40 HTK mel filters over 40 Hz - 7.6 kHz,
natural log with 1e-10 floor, orthonormal DCT-II, 20 coefficients), written
against numpy only. Parity with the runtime CLI is gated at 1e-4 per
coefficient by the test suite.
"""

import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000
FRAME_LEN = 400
HOP = 160
FFT_LEN = 512
N_MELS = 40
FMIN = 40.0
FMAX = 7600.0
N_COEFFS = 20
LOG_FLOOR = 1e-10
N_FRAMES = (CLIP_SAMPLES - FRAME_LEN) // HOP + 1  # 98


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _filterbank() -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2))
    bins = np.arange(FFT_LEN // 2 + 1) * (SAMPLE_RATE / FFT_LEN)
    weights = np.zeros((N_MELS, bins.size))
    for m in range(N_MELS):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        weights[m] = np.maximum(0.0, np.minimum((bins - lo) / (mid - lo),
                                                (hi - bins) / (hi - mid)))
    return weights


def _dct_matrix() -> np.ndarray:
    m = np.arange(N_MELS)
    mat = np.cos(np.pi * np.arange(N_COEFFS)[:, None] * (m + 0.5) / N_MELS)
    mat *= np.sqrt(2.0 / N_MELS)
    mat[0] *= np.sqrt(0.5)
    return mat


_BANK = _filterbank()
_DCT = _dct_matrix()
_WINDOW = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(FRAME_LEN) / FRAME_LEN)


def extract(samples: np.ndarray) -> np.ndarray:
    """1-second clip (padded/truncated) -> (98, 20) MFCC matrix."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < CLIP_SAMPLES:
        x = np.pad(x, (0, CLIP_SAMPLES - x.size))
    else:
        x = x[:CLIP_SAMPLES]
    idx = (np.arange(N_FRAMES) * HOP)[:, None] + np.arange(FRAME_LEN)[None, :]
    frames = x[idx] * _WINDOW
    spec = np.fft.rfft(frames, n=FFT_LEN, axis=-1)
    power = (spec.real**2 + spec.imag**2) / FFT_LEN
    log_mel = np.log(np.maximum(power @ _BANK.T, LOG_FLOOR))
    return log_mel @ _DCT.T


def read_wav(path) -> np.ndarray:
    """PCM s16le mono 16 kHz only; samples scaled to [-1, 1)."""
    with wave.open(str(Path(path)), "rb") as wav:
        if (wav.getcomptype(), wav.getsampwidth(), wav.getnchannels(),
                wav.getframerate()) != ("NONE", 2, 1, SAMPLE_RATE):
            raise ValueError(f"{path}: need PCM s16le mono {SAMPLE_RATE} Hz")
        raw = wav.readframes(wav.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
