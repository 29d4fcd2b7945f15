"""MFCC feature extraction for 1-second 16 kHz keyword clips.

Pipeline: 25 ms Hamming-windowed frames with 10 ms hop, zero-padded 512-point
FFT power spectrum, 40 triangular mel filters from 40 Hz to 7.6 kHz (HTK mel
scale), natural log with a floor, orthonormal DCT-II keeping the first 20
coefficients. A canonical 16000-sample clip yields a 98x20 feature matrix.

Everything here is a pure function of its inputs; the filterbank is built
once and shared read-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fftpack import dct

from .errors import ConfigError, InvalidInputError

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000

N_FRAMES = 98
N_COEFFS = 20


@dataclass(frozen=True)
class MfccConfig:
    """Frontend constants. Defaults reproduce the 98x20 feature layout."""

    frame_len: int = 400
    hop: int = 160
    fft_len: int = 512
    n_mels: int = 40
    fmin: float = 40.0
    fmax: float = 7600.0
    n_coeffs: int = 20
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.frame_len <= 0 or self.hop <= 0:
            raise ConfigError("frame_len and hop must be positive")
        if self.fft_len < self.frame_len:
            raise ConfigError(f"fft_len {self.fft_len} < frame_len {self.frame_len}")
        if self.fft_len & (self.fft_len - 1) != 0:
            raise ConfigError(f"fft_len {self.fft_len} is not a power of two")
        if not (0 < self.fmin < self.fmax):
            raise ConfigError(f"need 0 < fmin < fmax, got [{self.fmin}, {self.fmax}]")
        if not (0 < self.n_coeffs <= self.n_mels):
            raise ConfigError("n_coeffs must be in (0, n_mels]")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1


@dataclass(frozen=True)
class AudioClip:
    """Mono audio, amplitudes normalized to [-1, 1], 16 kHz only."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidInputError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidInputError(f"samples must be 1-D, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return int(self.samples.size)


def canonicalize(clip: AudioClip, target_len: int = CLIP_SAMPLES) -> AudioClip:
    """Zero-pad short clips at the end, truncate long ones, to target_len."""
    n = len(clip)
    if n == target_len:
        return clip
    if n > target_len:
        return AudioClip(clip.samples[:target_len], clip.sample_rate)
    padded = np.zeros(target_len, dtype=np.float64)
    padded[:n] = clip.samples
    return AudioClip(padded, clip.sample_rate)


def frame_count(signal_len: int, frame_len: int, hop: int) -> int:
    return (signal_len - frame_len) // hop + 1


def frame_signal(clip: AudioClip, cfg: MfccConfig) -> np.ndarray:
    """Slice the clip into overlapping frames; frame i starts at i * hop."""
    n = len(clip)
    if n < cfg.frame_len:
        raise InvalidInputError(f"clip of {n} samples is shorter than one frame ({cfg.frame_len})")
    n_frames = frame_count(n, cfg.frame_len, cfg.hop)
    starts = np.arange(n_frames) * cfg.hop
    idx = starts[:, None] + np.arange(cfg.frame_len)[None, :]
    return clip.samples[idx]


def hamming_window(n: int) -> np.ndarray:
    """w(k) = 0.54 - 0.46 cos(2 pi k / n); denominator is n, not n - 1."""
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / n)


def apply_hamming(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame * hamming_window(frame.shape[-1])


def power_spectrum(windowed_frame: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """|FFT|^2 / fft_len over the one-sided spectrum; frames are zero-padded."""
    x = np.asarray(windowed_frame, dtype=np.float64)
    spec = np.fft.rfft(x, n=cfg.fft_len, axis=-1)
    return (spec.real**2 + spec.imag**2) / cfg.fft_len


def hz_to_mel(f):
    """HTK mel scale: m = 2595 log10(1 + f/700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidInputError("hz_to_mel: negative frequency")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise InvalidInputError("mel_to_hz: negative mel value")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular filters over FFT bins; band_edges are the n_mels+2 Hz edges."""

    weights: np.ndarray
    band_edges: np.ndarray

    def __post_init__(self):
        for name in ("weights", "band_edges"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def build_mel_filterbank(cfg: MfccConfig, sample_rate: int = SAMPLE_RATE) -> MelFilterbank:
    """Place n_mels triangles on mel-equidistant edges between fmin and fmax.

    Filter m rises over edges (m, m+1) and falls over (m+1, m+2); weights are
    the triangle evaluated at the FFT bin center frequencies (peak 1.0, no
    area normalization).
    """
    if cfg.fmax > sample_rate / 2:
        raise ConfigError(f"fmax {cfg.fmax} above Nyquist {sample_rate / 2}")
    edges_mel = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(cfg.n_bins) * (sample_rate / cfg.fft_len)

    weights = np.zeros((cfg.n_mels, cfg.n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(weights.sum(axis=1) <= 0):
        raise ConfigError("mel filterbank has an empty filter; fft_len too small for n_mels")
    return MelFilterbank(weights, edges_hz)


def mfcc_frame(power: np.ndarray, bank: MelFilterbank, cfg: MfccConfig) -> np.ndarray:
    """Log mel energies -> orthonormal DCT-II, first n_coeffs kept."""
    power = np.asarray(power, dtype=np.float64)
    if power.shape[-1] != bank.weights.shape[1]:
        raise InvalidInputError(
            f"power spectrum has {power.shape[-1]} bins, filterbank expects {bank.weights.shape[1]}"
        )
    mel_energy = power @ bank.weights.T
    log_mel = np.log(np.maximum(mel_energy, cfg.log_floor))
    return dct(log_mel, type=2, axis=-1, norm="ortho")[..., : cfg.n_coeffs]


def extract_features(clip: AudioClip, cfg: MfccConfig = MfccConfig(),
                     bank: MelFilterbank | None = None) -> np.ndarray:
    """Full frontend: canonical clip -> (98, 20) MFCC matrix, row order = time."""
    clip = canonicalize(clip)
    if bank is None:
        bank = build_mel_filterbank(cfg, clip.sample_rate)
    frames = frame_signal(clip, cfg)
    windowed = apply_hamming(frames)
    power = power_spectrum(windowed, cfg)
    return mfcc_frame(power, bank, cfg)
