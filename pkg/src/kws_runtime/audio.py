"""WAV ingestion: RIFF/WAVE, PCM signed 16-bit little-endian, mono, 16 kHz."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip
from .errors import UnsupportedWavError


def read_wav(path) -> AudioClip:
    """Decode a wav file; samples are mapped to [-1, 1) by dividing by 32768.

    Anything other than PCM s16le mono at 16000 Hz raises UnsupportedWavError.
    Missing files raise FileNotFoundError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with wave.open(str(path), "rb") as wav:
            if wav.getcomptype() != "NONE":
                raise UnsupportedWavError(f"{path}: compressed wav ({wav.getcomptype()})")
            if wav.getsampwidth() != 2:
                raise UnsupportedWavError(f"{path}: sample width {wav.getsampwidth() * 8} bit, need 16")
            if wav.getnchannels() != 1:
                raise UnsupportedWavError(f"{path}: {wav.getnchannels()} channels, need mono")
            if wav.getframerate() != SAMPLE_RATE:
                raise UnsupportedWavError(f"{path}: {wav.getframerate()} Hz, need {SAMPLE_RATE}")
            raw = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedWavError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, SAMPLE_RATE)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Encode float samples in [-1, 1) as PCM s16le mono (test/fixture helper)."""
    pcm = np.clip(np.asarray(samples, dtype=np.float64) * 32768.0, -32768, 32767)
    pcm = pcm.astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.tobytes())
