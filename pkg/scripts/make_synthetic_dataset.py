#!/usr/bin/env python3
"""Build a miniature speech-commands style dataset of synthetic clips.

Each word gets a characteristic two-tone signature with per-clip jitter
(frequency, phase, amplitude, noise, onset), so a keyword classifier is
learnable but not trivial. Layout matches the real dataset: one folder per
word plus validation_list.txt / testing_list.txt at the root.

Usage:
  python scripts/make_synthetic_dataset.py --out DIR [--keyword-clips 120]
      [--clips-per-word 40] [--seed 0]
"""

import argparse
import sys
import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000

# word -> (first tone Hz, second tone Hz, AM rate Hz)
WORD_BANK = {
    "marvin": (520.0, 1960.0, 6.0),
    "seven": (300.0, 900.0, 3.0),
    "cat": (1200.0, 3300.0, 9.0),
    "dog": (240.0, 2600.0, 5.0),
    "house": (800.0, 1500.0, 12.0),
    "zero": (1700.0, 650.0, 4.0),
    "bird": (2500.0, 4200.0, 7.0),
    "tree": (450.0, 5200.0, 10.0),
}


def synth_word_clip(word: str, rng: np.random.Generator) -> np.ndarray:
    f1, f2, am = WORD_BANK[word]
    t = np.arange(CLIP_SAMPLES) / SAMPLE_RATE
    jitter = lambda f: f * rng.uniform(0.94, 1.06)
    onset = rng.uniform(0.05, 0.25)
    length = rng.uniform(0.45, 0.7)
    mid = onset + length / 2.0

    x = np.zeros(CLIP_SAMPLES)
    first = (t >= onset) & (t < mid)
    second = (t >= mid) & (t < onset + length)
    x[first] = np.sin(2 * np.pi * jitter(f1) * t[first] + rng.uniform(0, 2 * np.pi))
    x[second] = 0.9 * np.sin(2 * np.pi * jitter(f2) * t[second] + rng.uniform(0, 2 * np.pi))
    x *= 1.0 + 0.35 * np.sin(2 * np.pi * am * t + rng.uniform(0, 2 * np.pi))
    x *= rng.uniform(0.25, 0.7)
    x += rng.normal(0.0, rng.uniform(0.01, 0.05), CLIP_SAMPLES)
    peak = np.abs(x).max()
    return x * (0.95 / peak) if peak > 0.95 else x


def write_clip(path: Path, samples: np.ndarray) -> None:
    pcm = np.clip(samples * 32768.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE)
        wav.writeframes(pcm.tobytes())


def build(out_dir: Path, keyword: str, keyword_clips: int, clips_per_word: int,
          seed: int) -> None:
    rng = np.random.default_rng(seed)
    val_lines, test_lines = [], []
    for word in WORD_BANK:
        count = keyword_clips if word == keyword else clips_per_word
        word_dir = out_dir / word
        word_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            name = f"{word}_{i:04d}.wav"
            write_clip(word_dir / name, synth_word_clip(word, rng))
            if i % 10 == 8:
                val_lines.append(f"{word}/{name}")
            elif i % 10 == 9:
                test_lines.append(f"{word}/{name}")
    (out_dir / "validation_list.txt").write_text("\n".join(val_lines) + "\n")
    (out_dir / "testing_list.txt").write_text("\n".join(test_lines) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--keyword", default="marvin", choices=sorted(WORD_BANK))
    parser.add_argument("--keyword-clips", type=int, default=120)
    parser.add_argument("--clips-per-word", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    out_dir = Path(args.out)
    build(out_dir, args.keyword, args.keyword_clips, args.clips_per_word, args.seed)
    n = sum(1 for _ in out_dir.rglob("*.wav"))
    print(f"wrote {n} clips under {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
