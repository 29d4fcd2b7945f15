"""Dataset ingestion, end-to-end evaluation, and latency benchmarking."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._mem import enable_low_latency_malloc
from .audio import read_wav
from .dsp import MfccConfig, build_mel_filterbank, extract_features, AudioClip, CLIP_SAMPLES
from .engine import ModelGraph, run_inference
from .errors import DatasetLayoutError, UnsupportedWavError

SPLITS = ("train", "validation", "test")
VALIDATION_LIST = "validation_list.txt"
TESTING_LIST = "testing_list.txt"


@dataclass(frozen=True)
class DatasetIndex:
    """Wav paths with binary labels (1 = keyword) for one split."""

    split: str
    entries: tuple

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def positives(self) -> int:
        return sum(label for _, label in self.entries)


def _read_list_file(path: Path) -> set:
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def index_dataset(root_dir, keyword: str = "marvin") -> dict:
    """Index a speech-commands style directory into train/validation/test.

    Layout: one folder per word containing wav clips, plus validation/testing
    list files at the root naming "word/clip.wav" members. Folders starting
    with '_' (background noise) are ignored. The keyword folder is the
    positive class, every other word is negative.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetLayoutError(f"{root} is not a directory")
    word_dirs = sorted(d for d in root.iterdir()
                       if d.is_dir() and not d.name.startswith(("_", ".")))
    wavs = [(d, p) for d in word_dirs for p in sorted(d.glob("*.wav"))]

    val_path = root / VALIDATION_LIST
    test_path = root / TESTING_LIST
    if not (val_path.exists() and test_path.exists()):
        if wavs:
            raise DatasetLayoutError(
                f"{root} holds wav files but no {VALIDATION_LIST}/{TESTING_LIST}")
        return {split: DatasetIndex(split, ()) for split in SPLITS}

    val_set = _read_list_file(val_path)
    test_set = _read_list_file(test_path)
    entries = {split: [] for split in SPLITS}
    for word_dir, wav in wavs:
        rel = f"{word_dir.name}/{wav.name}"
        if rel in val_set:
            split = "validation"
        elif rel in test_set:
            split = "test"
        else:
            split = "train"
        entries[split].append((wav, 1 if word_dir.name == keyword else 0))
    return {split: DatasetIndex(split, tuple(rows)) for split, rows in entries.items()}


@dataclass(frozen=True)
class LatencyStats:
    """Microsecond timing summary over n samples."""

    mean_us: float
    p50_us: float
    p99_us: float
    n: int

    @staticmethod
    def from_samples(samples_us) -> "LatencyStats":
        arr = np.asarray(samples_us, dtype=np.float64)
        return LatencyStats(float(arr.mean()), float(np.percentile(arr, 50)),
                            float(np.percentile(arr, 99)), int(arr.size))

    def to_dict(self) -> dict:
        return {"mean_us": self.mean_us, "p50_us": self.p50_us,
                "p99_us": self.p99_us, "n": self.n}


@dataclass(frozen=True)
class EvalReport:
    """Confusion counts + accuracy + latency for one dataset run."""

    tn: int
    fp: int
    fn: int
    tp: int
    skipped: int
    threshold: float
    latency: Optional[LatencyStats] = None
    model_size_bytes: Optional[int] = None

    @property
    def evaluated(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def accuracy(self) -> float:
        return (self.tn + self.tp) / self.evaluated if self.evaluated else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    def to_dict(self) -> dict:
        out = {
            "evaluated": self.evaluated, "skipped": self.skipped,
            "threshold": self.threshold,
            "tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp,
            "accuracy": round(100.0 * self.accuracy, 2),
            "precision": round(100.0 * self.precision, 2),
            "recall": round(100.0 * self.recall, 2),
        }
        if self.model_size_bytes is not None:
            out["model_size_bytes"] = self.model_size_bytes
        if self.latency is not None:
            out["latency"] = self.latency.to_dict()
        return out

    def format_text(self) -> str:
        lines = [
            f"evaluated={self.evaluated}",
            f"skipped={self.skipped}",
            f"threshold={self.threshold}",
            f"accuracy={100.0 * self.accuracy:.2f}",
            f"precision={100.0 * self.precision:.2f}",
            f"recall={100.0 * self.recall:.2f}",
        ]
        if self.model_size_bytes is not None:
            lines.append(f"model_size_bytes={self.model_size_bytes}")
        if self.latency is not None:
            lines += [f"latency_mean_us={self.latency.mean_us:.1f}",
                      f"latency_p50_us={self.latency.p50_us:.1f}",
                      f"latency_p99_us={self.latency.p99_us:.1f}"]
        lines += [
            "confusion_matrix:",
            "              pred_neg  pred_pos",
            f"actual_neg  {self.tn:10d}{self.fp:10d}",
            f"actual_pos  {self.fn:10d}{self.tp:10d}",
        ]
        return "\n".join(lines)


def classify_clip(graph: ModelGraph, clip: AudioClip, cfg: MfccConfig, bank=None) -> float:
    features = extract_features(clip, cfg, bank=bank)
    return run_inference(graph, features)


def evaluate(graph: ModelGraph, index: DatasetIndex, cfg: MfccConfig = MfccConfig(),
             threshold: float = 0.5, model_size_bytes: Optional[int] = None,
             workers: int = 1) -> EvalReport:
    """Score every clip in the index and accumulate confusion counts.

    Unreadable clips are counted as skipped, never aborting the run. The
    reduction is a pure count accumulation, so worker fan-out cannot change
    the result.
    """
    enable_low_latency_malloc()
    bank = build_mel_filterbank(cfg)

    def one(entry):
        path, label = entry
        start = time.perf_counter()
        try:
            score = classify_clip(graph, read_wav(path), cfg, bank=bank)
        except (FileNotFoundError, UnsupportedWavError):
            return None
        elapsed_us = (time.perf_counter() - start) * 1e6
        return label, score >= threshold, elapsed_us

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, index.entries))
    else:
        results = [one(e) for e in index.entries]

    counts = {"tn": 0, "fp": 0, "fn": 0, "tp": 0}
    latencies = []
    skipped = 0
    for res in results:
        if res is None:
            skipped += 1
            continue
        label, positive, elapsed_us = res
        key = ("t" if positive == bool(label) else "f") + ("p" if positive else "n")
        counts[key] += 1
        latencies.append(elapsed_us)
    return EvalReport(
        skipped=skipped, threshold=threshold,
        latency=LatencyStats.from_samples(latencies) if latencies else None,
        model_size_bytes=model_size_bytes, **counts)


@dataclass(frozen=True)
class BenchmarkReport:
    """Per-stage latency over n timed runs of one synthetic clip."""

    feature_extraction: LatencyStats
    inference: LatencyStats
    total: LatencyStats
    mode: str

    def to_dict(self) -> dict:
        return {"mode": self.mode,
                "feature_extraction": self.feature_extraction.to_dict(),
                "inference": self.inference.to_dict(),
                "total": self.total.to_dict()}

    def format_text(self) -> str:
        lines = [f"mode={self.mode}"]
        for stage, stats in (("feature", self.feature_extraction),
                             ("inference", self.inference), ("total", self.total)):
            lines += [f"{stage}_mean_us={stats.mean_us:.1f}",
                      f"{stage}_p50_us={stats.p50_us:.1f}",
                      f"{stage}_p99_us={stats.p99_us:.1f}",
                      f"{stage}_runs={stats.n}"]
        return "\n".join(lines)


def benchmark(graph: ModelGraph, cfg: MfccConfig = MfccConfig(), n_runs: int = 100,
              warmup: int = 3, seed: int = 2024) -> BenchmarkReport:
    """Wall-clock per-stage timings; warm-up runs are excluded."""
    if n_runs < 10:
        raise ValueError("n_runs must be at least 10")
    enable_low_latency_malloc()
    rng = np.random.default_rng(seed)
    clip = AudioClip(rng.uniform(-0.5, 0.5, CLIP_SAMPLES))
    bank = build_mel_filterbank(cfg)

    feature_us, infer_us, total_us = [], [], []
    for i in range(warmup + n_runs):
        t0 = time.perf_counter()
        features = extract_features(clip, cfg, bank=bank)
        t1 = time.perf_counter()
        run_inference(graph, features)
        t2 = time.perf_counter()
        if i >= warmup:
            feature_us.append((t1 - t0) * 1e6)
            infer_us.append((t2 - t1) * 1e6)
            total_us.append((t2 - t0) * 1e6)
    return BenchmarkReport(LatencyStats.from_samples(feature_us),
                           LatencyStats.from_samples(infer_us),
                           LatencyStats.from_samples(total_us), graph.mode)


def report_to_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
