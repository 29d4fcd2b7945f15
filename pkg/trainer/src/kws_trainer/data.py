"""Dataset indexing, subset sampling, and feature caching for training."""

import hashlib
from pathlib import Path

import numpy as np

from . import features

SPLITS = ("train", "validation", "test")


def index_dataset(root_dir, keyword: str = "marvin") -> dict:
    """Speech-commands layout -> {split: [(path, label), ...]}.

    Splits come from validation_list.txt / testing_list.txt; folders starting
    with '_' are ignored; the keyword folder is the positive class.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    val_set = set()
    test_set = set()
    for name, bucket in (("validation_list.txt", val_set), ("testing_list.txt", test_set)):
        path = root / name
        if not path.exists():
            raise FileNotFoundError(f"dataset is missing {name}")
        bucket.update(line.strip() for line in path.read_text().splitlines() if line.strip())

    out = {split: [] for split in SPLITS}
    for word_dir in sorted(p for p in root.iterdir()
                           if p.is_dir() and not p.name.startswith(("_", "."))):
        label = 1 if word_dir.name == keyword else 0
        for wav in sorted(word_dir.glob("*.wav")):
            rel = f"{word_dir.name}/{wav.name}"
            split = "validation" if rel in val_set else "test" if rel in test_set else "train"
            out[split].append((wav, label))
    return out


def balanced_subset(entries, negative_ratio: int, seed: int):
    """All keyword clips plus a seeded random sample of negatives.

    The sample size is negative_ratio x the positive count (or every negative
    when fewer are available). Order is deterministic for a fixed seed.
    """
    positives = [e for e in entries if e[1] == 1]
    negatives = [e for e in entries if e[1] == 0]
    rng = np.random.default_rng(seed)
    want = min(len(negatives), negative_ratio * len(positives))
    picked = rng.choice(len(negatives), size=want, replace=False)
    subset = positives + [negatives[i] for i in sorted(picked)]
    return subset


def load_features(entries, cache_dir=None) -> tuple:
    """Extract (or load cached) MFCC features for every entry.

    Returns (X, y) with X shaped (n, 98, 20) float32. Cache files are keyed
    by the wav's absolute path hash.
    """
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    xs = np.empty((len(entries), features.N_FRAMES, features.N_COEFFS), dtype=np.float32)
    ys = np.empty(len(entries), dtype=np.float32)
    for i, (path, label) in enumerate(entries):
        ys[i] = label
        slot = None
        if cache:
            digest = hashlib.sha1(str(Path(path).resolve()).encode()).hexdigest()[:24]
            slot = cache / f"{digest}.npy"
            if slot.exists():
                xs[i] = np.load(slot)
                continue
        feat = features.extract(features.read_wav(path)).astype(np.float32)
        xs[i] = feat
        if slot is not None:
            np.save(slot, feat)
    return xs, ys
