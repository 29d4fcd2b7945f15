import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
DATASET_SCRIPT = REPO_ROOT / "scripts" / "make_synthetic_dataset.py"


def run_runtime_cli(*args):
    """Invoke the inference runtime's CLI (the cross-component interface)."""
    proc = subprocess.run([sys.executable, "-m", "kws_runtime.cli", *args],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def runtime_eval(model, data_root, split="test"):
    code, out, err = run_runtime_cli("eval", "--model", str(model), "--data",
                                     str(data_root), "--split", split, "--json")
    assert code == 0, err
    return json.loads(out)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """Miniature speech-commands style dataset of synthetic clips."""
    root = tmp_path_factory.mktemp("synds")
    proc = subprocess.run(
        [sys.executable, str(DATASET_SCRIPT), "--out", str(root),
         "--keyword-clips", "80", "--clips-per-word", "30", "--seed", "7"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return root


@pytest.fixture(scope="session")
def features_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("fcache")


GOLDEN_CLIP_COUNT = 20


def golden_clips() -> np.ndarray:
    """20 deterministic clips covering silence, tones, chirps, noise, clicks."""
    rng = np.random.default_rng(12345)
    t = np.arange(16000) / 16000.0
    clips = [np.zeros(16000)]  # silence
    impulse = np.zeros(16000)
    impulse[1234] = 0.9
    clips.append(impulse)
    for freq in (100.0, 440.0, 1000.0, 3150.0, 7000.0):
        clips.append(0.5 * np.sin(2 * np.pi * freq * t))
    clips.append(np.sin(2 * np.pi * (200.0 + 3000.0 * t) * t) * 0.4)  # chirp
    clips.append(rng.normal(0, 0.1, 16000))
    clips.append(rng.uniform(-0.3, 0.3, 16000))
    while len(clips) < GOLDEN_CLIP_COUNT:
        freq = rng.uniform(80, 7500)
        noise = rng.normal(0, rng.uniform(0.01, 0.1), 16000)
        env = np.exp(-0.5 * ((t - rng.uniform(0.2, 0.8)) / 0.2) ** 2)
        clips.append(np.clip(0.5 * np.sin(2 * np.pi * freq * t) * env + noise, -1, 1))
    return np.stack(clips[:GOLDEN_CLIP_COUNT])
