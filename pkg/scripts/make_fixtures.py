#!/usr/bin/env python3
"""Regenerate the committed test fixtures under tests/data/.

Builds a seeded random default-architecture model, calibrates it on a
synthetic feature suite, quantizes it (folded and unfolded), and freezes:

  fixture_float.kwsm          float reference model
  fixture_int8.kwsm           calibrated int8 model (batchnorm folded)
  fixture_int8_unfolded.kwsm  same calibration, standalone mul_add layers
  fixture_features.npy        one exact feature matrix (float64)
  fixture_golden.json         frozen scores + measured parity envelope

Deterministic: rerunning produces byte-identical outputs.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from kws_runtime.engine import accumulator_extrema, random_float_model, run_inference
from kws_runtime.model_io import calibrate_and_quantize, save_model

from synth import feature_suite

MODEL_SEED = 20
CALIB_SEED = 1000
GOLDEN_SEED = 31337
PARITY_SEED = 777

DATA_DIR = ROOT / "tests" / "data"


def main():
    DATA_DIR.mkdir(parents=True, exist_ok=True)

    graph = random_float_model(MODEL_SEED)
    calib = feature_suite(50, seed=CALIB_SEED)
    folded = calibrate_and_quantize(graph, calib, fold_bn=True)
    unfolded = calibrate_and_quantize(graph, calib, fold_bn=False)

    save_model(graph, DATA_DIR / "fixture_float.kwsm")
    save_model(folded, DATA_DIR / "fixture_int8.kwsm")
    save_model(unfolded, DATA_DIR / "fixture_int8_unfolded.kwsm")

    golden_features = feature_suite(1, seed=GOLDEN_SEED)[0]
    np.save(DATA_DIR / "fixture_features.npy", golden_features)

    int_score = run_inference(folded, golden_features)
    float_score = run_inference(graph, golden_features)

    suite = feature_suite(100, seed=PARITY_SEED)
    deltas = [abs(run_inference(graph, f) - run_inference(folded, f)) for f in suite]
    acc_lo, acc_hi = 0, 0
    for features in suite[:20]:
        for entry in accumulator_extrema(folded, features):
            if entry is not None:
                acc_lo = min(acc_lo, entry[0])
                acc_hi = max(acc_hi, entry[1])

    golden = {
        "model_seed": MODEL_SEED,
        "calib_seed": CALIB_SEED,
        "golden_seed": GOLDEN_SEED,
        "integer_score": int_score,
        "float_score": float_score,
        "parity_suite_seed": PARITY_SEED,
        "parity_max_delta": max(deltas),
        "parity_mean_delta": float(np.mean(deltas)),
        "accumulator_min": acc_lo,
        "accumulator_max": acc_hi,
        "float_bytes": (DATA_DIR / "fixture_float.kwsm").stat().st_size,
        "int8_bytes": (DATA_DIR / "fixture_int8.kwsm").stat().st_size,
    }
    (DATA_DIR / "fixture_golden.json").write_text(json.dumps(golden, indent=2) + "\n")

    print(f"integer score : {int_score}")
    print(f"float score   : {float_score}")
    print(f"parity max |d|: {max(deltas):.5f}  mean |d|: {np.mean(deltas):.5f}")
    print(f"acc range     : [{acc_lo}, {acc_hi}]")
    print(f"sizes         : float {golden['float_bytes']} B, int8 {golden['int8_bytes']} B "
          f"(ratio {golden['int8_bytes'] / golden['float_bytes']:.3f})")


if __name__ == "__main__":
    main()
