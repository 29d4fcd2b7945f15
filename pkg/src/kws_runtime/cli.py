"""Command-line surface: mfcc, infer, eval, bench, quantize.

Exit codes: 0 success (or keyword detected), 1 non-keyword, 2 usage error,
3 I/O error (wav/dataset), 4 model error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .audio import read_wav
from .dsp import MfccConfig, extract_features
from .engine import run_inference
from .errors import DatasetLayoutError, ModelFormatError, UnsupportedWavError
from .harness import benchmark, evaluate, index_dataset, report_to_json
from .model_io import calibrate_and_quantize, load_model, save_model

EXIT_KEYWORD = 0
EXIT_NON_KEYWORD = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MODEL = 4


class _CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise _CliFailure(EXIT_MODEL, f"model file not found: {path}")
    except ModelFormatError as exc:
        raise _CliFailure(EXIT_MODEL, f"bad model file {path}: {exc}")


def _read_clip(path):
    try:
        return read_wav(path)
    except FileNotFoundError:
        raise _CliFailure(EXIT_IO, f"wav file not found: {path}")
    except UnsupportedWavError as exc:
        raise _CliFailure(EXIT_IO, str(exc))


def _features_csv(features) -> str:
    return "\n".join(",".join(f"{v:.17g}" for v in row) for row in features) + "\n"


def _cmd_mfcc(args) -> int:
    clip = _read_clip(args.wav)
    csv = _features_csv(extract_features(clip, MfccConfig()))
    if args.out:
        Path(args.out).write_text(csv)
    else:
        sys.stdout.write(csv)
    return 0


def _cmd_infer(args) -> int:
    graph = _load_model(args.model)
    clip = _read_clip(args.wav)
    score = run_inference(graph, extract_features(clip, MfccConfig()))
    keyword = score >= args.threshold
    decision = "keyword" if keyword else "non_keyword"
    if args.json:
        print(f'{{"score": {score:.6f}, "decision": "{decision}", "threshold": {args.threshold}}}')
    else:
        print(f"score={score:.6f}")
        print(f"decision={decision}")
    return EXIT_KEYWORD if keyword else EXIT_NON_KEYWORD


def _cmd_eval(args) -> int:
    graph = _load_model(args.model)
    try:
        indexes = index_dataset(args.data, keyword=args.keyword)
    except DatasetLayoutError as exc:
        raise _CliFailure(EXIT_IO, str(exc))
    model_size = Path(args.model).stat().st_size
    report = evaluate(graph, indexes[args.split], MfccConfig(), threshold=args.threshold,
                      model_size_bytes=model_size, workers=args.workers)
    text = report_to_json(report) if args.json else report.format_text()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_bench(args) -> int:
    graph = _load_model(args.model)
    report = benchmark(graph, MfccConfig(), n_runs=args.runs)
    print(report_to_json(report) if args.json else report.format_text())
    return 0


def _cmd_quantize(args) -> int:
    graph = _load_model(args.float_model)
    if graph.mode != "float":
        raise _CliFailure(EXIT_MODEL, f"{args.float_model} is already an integer model")
    calib_dir = Path(args.calib)
    if not calib_dir.is_dir():
        raise _CliFailure(EXIT_IO, f"calibration directory not found: {calib_dir}")
    wavs = sorted(calib_dir.rglob("*.wav"))
    if not wavs:
        raise _CliFailure(EXIT_IO, f"no wav files under {calib_dir}")
    cfg = MfccConfig()
    features = [extract_features(_read_clip(p), cfg) for p in wavs]
    quantized = calibrate_and_quantize(graph, features, fold_bn=not args.no_fold_bn)
    save_model(quantized, args.out)
    print(f"wrote {args.out} ({Path(args.out).stat().st_size} bytes, "
          f"calibrated on {len(wavs)} clips)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kws", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mfcc", help="extract a 98x20 MFCC matrix from a wav")
    p.add_argument("wav")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=_cmd_mfcc)

    p = sub.add_parser("infer", help="score one wav with a model")
    p.add_argument("wav")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="evaluate a model over a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="speech-commands style dataset root")
    p.add_argument("--keyword", default="marvin")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="also write the report to this file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="latency benchmark on a synthetic clip")
    p.add_argument("--model", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("quantize", help="calibrate and quantize a float model")
    p.add_argument("float_model")
    p.add_argument("--calib", required=True, help="directory of calibration wavs")
    p.add_argument("--out", required=True)
    p.add_argument("--no-fold-bn", action="store_true",
                   help="keep batchnorm as standalone integer rescale layers")
    p.set_defaults(func=_cmd_quantize)
    return parser


def main(argv=None) -> int:
    from ._mem import enable_low_latency_malloc
    enable_low_latency_malloc()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
