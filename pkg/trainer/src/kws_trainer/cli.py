"""kws-train: train the keyword CNN and export a KWSM model file."""

import argparse
import sys

from .train import QAT_MODES, TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kws-train", description=__doc__)
    parser.add_argument("--data", required=True, help="speech-commands style dataset root")
    parser.add_argument("--keyword", default="marvin")
    parser.add_argument("--qat", default="off", choices=QAT_MODES)
    parser.add_argument("--out", default="model.kwsm")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--subset", default="full", choices=("full", "balanced10x"),
                        help="balanced10x: all keyword clips + 10x sampled negatives")
    parser.add_argument("--class-weights", default="fixed", choices=("fixed", "auto"),
                        help="auto recomputes weights from the actual training set")
    parser.add_argument("--pretrained", help="float model to adapt (qat=finetune)")
    parser.add_argument("--finetune-epochs", type=int, default=3)
    parser.add_argument("--features-cache", help="directory for cached MFCC features")
    parser.add_argument("--log", help="write the JSON training log here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        qat_mode=args.qat,
        seed=args.seed,
        batch_size=args.batch_size,
        subset=args.subset,
        class_weight_mode=args.class_weights,
        finetune_from=args.pretrained,
        finetune_epochs=args.finetune_epochs,
    )
    try:
        log = train(cfg, args.data, keyword=args.keyword, out_path=args.out,
                    features_cache=args.features_cache, log_path=args.log)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {log['model_file']} ({log['model_bytes']} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
