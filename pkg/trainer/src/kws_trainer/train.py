"""Training loop: weighted Adam on the binary keyword task, optional QAT."""

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import data, kwsm
from .model import KwsNet, QatKwsNet

QAT_MODES = ("off", "full", "finetune")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 10
    class_weight_pos: float = 24.81
    class_weight_neg: float = 0.51
    # "fixed": use the weights above (sized for the full 1:55 dataset);
    # "auto": recompute n/(2*n_class) from the actual training set, the
    # right choice for rebalanced subsets.
    class_weight_mode: str = "fixed"
    qat_mode: str = "off"
    seed: int = 0
    batch_size: int = 64
    dropout: float = 0.25
    adam_betas: tuple = (0.9, 0.999)
    subset: str = "full"  # or "balanced10x": all positives + 10x negatives
    negative_ratio: int = 10
    finetune_from: Optional[str] = None
    finetune_epochs: int = 3
    threads: int = 4

    def __post_init__(self):
        if self.qat_mode not in QAT_MODES:
            raise ValueError(f"qat_mode must be one of {QAT_MODES}")
        if self.class_weight_mode not in ("fixed", "auto"):
            raise ValueError("class_weight_mode must be 'fixed' or 'auto'")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("rates, epochs, and batch size must be positive")
        if self.class_weight_pos <= 0 or self.class_weight_neg <= 0:
            raise ValueError("class weights must be positive")
        if self.qat_mode == "finetune" and not self.finetune_from:
            raise ValueError("finetune mode needs finetune_from=<float model>")


def _seed_everything(seed: int, threads: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(threads)


def _accuracy(net: KwsNet, x: torch.Tensor, y: torch.Tensor, batch: int = 256) -> float:
    net.eval()
    hits = 0
    with torch.no_grad():
        for i in range(0, len(x), batch):
            logits = net(x[i:i + batch])
            hits += int(((logits >= 0).float() == y[i:i + batch]).sum())
    return hits / max(len(x), 1)


def train(cfg: TrainConfig, dataset_root, keyword: str = "marvin",
          out_path="model.kwsm", features_cache=None, log_path=None) -> dict:
    """Train, export a float KWSM file, and return the training log.

    QAT modes: "off" trains the plain float net; "full" trains with fake
    quantization from the start; "finetune" loads a pre-trained float model
    and adapts it with fake quantization for cfg.finetune_epochs. QAT runs
    additionally write a `<out>.ranges.json` sidecar with the observers'
    ranges and recommended QuantParams.
    """
    t_start = time.perf_counter()
    _seed_everything(cfg.seed, cfg.threads)

    index = data.index_dataset(dataset_root, keyword)
    train_entries = index["train"]
    if cfg.subset == "balanced10x":
        train_entries = data.balanced_subset(train_entries, cfg.negative_ratio, cfg.seed)
    if not train_entries:
        raise FileNotFoundError(f"no training clips under {dataset_root}")

    x_train, y_train = data.load_features(train_entries, features_cache)
    x_val, y_val = data.load_features(index["validation"], features_cache)
    x_train_t = torch.from_numpy(x_train).unsqueeze(1)
    y_train_t = torch.from_numpy(y_train)
    x_val_t = torch.from_numpy(x_val).unsqueeze(1)
    y_val_t = torch.from_numpy(y_val)

    if cfg.qat_mode == "off":
        net = KwsNet(cfg.dropout)
        epochs = cfg.epochs
    elif cfg.qat_mode == "full":
        net = QatKwsNet(cfg.dropout)
        epochs = cfg.epochs
    else:
        base = kwsm.load_model(cfg.finetune_from)
        net = QatKwsNet(cfg.dropout)
        net.load_state_dict(base.state_dict(), strict=False)
        epochs = cfg.finetune_epochs

    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate,
                                 betas=cfg.adam_betas)
    if cfg.class_weight_mode == "auto":
        n, n_pos = len(y_train), float(y_train.sum())
        n_neg = n - n_pos
        w_pos = n / (2.0 * n_pos) if n_pos else 1.0
        w_neg = n / (2.0 * n_neg) if n_neg else 1.0
    else:
        w_pos, w_neg = cfg.class_weight_pos, cfg.class_weight_neg
    weights = torch.where(y_train_t > 0.5,
                          torch.tensor(float(w_pos)), torch.tensor(float(w_neg)))
    loss_fn = torch.nn.BCEWithLogitsLoss(reduction="none")
    shuffle_rng = np.random.default_rng(cfg.seed)

    log = {
        "config": {**asdict(cfg), "adam_betas": list(cfg.adam_betas)},
        "effective_class_weights": {"pos": round(w_pos, 4), "neg": round(w_neg, 4)},
        "keyword": keyword,
        "train_clips": len(train_entries),
        "train_positives": int(y_train.sum()),
        "validation_clips": len(x_val),
        "epochs": [],
    }
    for epoch in range(epochs):
        net.train()
        order = shuffle_rng.permutation(len(x_train_t))
        epoch_loss = 0.0
        t_epoch = time.perf_counter()
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[i:i + cfg.batch_size].copy())
            optimizer.zero_grad()
            logits = net(x_train_t[idx])
            losses = loss_fn(logits, y_train_t[idx]) * weights[idx]
            loss = losses.mean()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(idx)
        val_acc = _accuracy(net, x_val_t, y_val_t) if len(x_val_t) else float("nan")
        entry = {
            "epoch": epoch + 1,
            "train_loss": epoch_loss / len(order),
            "val_accuracy": None if np.isnan(val_acc) else round(val_acc, 4),
            "seconds": round(time.perf_counter() - t_epoch, 3),
        }
        log["epochs"].append(entry)
        print(f"epoch {entry['epoch']:3d}  loss {entry['train_loss']:.4f}  "
              f"val_acc {val_acc:.4f}  ({entry['seconds']}s)")

    export = KwsNet(cfg.dropout)
    export.load_state_dict(
        {k: v for k, v in net.state_dict().items() if not k.startswith("fq_")})
    kwsm.save_model(export, out_path)
    log["model_file"] = str(out_path)
    log["model_bytes"] = Path(out_path).stat().st_size
    if isinstance(net, QatKwsNet):
        sidecar = kwsm.save_ranges_sidecar(out_path, net.recommended_qparams())
        log["ranges_file"] = str(sidecar)
    log["total_seconds"] = round(time.perf_counter() - t_start, 3)

    if log_path:
        Path(log_path).write_text(json.dumps(log, indent=2) + "\n")
    return log
