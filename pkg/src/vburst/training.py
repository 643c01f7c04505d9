"""Training: class-balanced batches, MixUp, temporal wrapping, top-k selection.

Every batch is stratified to exactly batch_size/8 draws per class
(with replacement), so minority classes oversample and plain accuracy
is a meaningful training-progress measure.  An epoch is
ceil(majority-class count / per-class draw) batches.

All randomness comes from named child generators of the config seed,
one per concern (batching, mixup, wrapping, dropout), so toggling one
augmentation does not shift the draws of another.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vburst.errors import DataError, NumericError
from vburst.evaluation import accuracy, confusion_matrix, uar
from vburst.labels import CLASS_NAMES, N_CLASSES
from vburst.models import ModelGraph, save_checkpoint
from vburst.nncore import Adam, categorical_crossentropy
from vburst.seeding import child_rng


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 400
    epochs: int = 100
    learning_rate: float = 0.02
    mixup_alpha: float = 0.2
    use_mixup: bool = True
    use_time_wrap: bool = False
    seed: int = 0
    top_k: int = 5
    stop_at_val_uar: float | None = None  # optional early exit once reached

    def __post_init__(self):
        if self.batch_size <= 0 or self.batch_size % N_CLASSES != 0:
            raise ValueError(f"batch_size must be a positive multiple of {N_CLASSES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.use_mixup and self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be > 0 when MixUp is enabled")


@dataclass(frozen=True)
class Dataset:
    """In-memory feature corpus: rows are clips, labels are class indices.

    labels may be -1 for unlabeled (test) rows; splits entries are one of
    train/val/test.
    """

    features: np.ndarray
    labels: np.ndarray
    splits: list
    ids: list

    def __post_init__(self):
        n = self.features.shape[0]
        if not (len(self.labels) == len(self.splits) == len(self.ids) == n):
            raise DataError("dataset columns differ in length")
        lab = np.asarray(self.labels)
        if lab.size and (lab.min() < -1 or lab.max() >= N_CLASSES):
            raise DataError(f"labels must be -1 or in [0, {N_CLASSES})")

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(np.array([s == split for s in self.splits]))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_accuracy: float
    val_uar: float
    checkpoint_path: str  # relative to the training output directory


def stratified_batches(labels, batch_size: int, rng, n_classes: int = N_CLASSES) -> list:
    """Index batches with exactly batch_size/n_classes draws per class.

    Draws are uniform with replacement within each class; the number of
    batches is ceil(majority class count / per-class draw); within-batch
    order is shuffled.
    """
    if batch_size % n_classes != 0:
        raise ValueError(f"batch_size must be divisible by {n_classes}")
    per = batch_size // n_classes
    labels = np.asarray(labels)
    class_indices = [np.flatnonzero(labels == c) for c in range(n_classes)]
    for c, idx in enumerate(class_indices):
        if idx.size == 0:
            raise DataError(f"training split has no samples for class {CLASS_NAMES[c]!r}")
    n_batches = -(-max(idx.size for idx in class_indices) // per)
    batches = []
    for _ in range(n_batches):
        parts = [idx[rng.integers(0, idx.size, size=per)] for idx in class_indices]
        batch = np.concatenate(parts)
        batches.append(batch[rng.permutation(batch.size)])
    return batches


def mixup(features: np.ndarray, labels_onehot: np.ndarray, alpha: float, rng):
    """Convex-combine the batch with a random permutation of itself.

    One lambda ~ Beta(alpha, alpha) per batch; batch size is unchanged.
    """
    n = features.shape[0]
    if n < 2:
        raise ValueError("mixup needs at least 2 samples")
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)
    mixed_x = lam * features + (1.0 - lam) * features[perm]
    mixed_y = lam * labels_onehot + (1.0 - lam) * labels_onehot[perm]
    return mixed_x, mixed_y


def time_wrap(spec: np.ndarray, rng) -> np.ndarray:
    """Circularly rotate time columns by a uniform random offset."""
    k = int(rng.integers(0, spec.shape[1]))
    return np.roll(spec, k, axis=1)


def time_wrap_batch(batch: np.ndarray, rng) -> np.ndarray:
    """Independent rotation per item; batch is (N, n_mels, T, 1)."""
    out = np.empty_like(batch)
    offsets = rng.integers(0, batch.shape[2], size=batch.shape[0])
    for i, k in enumerate(offsets):
        out[i] = np.roll(batch[i], int(k), axis=1)
    return out


def train(model: ModelGraph, dataset: Dataset, config: TrainConfig, out_dir,
          log=None) -> list:
    """Run the full regime; returns one EpochRecord per completed epoch.

    Per epoch: stratified batches -> optional time wrap -> optional MixUp ->
    forward/backward/Adam; then train accuracy on the same draws without
    augmentation (infer mode), validation UAR, and a checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if train_idx.size == 0 or val_idx.size == 0:
        raise DataError("training requires non-empty train and val splits")
    y_train = np.asarray(dataset.labels)[train_idx]
    y_val = np.asarray(dataset.labels)[val_idx]
    if y_train.min() < 0 or y_val.min() < 0:
        raise DataError("train/val rows must all be labeled")
    x_train = np.ascontiguousarray(dataset.features[train_idx], dtype=model.dtype)
    x_val = np.ascontiguousarray(dataset.features[val_idx], dtype=model.dtype)
    onehot = np.eye(N_CLASSES, dtype=model.dtype)[y_train]

    rng_batches = child_rng(config.seed, "batches")
    rng_mixup = child_rng(config.seed, "mixup")
    rng_wrap = child_rng(config.seed, "timewrap")
    rng_dropout = child_rng(config.seed, "dropout")

    optimizer = Adam(model.trainable_arrays(), config.learning_rate)
    history = []
    for epoch in range(1, config.epochs + 1):
        batches = stratified_batches(y_train, config.batch_size, rng_batches)
        for batch in batches:
            xb = x_train[batch]
            yb = onehot[batch]
            if config.use_time_wrap:
                xb = time_wrap_batch(xb, rng_wrap)
            if config.use_mixup:
                xb, yb = mixup(xb, yb, config.mixup_alpha, rng_mixup)
            probs = model.forward(xb, mode="train", rng=rng_dropout)
            loss = categorical_crossentropy(probs, yb)
            if not np.isfinite(loss):
                raise NumericError(f"{model.name}: loss diverged to {loss} at epoch {epoch}")
            model.backward_from_probs(probs, yb)
            optimizer.step(model.grad_arrays())

        drawn = np.concatenate(batches)
        train_acc = accuracy(y_train[drawn], model.predict(x_train[drawn]).argmax(axis=1))
        val_uar = uar(confusion_matrix(y_val, model.predict(x_val).argmax(axis=1)))
        ckpt_name = f"{model.name}-epoch{epoch:03d}.bkpt"
        save_checkpoint(model, out_dir / ckpt_name, epoch=epoch, seed=config.seed,
                        val_uar=val_uar)
        record = EpochRecord(epoch, train_acc, val_uar, ckpt_name)
        history.append(record)
        if log is not None:
            log(record)
        if config.stop_at_val_uar is not None and val_uar >= config.stop_at_val_uar:
            break
    return history


def select_top_k(history: list, k: int) -> list:
    """k records with highest validation UAR; ties resolved to earlier epochs."""
    if k <= 0:
        raise ValueError("k must be positive")
    return sorted(history, key=lambda r: (-r.val_uar, r.epoch))[:k]


def save_history(path, history: list) -> None:
    lines = ["epoch,train_accuracy,val_uar,checkpoint_path"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_accuracy!r},{r.val_uar!r},{r.checkpoint_path}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_history(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != "epoch,train_accuracy,val_uar,checkpoint_path":
        raise DataError(f"{path}: not a training history file")
    records = []
    for ln in lines[1:]:
        epoch, acc, val, ckpt = ln.split(",", 3)
        records.append(EpochRecord(int(epoch), float(acc), float(val), ckpt))
    return records
