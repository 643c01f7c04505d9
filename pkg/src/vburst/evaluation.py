"""Metrics and multi-model label fusion.

UAR (unweighted average recall) is the mean of per-class recalls, so
it is insensitive to class imbalance; chance level is 1/8 here.
Fusion averages per-class probabilities across models by default; a
majority-vote variant is available for comparison.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from vburst.errors import DataError, FormatError
from vburst.labels import CLASS_NAMES, N_CLASSES, label_index


@dataclass
class PredictionSet:
    ids: list
    probs: np.ndarray  # (N, 8), rows sum to 1
    labels: np.ndarray = field(default=None)  # argmax per row unless given

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[1] != N_CLASSES:
            raise DataError(f"probabilities must be (N, {N_CLASSES}), got {self.probs.shape}")
        if len(self.ids) != self.probs.shape[0]:
            raise DataError("id count does not match probability rows")
        sums = self.probs.sum(axis=1)
        if self.probs.shape[0] and not np.allclose(sums, 1.0, atol=1e-4):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise DataError(f"probability row for {self.ids[bad]!r} sums to {sums[bad]:.6f}")
        if self.labels is None:
            self.labels = self.probs.argmax(axis=1)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int64)


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise DataError(f"label vectors differ in length: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise DataError(f"labels outside [0, {n_classes})")
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(
        n_classes, n_classes
    )


def uar(cm: np.ndarray) -> float:
    """Mean per-class recall; classes absent from y_true are excluded."""
    cm = np.asarray(cm)
    row_sums = cm.sum(axis=1)
    present = row_sums > 0
    if not np.any(present):
        raise DataError("confusion matrix is empty")
    if not np.all(present):
        absent = [CLASS_NAMES[i] for i in np.flatnonzero(~present)]
        warnings.warn(f"classes absent from y_true excluded from UAR: {', '.join(absent)}")
    recalls = np.diag(cm)[present] / row_sums[present]
    return float(recalls.mean())


def accuracy(y_true, y_pred) -> float:
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape:
        raise DataError(f"label vectors differ in length: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise DataError("no samples")
    return float(np.mean(t == p))


def fuse_labels(prediction_sets: list, method: str = "mean") -> PredictionSet:
    """Combine model outputs over identical id lists.

    mean: arithmetic mean of probabilities.  vote: each model casts its
    argmax; fused "probabilities" are vote shares.
    """
    if not prediction_sets:
        raise DataError("nothing to fuse")
    first = prediction_sets[0]
    for ps in prediction_sets[1:]:
        if len(ps.ids) != len(first.ids):
            raise DataError(
                f"prediction sets differ in size: {len(first.ids)} vs {len(ps.ids)}"
            )
        for a, b in zip(first.ids, ps.ids):
            if a != b:
                raise DataError(f"prediction sets diverge at id {a!r} vs {b!r}")
    if method == "mean":
        # extended-precision accumulation so fusing k copies of one model
        # reproduces its probabilities bit for bit
        stack = np.stack([ps.probs for ps in prediction_sets])
        probs = (stack.sum(axis=0, dtype=np.longdouble) / stack.shape[0]).astype(np.float64)
    elif method == "vote":
        votes = np.zeros((len(first.ids), N_CLASSES))
        for ps in prediction_sets:
            votes[np.arange(len(first.ids)), ps.labels] += 1.0
        probs = votes / len(prediction_sets)
    else:
        raise ValueError(f"unknown fusion method {method!r}")
    return PredictionSet(list(first.ids), probs)


def write_predictions(path, pset: PredictionSet) -> None:
    lines = ["id,label," + ",".join(f"p{i}" for i in range(N_CLASSES))]
    for i, clip_id in enumerate(pset.ids):
        if "," in str(clip_id):
            raise DataError(f"clip id {clip_id!r} contains a comma")
        probs = ",".join(f"{v:.6f}" for v in pset.probs[i])
        lines.append(f"{clip_id},{CLASS_NAMES[pset.labels[i]]},{probs}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_predictions(path) -> PredictionSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    expected = "id,label," + ",".join(f"p{i}" for i in range(N_CLASSES))
    if not lines or lines[0] != expected:
        raise FormatError(f"{path}: expected header {expected!r}")
    ids, labels, probs = [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 2 + N_CLASSES:
            raise FormatError(f"{path}: malformed row {ln!r}")
        ids.append(parts[0])
        labels.append(label_index(parts[1]))
        try:
            probs.append([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise FormatError(f"{path}: bad probability in row {ln!r}") from exc
    return PredictionSet(ids, np.array(probs).reshape(len(ids), N_CLASSES), np.array(labels))


def format_confusion(cm: np.ndarray, class_names=CLASS_NAMES) -> str:
    """Aligned text table, rows = true class, columns = predicted."""
    width = max(max(len(n) for n in class_names), len(str(int(cm.max()) if cm.size else 0)))
    header = " " * (width + 2) + " ".join(f"{n:>{width}}" for n in class_names)
    rows = [header]
    for i, name in enumerate(class_names):
        cells = " ".join(f"{int(v):>{width}}" for v in cm[i])
        rows.append(f"{name:>{width}}  {cells}")
    return "\n".join(rows)


def save_confusion_csv(path, cm: np.ndarray, class_names=CLASS_NAMES) -> None:
    lines = ["true\\pred," + ",".join(class_names)]
    for i, name in enumerate(class_names):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm[i]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
