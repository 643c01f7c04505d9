"""Command-line pipeline over a manifest-driven corpus.

Subcommands: preprocess, featurize, train, predict, evaluate.  The
manifest is a CSV with header exactly `path,label,split`; relative
paths resolve against the manifest's own directory.  preprocess and
featurize write a rewritten manifest next to their outputs so each
stage feeds the next.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure.  All randomness derives from --seed; reports carry no
timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vburst.audio import AudioClip, read_wav, resample_linear, write_wav
from vburst.embeddings import average_pool, read_embedding_file
from vburst.errors import DataError, NumericError, UsageError, VburstError
from vburst.evaluation import (
    PredictionSet,
    accuracy,
    confusion_matrix,
    format_confusion,
    fuse_labels,
    read_predictions,
    save_confusion_csv,
    uar,
    write_predictions,
)
from vburst.features import (
    MelSpecParams,
    fix_length,
    load_mat1,
    mel_spectrogram,
    save_mat1,
    temporal_bin_quantile,
)
from vburst.labels import CLASS_NAMES, UNLABELED, label_index
from vburst.models import build_embedding_mlp, build_melspec_cnn, load_checkpoint
from vburst.preprocess import VadParams, preprocess
from vburst.training import (
    Dataset,
    TrainConfig,
    save_history,
    select_top_k,
    train,
)

CANONICAL_RATE = 16000
MANIFEST_HEADER = "path,label,split"
_SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    label: str
    split: str

    @property
    def id(self) -> str:
        return self.path.stem


def load_manifest(path) -> list:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DataError(f"{path}: manifest header must be exactly {MANIFEST_HEADER!r}")
    rows = []
    seen_paths, seen_ids = set(), set()
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}: malformed manifest row {ln!r}")
        raw, label, split = (p.strip() for p in parts)
        if label != UNLABELED and label not in CLASS_NAMES:
            raise DataError(f"{path}: unknown label {label!r} in row {ln!r}")
        if split not in _SPLITS:
            raise DataError(f"{path}: unknown split {split!r} in row {ln!r}")
        p = Path(raw)
        if not p.is_absolute():
            p = path.parent / p
        row = ManifestRow(p, label, split)
        if str(p) in seen_paths:
            raise DataError(f"{path}: duplicate path {raw!r}")
        if row.id in seen_ids:
            raise DataError(f"{path}: duplicate clip id {row.id!r}")
        seen_paths.add(str(p))
        seen_ids.add(row.id)
        rows.append(row)
    return rows


def write_manifest(path, rows: list) -> None:
    """Writes paths as bare filenames, keeping the output directory relocatable."""
    lines = [MANIFEST_HEADER] + [f"{r.path.name},{r.label},{r.split}" for r in rows]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _map_tasks(fn, tasks: list, workers: int) -> list:
    """Ordered map, optionally over a process pool."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (workers * 4))))


def _read_for_pipeline(path) -> AudioClip:
    clip = read_wav(path)
    if clip.sample_rate != CANONICAL_RATE and len(clip) > 0:
        clip = resample_linear(clip, CANONICAL_RATE)
    return clip


def _preprocess_one(task):
    in_path, out_path, params = task
    clip = _read_for_pipeline(in_path)
    result = preprocess(clip, params)
    write_wav(out_path, result.clip, encoding="float32")
    return (
        clip.source_id,
        result.was_empty_after_vad,
        len(result.vad_regions),
        len(clip),
        len(result.clip),
    )


def cmd_preprocess(args) -> int:
    rows = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = VadParams(
        frame_len=args.frame_len,
        hop=args.hop,
        energy_percentile_floor=args.energy_percentile,
        energy_margin_db=args.energy_margin_db,
        min_region_frames=args.min_region_frames,
        merge_gap_frames=args.merge_gap_frames,
    )
    tasks = [(r.path, out_dir / f"{r.id}.wav", params) for r in rows]
    results = _map_tasks(_preprocess_one, tasks, args.workers)
    report_lines = ["id,was_empty_after_vad,regions,input_samples,output_samples"]
    n_flagged = 0
    for clip_id, flagged, n_regions, n_in, n_out in results:
        n_flagged += int(flagged)
        report_lines.append(f"{clip_id},{int(flagged)},{n_regions},{n_in},{n_out}")
    with open(out_dir / "preprocess_report.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_lines) + "\n")
    out_rows = [ManifestRow(out_dir / f"{r.id}.wav", r.label, r.split) for r in rows]
    write_manifest(out_dir / "manifest.csv", out_rows)
    print(f"preprocessed {len(rows)} clips ({n_flagged} flagged empty after VAD)")
    return 0


def _featurize_one(task):
    in_path, out_path, target = task
    clip = _read_for_pipeline(in_path)
    spec = mel_spectrogram(clip, MelSpecParams())
    save_mat1(out_path, fix_length(spec, target).values)
    return (clip.source_id, spec.original_T)


def cmd_featurize(args) -> int:
    rows = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(r.path, out_dir / f"{r.id}.mat1", args.target_len) for r in rows]
    results = _map_tasks(_featurize_one, tasks, args.workers)
    report_lines = ["id,original_t,target_t"]
    for clip_id, original_t in results:
        report_lines.append(f"{clip_id},{original_t},{args.target_len}")
    with open(out_dir / "featurize_report.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(report_lines) + "\n")
    summary = [f"clips={len(rows)}", f"target_temporal_bins={args.target_len}"]
    if results:
        q90 = temporal_bin_quantile([t for _, t in results], 0.9)
        summary.append(f"q90_temporal_bins={q90}")
        print(f"featurized {len(rows)} clips; q90 temporal bins: {q90}")
    else:
        print("featurized 0 clips")
    with open(out_dir / "featurize_summary.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")
    out_rows = [ManifestRow(out_dir / f"{r.id}.mat1", r.label, r.split) for r in rows]
    write_manifest(out_dir / "manifest.csv", out_rows)
    return 0


def _load_melspec_features(rows: list, t: int) -> np.ndarray:
    mats = []
    for r in rows:
        m = load_mat1(r.path)
        if m.shape != (128, t):
            raise DataError(f"{r.path}: expected a (128, {t}) feature matrix, got {m.shape}")
        mats.append(m.astype(np.float32))
    x = np.stack(mats) if mats else np.empty((0, 128, t))
    return x[..., None]


def _load_embedding_features(rows: list, workers: int = 1) -> np.ndarray:
    pooled = _map_tasks(_pool_one_embedding, [r.path for r in rows], workers)
    return np.stack(pooled) if pooled else np.empty((0, 768))


def _pool_one_embedding(path):
    return average_pool(read_embedding_file(path))


def _labels_for(rows: list) -> np.ndarray:
    return np.array(
        [label_index(r.label) if r.label != UNLABELED else -1 for r in rows], dtype=np.int64
    )


_APPROACH_DEFAULTS = {
    "melspec150": dict(epochs=100, learning_rate=0.02, use_time_wrap=False, top_k=5),
    "melspec85": dict(epochs=100, learning_rate=0.02, use_time_wrap=True, top_k=5),
    "embedding": dict(epochs=200, learning_rate=0.0001, use_time_wrap=False, top_k=3),
}

_CONFIG_COERCERS = {
    "batch_size": int,
    "epochs": int,
    "learning_rate": float,
    "mixup_alpha": float,
    "use_mixup": lambda v: v.lower() in ("1", "true", "yes"),
    "use_time_wrap": lambda v: v.lower() in ("1", "true", "yes"),
    "seed": int,
    "top_k": int,
    "stop_at_val_uar": float,
}


def _read_config_file(path) -> dict:
    values = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            key, sep, value = ln.partition("=")
            key = key.strip()
            if not sep or key not in _CONFIG_COERCERS:
                raise UsageError(f"{path}: unknown config entry {ln!r}")
            values[key] = _CONFIG_COERCERS[key](value.strip())
    return values


def _resolve_train_config(args) -> TrainConfig:
    values = dict(
        batch_size=400,
        mixup_alpha=0.2,
        use_mixup=True,
        seed=0,
        stop_at_val_uar=None,
        **_APPROACH_DEFAULTS[args.approach],
    )
    if args.config:
        values.update(_read_config_file(args.config))
    flag_map = {
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "mixup_alpha": args.mixup_alpha,
        "use_mixup": args.use_mixup,
        "use_time_wrap": args.use_time_wrap,
        "seed": args.seed,
        "top_k": args.top_k,
        "stop_at_val_uar": args.stop_at_val_uar,
    }
    for key, value in flag_map.items():
        if value is not None:
            values[key] = value
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    rows = load_manifest(args.manifest)
    config = _resolve_train_config(args)
    used = [r for r in rows if r.split in ("train", "val")]
    for r in used:
        if r.label == UNLABELED:
            raise DataError(f"{r.path}: train/val rows must be labeled")
    if args.approach == "embedding":
        features = _load_embedding_features(used)
        model = build_embedding_mlp(seed=config.seed)
    else:
        t = 150 if args.approach == "melspec150" else 85
        features = _load_melspec_features(used, t)
        model = build_melspec_cnn(t, seed=config.seed)
    dataset = Dataset(features, _labels_for(used), [r.split for r in used],
                      [r.id for r in used])
    out_dir = Path(args.out)

    def log(rec):
        print(
            f"epoch {rec.epoch}: train_acc={rec.train_accuracy:.4f} "
            f"val_uar={rec.val_uar:.4f}"
        )

    history = train(model, dataset, config, out_dir, log=log)
    save_history(out_dir / "history.csv", history)
    best = select_top_k(history, 1)[0]
    print(f"best epoch {best.epoch}: val_uar={best.val_uar:.4f} ({best.checkpoint_path})")
    return 0


def cmd_predict(args) -> int:
    rows = load_manifest(args.manifest)
    if args.split != "all":
        rows = [r for r in rows if r.split == args.split]
    if not rows:
        raise DataError(f"manifest has no rows for split {args.split!r}")
    models = []
    for ckpt in args.checkpoint:
        model, _ = load_checkpoint(ckpt)
        models.append(model)
    shapes = {m.input_shape for m in models}
    if len(shapes) != 1:
        raise DataError(f"checkpoints disagree on input shape: {sorted(shapes)}")
    input_shape = models[0].input_shape
    if input_shape == (768,):
        features = _load_embedding_features(rows, args.workers)
    elif len(input_shape) == 3 and input_shape[0] == 128:
        features = _load_melspec_features(rows, input_shape[1])
    else:
        raise DataError(f"unsupported checkpoint input shape {input_shape}")
    ids = [r.id for r in rows]
    sets = [PredictionSet(ids, m.predict(features)) for m in models]
    fused = fuse_labels(sets, method=args.fusion)
    write_predictions(args.out, fused)
    print(f"wrote {len(ids)} predictions from {len(models)} model(s) to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    rows = load_manifest(args.manifest)
    preds = read_predictions(args.predictions)
    label_by_id = {r.id: r.label for r in rows}
    y_true = []
    for clip_id in preds.ids:
        if clip_id not in label_by_id:
            raise DataError(f"prediction id {clip_id!r} is not in the manifest")
        if label_by_id[clip_id] == UNLABELED:
            raise DataError(f"manifest row for {clip_id!r} has no label to evaluate against")
        y_true.append(label_index(label_by_id[clip_id]))
    cm = confusion_matrix(y_true, preds.labels)
    uar_value = uar(cm)
    acc_value = accuracy(y_true, preds.labels)
    print(f"uar={uar_value:.6f}")
    print(f"accuracy={acc_value:.6f}")
    print(format_confusion(cm))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_confusion_csv(out_dir / "confusion.csv", cm)
        with open(out_dir / "metrics.txt", "w", encoding="utf-8") as fh:
            fh.write(f"n={len(y_true)}\nuar={uar_value:.6f}\naccuracy={acc_value:.6f}\n")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vburst", description="Vocal-burst classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="VAD-trim and normalize WAV files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--frame-len", type=int, default=400)
    p.add_argument("--hop", type=int, default=160)
    p.add_argument("--energy-percentile", type=float, default=0.10)
    p.add_argument("--energy-margin-db", type=float, default=6.0)
    p.add_argument("--min-region-frames", type=int, default=3)
    p.add_argument("--merge-gap-frames", type=int, default=5)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("featurize", help="compute fixed-length log-mel features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-len", type=int, choices=(150, 85), required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one model over manifest features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--approach", choices=sorted(_APPROACH_DEFAULTS), required=True)
    p.add_argument("--config", default=None, help="key=value file; flags win")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--mixup-alpha", type=float, default=None)
    mix = p.add_mutually_exclusive_group()
    mix.add_argument("--mixup", dest="use_mixup", action="store_true", default=None)
    mix.add_argument("--no-mixup", dest="use_mixup", action="store_false")
    wrap = p.add_mutually_exclusive_group()
    wrap.add_argument("--time-wrap", dest="use_time_wrap", action="store_true", default=None)
    wrap.add_argument("--no-time-wrap", dest="use_time_wrap", action="store_false")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--stop-at-val-uar", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict (and optionally fuse) checkpoints")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="repeat to fuse several models")
    p.add_argument("--out", required=True)
    p.add_argument("--fusion", choices=("mean", "vote"), default="mean")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a predictions CSV against the manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except VburstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
