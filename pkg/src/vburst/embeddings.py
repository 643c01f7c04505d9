"""Precomputed acoustic-embedding sequences and mean pooling.

Embedding files carry frame-level 768-dim vectors exported from an
external pretrained model; this module only ingests them. The layer
tag is opaque metadata identifying which of that model's layers the
frames came from.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from vburst.errors import DataError, FormatError

EMB1_MAGIC = b"EMB1"
EMBEDDING_DIM = 768


@dataclass(frozen=True)
class EmbeddingSequence:
    frames: np.ndarray  # (L, 768)
    layer_tag: int
    source_id: str

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != EMBEDDING_DIM:
            raise DataError(
                f"embedding {self.source_id!r}: expected (L, {EMBEDDING_DIM}), "
                f"got {self.frames.shape}"
            )
        if self.frames.shape[0] < 1:
            raise DataError(f"embedding {self.source_id!r} has no frames")
        if not np.all(np.isfinite(self.frames)):
            raise DataError(f"embedding {self.source_id!r} contains non-finite values")


def write_embedding_file(path, seq: EmbeddingSequence) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<BII", seq.layer_tag, frames.shape[0], frames.shape[1]))
        fh.write(frames.tobytes())


def read_embedding_file(path) -> EmbeddingSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {EMB1_MAGIC!r}")
    if len(blob) < 13:
        raise FormatError(f"{path}: truncated header")
    layer_tag, rows, cols = struct.unpack_from("<BII", blob, 4)
    if cols != EMBEDDING_DIM:
        raise FormatError(f"{path}: width {cols}, expected {EMBEDDING_DIM}")
    expected = 13 + rows * cols * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    frames = np.frombuffer(blob, dtype="<f4", offset=13).reshape(rows, cols).astype(np.float64)
    source_id = str(path)
    source_id = source_id.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return EmbeddingSequence(frames, int(layer_tag), source_id)


def average_pool(seq: EmbeddingSequence) -> np.ndarray:
    """Mean over frames per dimension, accumulated in double precision."""
    return np.mean(seq.frames, axis=0, dtype=np.float64)
