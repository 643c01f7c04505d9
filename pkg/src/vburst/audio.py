"""WAV decoding into canonical mono float clips, plus linear resampling.

Supports RIFF/WAVE with format tag 1 (16-bit signed PCM) and tag 3
(32-bit float), 1 or 2 channels, little-endian.  Stereo is averaged to
mono; 16-bit samples are scaled by 1/32768 so -32768 maps exactly to
-1.0.  Unknown chunks (fact, LIST, ...) are skipped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vburst.errors import DataError, FormatError

PCM16_SCALE = 32768.0

_FMT_PCM = 1
_FMT_FLOAT = 3


@dataclass(frozen=True)
class AudioClip:
    """Mono floating-point audio. Samples are dimensionless, nominally [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def read_wav(path) -> AudioClip:
    """Decode a WAV file to a mono AudioClip at its native sample rate."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    raw = None
    for cid, off, size in _iter_chunks(data):
        if cid == b"fmt " and fmt is None:
            if size < 16 or off + 16 > len(data):
                raise FormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, off)
        elif cid == b"data" and raw is None:
            if off + size > len(data):
                raise FormatError(f"{path}: data chunk larger than file")
            raw = data[off : off + size]
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if raw is None:
        raise FormatError(f"{path}: missing data chunk")

    tag, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels not in (1, 2):
        raise FormatError(f"{path}: unsupported channel count {channels}")
    if tag == _FMT_PCM and bits == 16:
        width = 2
        frames = np.frombuffer(raw[: len(raw) - len(raw) % (width * channels)], dtype="<i2")
        samples = frames.astype(np.float64) / PCM16_SCALE
    elif tag == _FMT_FLOAT and bits == 32:
        width = 4
        frames = np.frombuffer(raw[: len(raw) - len(raw) % (width * channels)], dtype="<f4")
        samples = frames.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported encoding (format tag {tag}, {bits}-bit)")

    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    if samples.size == 0:
        raise DataError(f"{path}: no audio samples")
    if not np.isfinite(samples).all():
        raise FormatError(f"{path}: non-finite sample values")
    return AudioClip(samples=samples, sample_rate=int(rate), source_id=path.stem)


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a mono clip as 16-bit PCM (default) or 32-bit float WAV."""
    if encoding == "pcm16":
        tag, bits = _FMT_PCM, 16
        ints = np.clip(np.rint(clip.samples * PCM16_SCALE), -32768, 32767)
        payload = ints.astype("<i2").tobytes()
    elif encoding == "float32":
        tag, bits = _FMT_FLOAT, 32
        payload = clip.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    fmt = struct.pack(
        "<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * block_align, block_align, bits
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample by linear interpolation. Lossy; adequate for pushing foreign
    corpora onto the pipeline's canonical 16 kHz grid."""
    if len(clip) == 0:
        raise ValueError("cannot resample an empty clip")
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    positions = np.arange(n_out, dtype=np.float64) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(len(clip), dtype=np.float64), clip.samples)
    return AudioClip(samples=out, sample_rate=target_rate, source_id=clip.source_id)
