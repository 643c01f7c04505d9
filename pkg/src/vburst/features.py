"""Log-mel spectrogram features.

Conventions are fixed so cached features are comparable across runs:
periodic Hann window, centered frames over reflect padding, power
spectrogram, Slaney-style mel filters with area normalization, dB
relative to the per-spectrogram maximum with an 80 dB floor, then
min-max scaling to [0,1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from vburst.audio import AudioClip
from vburst.errors import DataError, FormatError

_DB_AMIN = 1e-10

MAT1_MAGIC = b"MAT1"


@dataclass(frozen=True)
class MelSpecParams:
    sample_rate: int = 16000
    n_mels: int = 128
    n_fft: int = 512
    hop: int = 256
    center: bool = True
    power: float = 2.0
    db_floor: float = 80.0

    def __post_init__(self):
        if self.n_fft < self.hop:
            raise ValueError("n_fft must be >= hop")
        if self.n_mels > self.n_fft // 2 + 1:
            raise ValueError("n_mels exceeds FFT resolution")


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, T), entries in [0,1]
    source_id: str
    original_T: int

    @property
    def T(self) -> int:
        return self.values.shape[1]


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, params: MelSpecParams) -> np.ndarray:
    """Power spectrogram, shape (n_fft//2 + 1, T) with T = 1 + len//hop."""
    if clip.sample_rate != params.sample_rate:
        raise DataError(
            f"clip {clip.source_id!r} is {clip.sample_rate} Hz, expected {params.sample_rate}"
        )
    x = clip.samples
    if x.shape[0] < 1:
        raise DataError(f"clip {clip.source_id!r} is empty")
    if params.center:
        x = np.pad(x, params.n_fft // 2, mode="reflect")
    window = hann_periodic(params.n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, params.n_fft)[:: params.hop]
    spectrum = np.fft.rfft(frames * window, axis=1)
    return (np.abs(spectrum) ** params.power).T


def _hz_to_mel(freq: np.ndarray) -> np.ndarray:
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    freq = np.asarray(freq, dtype=np.float64)
    return np.where(
        freq >= min_log_hz,
        min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep,
        freq / f_sp,
    )


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = np.asarray(mel, dtype=np.float64)
    return np.where(
        mel >= min_log_mel,
        min_log_hz * np.exp(logstep * (mel - min_log_mel)),
        f_sp * mel,
    )


def mel_filterbank(params: MelSpecParams) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft//2 + 1), area-normalized."""
    n_bins = params.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, params.sample_rate / 2.0, n_bins)
    mel_edges = np.linspace(0.0, _hz_to_mel(params.sample_rate / 2.0), params.n_mels + 2)
    hz_edges = _mel_to_hz(mel_edges)

    fdiff = np.diff(hz_edges)
    ramps = hz_edges[:, None] - fft_freqs[None, :]
    lower = -ramps[: params.n_mels] / fdiff[: params.n_mels, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))

    # Slaney area normalization: each triangle integrates to ~2/width.
    enorm = 2.0 / (hz_edges[2:] - hz_edges[: params.n_mels])
    weights *= enorm[:, None]

    empty = np.flatnonzero(weights.max(axis=1) == 0.0)
    if empty.size:
        raise ValueError(
            f"mel filter {int(empty[0])} has no FFT-bin support; reduce n_mels or raise n_fft"
        )
    return weights


def mel_spectrogram(clip: AudioClip, params: MelSpecParams | None = None) -> MelSpectrogram:
    params = params or MelSpecParams()
    power = stft_power(clip, params)
    mel_power = mel_filterbank(params) @ power
    db = 10.0 * np.log10(np.maximum(mel_power, _DB_AMIN))
    ref = db.max()
    db = np.maximum(db, ref - params.db_floor)
    lo, hi = db.min(), db.max()
    if hi == lo:
        values = np.zeros_like(db)
    else:
        values = (db - lo) / (hi - lo)
    return MelSpectrogram(values, clip.source_id, original_T=values.shape[1])


def fix_length(spec: MelSpectrogram, target_T: int) -> MelSpectrogram:
    """Zero-pad or truncate the time axis to exactly target_T columns."""
    if target_T <= 0:
        raise ValueError("target_T must be positive")
    t = spec.values.shape[1]
    if t == target_T:
        return spec
    if t > target_T:
        values = spec.values[:, :target_T]
    else:
        values = np.pad(spec.values, ((0, 0), (0, target_T - t)))
    return MelSpectrogram(values, spec.source_id, spec.original_T)


def temporal_bin_quantile(lengths: list[int], q: float) -> int:
    """Smallest length L with (count of lengths <= L) / N >= q."""
    if not lengths:
        raise ValueError("lengths must be non-empty")
    if not (0.0 < q <= 1.0):
        raise ValueError("q must be in (0, 1]")
    ordered = sorted(lengths)
    n = len(ordered)
    for k, value in enumerate(ordered, start=1):
        if k / n >= q:
            return int(value)
    return int(ordered[-1])


def save_mat1(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("MAT1 stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(MAT1_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def load_mat1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAT1_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAT1_MAGIC!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", blob, 4)
    expected = 12 + rows * cols * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float64)
