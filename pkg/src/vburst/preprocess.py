"""Silence removal and amplitude normalization.

The detector is a deterministic percentile-plus-margin RMS energy gate:
frame the clip, compute per-frame energy in dB, and mark frames whose
energy clears both (low-percentile energy + margin) and (max energy -
margin), whichever is lower.  Zero-energy frames never count as speech.
Trimming keeps everything from the first detected region to the last,
so interior pauses survive.  Clips that come out empty are flagged and
passed through untrimmed rather than dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from vburst.audio import AudioClip

# 10*log10(1e-12): energy assigned to an all-zero frame; such frames are
# never speech regardless of thresholds.
_ENERGY_FLOOR_DB = -120.0
_POWER_FLOOR = 1e-12


class SpeechRegion(NamedTuple):
    start: int  # inclusive sample index
    end: int  # exclusive sample index


@dataclass(frozen=True)
class VadParams:
    frame_len: int = 400  # 25 ms at 16 kHz
    hop: int = 160  # 10 ms
    energy_percentile_floor: float = 0.10
    energy_margin_db: float = 6.0
    min_region_frames: int = 3
    merge_gap_frames: int = 5

    def __post_init__(self):
        if not (self.frame_len >= self.hop > 0):
            raise ValueError("require frame_len >= hop > 0")
        if not (0.0 <= self.energy_percentile_floor <= 1.0):
            raise ValueError("energy percentile must be in [0, 1]")
        if self.energy_margin_db < 0:
            raise ValueError("energy margin must be >= 0")


@dataclass(frozen=True)
class PreprocessedClip:
    clip: AudioClip
    was_empty_after_vad: bool
    vad_regions: list = field(default_factory=list)


def _frame_energies_db(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = x.shape[0]
    if n == 0:
        return np.empty(0)
    if n < frame_len:
        power = np.array([np.mean(x * x)])
    else:
        windows = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
        power = np.mean(windows * windows, axis=1)
    return 10.0 * np.log10(np.maximum(power, _POWER_FLOOR))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as (first, last) inclusive frame indices."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [idx.size - 1]))
    return [(int(idx[s]), int(idx[e])) for s, e in zip(starts, ends)]


def detect_speech_regions(clip: AudioClip, params: VadParams | None = None) -> list[SpeechRegion]:
    """Find speech regions by thresholded per-frame RMS energy.

    Frame-to-sample mapping: a fired frame is evidence that speech overlaps
    it somewhere, so region starts use the latest point the onset could be
    no later than (frame start + frame_len - hop) and region ends use the
    earliest such point for the offset (frame start + hop).  Both are within
    one hop of the true boundary for signals that dominate the percentile
    floor.  First/last frames of the clip map to the clip edges.
    """
    params = params or VadParams()
    x = clip.samples
    energies = _frame_energies_db(x, params.frame_len, params.hop)
    n_frames = energies.shape[0]
    if n_frames == 0:
        return []

    max_e = float(energies.max())
    if max_e <= _ENERGY_FLOOR_DB:
        return []  # nothing but digital silence
    percentile_e = float(np.quantile(energies, params.energy_percentile_floor))
    threshold = min(percentile_e + params.energy_margin_db, max_e - params.energy_margin_db)
    speech = (energies > threshold) & (energies > _ENERGY_FLOOR_DB)

    runs = [r for r in _runs(speech) if r[1] - r[0] + 1 >= params.min_region_frames]
    if not runs:
        return []

    merged = [runs[0]]
    for first, last in runs[1:]:
        if first - merged[-1][1] - 1 < params.merge_gap_frames:
            merged[-1] = (merged[-1][0], last)
        else:
            merged.append((first, last))

    n = x.shape[0]
    head = params.frame_len - params.hop
    regions = []
    for first, last in merged:
        start = 0 if first == 0 else first * params.hop + head
        end = n if last == n_frames - 1 else (last + 1) * params.hop
        if end <= start:  # degenerate single-frame run; fall back to frame extent
            start = first * params.hop
            end = min(n, last * params.hop + params.frame_len)
        regions.append(SpeechRegion(start, min(end, n)))
    return regions


def trim_silence(clip: AudioClip, regions: list[SpeechRegion]) -> AudioClip:
    """Keep samples from the first region's start to the last region's end."""
    if not regions:
        return AudioClip(clip.samples[:0], clip.sample_rate, clip.source_id)
    return AudioClip(
        clip.samples[regions[0].start : regions[-1].end], clip.sample_rate, clip.source_id
    )


def normalize_amplitude(clip: AudioClip) -> AudioClip:
    """Scale so the peak magnitude is exactly 1.0; all-zero clips pass through."""
    if len(clip) == 0:
        return clip
    peak = float(np.max(np.abs(clip.samples)))
    if peak == 0.0:
        return clip
    return AudioClip(clip.samples / peak, clip.sample_rate, clip.source_id)


def preprocess(clip: AudioClip, params: VadParams | None = None) -> PreprocessedClip:
    """Detect speech, trim leading/trailing silence, normalize amplitude.

    If trimming would leave nothing (silent or empty input), the full clip
    is normalized and returned with was_empty_after_vad set, so no file is
    ever silently dropped.
    """
    params = params or VadParams()
    regions = detect_speech_regions(clip, params)
    trimmed = trim_silence(clip, regions)
    if len(trimmed) == 0 or not np.any(trimmed.samples):
        return PreprocessedClip(normalize_amplitude(clip), True, list(regions))
    return PreprocessedClip(normalize_amplitude(trimmed), False, list(regions))
