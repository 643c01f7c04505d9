"""Featurizer against independent oracles and the committed fixtures."""

import numpy as np
import pytest
import scipy.signal
from hypothesis import given, strategies as st

from vburst.audio import AudioClip, read_wav
from vburst.errors import DataError, FormatError
from vburst.features import (
    MelSpecParams,
    _hz_to_mel,
    _mel_to_hz,
    fix_length,
    hann_periodic,
    load_mat1,
    mel_filterbank,
    mel_spectrogram,
    save_mat1,
    stft_power,
    temporal_bin_quantile,
)

WAV_NAMES = ("tone440", "tone_silence", "chirp", "noise", "am_tone")


def test_hann_matches_scipy():
    for n in (4, 511, 512):
        np.testing.assert_allclose(
            hann_periodic(n),
            scipy.signal.get_window("hann", n, fftbins=True),
            atol=1e-14,
        )


def test_mel_scale_anchors():
    # linear region: 200/3 Hz per mel step up to 1000 Hz <-> mel 15
    assert _hz_to_mel(np.array(0.0)) == 0.0
    np.testing.assert_allclose(_hz_to_mel(np.array(1000.0)), 15.0, atol=1e-12)
    np.testing.assert_allclose(_hz_to_mel(np.array(200.0)), 3.0, atol=1e-12)
    # log region: each factor of 6.4 above 1 kHz spans 27 mel
    np.testing.assert_allclose(_hz_to_mel(np.array(6400.0)), 42.0, atol=1e-12)
    np.testing.assert_allclose(_mel_to_hz(np.array(42.0)), 6400.0, rtol=1e-12)


@given(st.floats(1.0, 7999.0))
def test_mel_round_trip(freq):
    f = np.array(freq)
    np.testing.assert_allclose(_mel_to_hz(_hz_to_mel(f)), f, rtol=1e-9)


def test_filterbank_matches_fixture(fixtures_dir):
    fb = mel_filterbank(MelSpecParams())
    ref = np.load(fixtures_dir / "filterbank.npy")
    assert fb.shape == (128, 257)
    assert np.max(np.abs(fb - ref)) <= 1e-12


def test_filterbank_geometry():
    fb = mel_filterbank(MelSpecParams())
    assert np.all(fb >= 0)
    # every filter has support, and supports are contiguous single triangles
    for row in fb:
        nz = np.flatnonzero(row)
        assert nz.size > 0
        assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1))
    # area normalization: peak heights shrink as bands widen
    assert fb[0].max() > fb[-1].max()


def test_filterbank_rejects_empty_filters():
    with pytest.raises(ValueError, match="filter"):
        mel_filterbank(MelSpecParams(n_fft=256, hop=256, n_mels=129))


def naive_stft_power(x, params):
    # independent of the package path: explicit reflect pad, loop framing,
    # direct DFT matrix
    pad = params.n_fft // 2
    xp = np.concatenate([x[1 : pad + 1][::-1], x, x[-pad - 1 : -1][::-1]])
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(params.n_fft) / params.n_fft)
    n_frames = 1 + len(x) // params.hop
    k = np.arange(params.n_fft // 2 + 1)
    n = np.arange(params.n_fft)
    dft = np.exp(-2j * np.pi * np.outer(k, n) / params.n_fft)
    out = np.empty((params.n_fft // 2 + 1, n_frames))
    for t in range(n_frames):
        frame = xp[t * params.hop : t * params.hop + params.n_fft] * win
        out[:, t] = np.abs(dft @ frame) ** params.power
    return out


def test_stft_power_against_naive_dft():
    rng = np.random.default_rng(11)
    x = rng.uniform(-1, 1, 2000)
    params = MelSpecParams()
    clip = AudioClip(x, params.sample_rate, "stft")
    got = stft_power(clip, params)
    ref = naive_stft_power(x, params)
    assert got.shape == ref.shape == (257, 1 + 2000 // 256)
    np.testing.assert_allclose(got, ref, atol=1e-8)


def test_stft_rejects_rate_mismatch_and_empty():
    params = MelSpecParams()
    with pytest.raises(DataError):
        stft_power(AudioClip(np.ones(1000), 8000, "r"), params)
    with pytest.raises(DataError):
        stft_power(AudioClip(np.ones(0), 16000, "e"), params)


@pytest.mark.parametrize("name", WAV_NAMES)
def test_mel_spectrogram_matches_fixture(fixtures_dir, name):
    clip = read_wav(fixtures_dir / f"{name}.wav")
    spec = mel_spectrogram(clip)
    ref = np.load(fixtures_dir / f"{name}.mel.npy")
    assert spec.values.shape == ref.shape
    assert np.max(np.abs(spec.values - ref)) <= 1e-10


def test_mel_output_range_and_constant_rule():
    rng = np.random.default_rng(12)
    clip = AudioClip(rng.uniform(-1, 1, 8000), 16000, "rng")
    spec = mel_spectrogram(clip)
    assert spec.values.min() == 0.0
    assert spec.values.max() == 1.0
    # digital silence produces a constant dB sheet, normalized to all zeros
    silent = mel_spectrogram(AudioClip(np.zeros(4000), 16000, "z"))
    np.testing.assert_array_equal(silent.values, 0.0)


def test_fix_length_pad_and_truncate():
    rng = np.random.default_rng(13)
    clip = AudioClip(rng.uniform(-1, 1, 8000), 16000, "f")
    spec = mel_spectrogram(clip)
    t0 = spec.values.shape[1]
    padded = fix_length(spec, t0 + 10)
    assert padded.values.shape == (128, t0 + 10)
    np.testing.assert_array_equal(padded.values[:, :t0], spec.values)
    np.testing.assert_array_equal(padded.values[:, t0:], 0.0)
    assert padded.original_T == t0
    cut = fix_length(spec, t0 - 5)
    assert cut.values.shape == (128, t0 - 5)
    np.testing.assert_array_equal(cut.values, spec.values[:, : t0 - 5])
    assert cut.original_T == t0


def quantile_oracle(lengths, q):
    # smallest distinct value whose empirical CDF reaches q
    n = len(lengths)
    for v in sorted(set(lengths)):
        if sum(1 for u in lengths if u <= v) / n >= q:
            return v
    return max(lengths)


def test_temporal_bin_quantile_rounding_trap():
    # 0.9 * 10 == 9.000000000000002 in floats; counting k/n >= q avoids
    # selecting the 10th element by accident
    lengths = list(range(1, 11))
    assert temporal_bin_quantile(lengths, 0.9) == 9
    assert temporal_bin_quantile(lengths, 1.0) == 10
    assert temporal_bin_quantile(lengths, 0.1) == 1


@given(st.lists(st.integers(1, 300), min_size=1, max_size=60),
       st.floats(0.01, 1.0))
def test_temporal_bin_quantile_matches_oracle(lengths, q):
    assert temporal_bin_quantile(lengths, q) == quantile_oracle(lengths, q)


def test_mat1_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    m = rng.standard_normal((37, 85)).astype(np.float32)
    save_mat1(tmp_path / "m.mat1", m)
    back = load_mat1(tmp_path / "m.mat1")
    np.testing.assert_array_equal(back.astype(np.float32), m)


def test_mat1_rejects_bad_magic_and_truncation(tmp_path):
    m = np.ones((4, 4), dtype=np.float32)
    p = tmp_path / "m.mat1"
    save_mat1(p, m)
    raw = p.read_bytes()
    (tmp_path / "bad.mat1").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_mat1(tmp_path / "bad.mat1")
    (tmp_path / "short.mat1").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_mat1(tmp_path / "short.mat1")


def test_melspec_params_validation():
    with pytest.raises(ValueError):
        MelSpecParams(hop=1024)
    with pytest.raises(ValueError):
        MelSpecParams(n_mels=1000)
