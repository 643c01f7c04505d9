"""WAV decode/encode and resampling against stdlib-based oracles."""

import struct
import wave

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vburst.audio import AudioClip, read_wav, resample_linear, write_wav
from vburst.errors import DataError, FormatError


def stdlib_read_pcm16(path):
    with wave.open(str(path), "rb") as w:
        raw = w.readframes(w.getnframes())
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        return data.reshape(-1, w.getnchannels()), w.getframerate()


def test_pcm16_fixture_matches_stdlib_wave(fixtures_dir):
    clip = read_wav(fixtures_dir / "tone440.wav")
    ref, rate = stdlib_read_pcm16(fixtures_dir / "tone440.wav")
    assert clip.sample_rate == rate == 16000
    np.testing.assert_array_equal(clip.samples, ref[:, 0])


def test_stereo_downmix_is_channel_mean(fixtures_dir):
    clip = read_wav(fixtures_dir / "stereo.wav")
    ref, _ = stdlib_read_pcm16(fixtures_dir / "stereo.wav")
    np.testing.assert_allclose(clip.samples, ref.mean(axis=1), atol=0, rtol=0)


def test_float32_wav_reads_exactly(fixtures_dir, tmp_path):
    # chirp.wav is IEEE float; its payload should survive untouched
    clip = read_wav(fixtures_dir / "chirp.wav")
    raw = (fixtures_dir / "chirp.wav").read_bytes()
    # locate the data chunk and parse the payload independently
    pos = 12
    payload = None
    while pos + 8 <= len(raw):
        cid, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        if cid == b"data":
            payload = np.frombuffer(raw[pos + 8:pos + 8 + size], dtype="<f4")
        pos += 8 + size + (size & 1)
    np.testing.assert_array_equal(clip.samples, payload.astype(np.float64))


def test_pcm16_round_trip_within_quantum(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.99, 0.99, 777)
    write_wav(tmp_path / "rt.wav", AudioClip(x, 16000, "rt"))
    back = read_wav(tmp_path / "rt.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768.0


def test_float32_round_trip_exact(tmp_path):
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, 333).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "rt32.wav", AudioClip(x, 8000, "rt32"), encoding="float32")
    back = read_wav(tmp_path / "rt32.wav")
    assert back.sample_rate == 8000
    np.testing.assert_array_equal(back.samples, x)


def test_resample_identity_when_rate_matches():
    clip = AudioClip(np.linspace(-1, 1, 100), 16000, "r")
    out = resample_linear(clip, 16000)
    np.testing.assert_array_equal(out.samples, clip.samples)


def test_resample_preserves_linear_ramp():
    # linear interpolation reproduces a straight line exactly (up to fp error)
    n = 1000
    x = np.linspace(0.0, 1.0, n)
    clip = AudioClip(x, 48000, "ramp")
    out = resample_linear(clip, 16000)
    assert out.sample_rate == 16000
    expected_len = int(round(n * 16000 / 48000))
    assert len(out.samples) == expected_len
    t = np.arange(expected_len) * (48000 / 16000)
    ref = np.interp(t, np.arange(n), x)
    np.testing.assert_allclose(out.samples, ref, atol=1e-12)


def test_resample_constant_stays_constant():
    clip = AudioClip(np.full(500, 0.25), 44100, "c")
    out = resample_linear(clip, 16000)
    np.testing.assert_allclose(out.samples, 0.25, atol=1e-12)


@given(st.integers(8000, 48000), st.integers(50, 400))
def test_resample_length_is_rounded_ratio(rate, n):
    clip = AudioClip(np.zeros(n), rate, "len")
    out = resample_linear(clip, 16000)
    assert len(out.samples) == int(round(n * 16000 / rate))


def test_rejects_non_riff(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        read_wav(p)


def test_rejects_truncated_file(tmp_path, fixtures_dir):
    raw = (fixtures_dir / "tone440.wav").read_bytes()
    p = tmp_path / "trunc.wav"
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError):
        read_wav(p)


def test_rejects_unsupported_format_tag(tmp_path):
    # minimal RIFF with format tag 2 (ADPCM), which is not supported
    fmt = struct.pack("<HHIIHH", 2, 1, 16000, 32000, 2, 16)
    data = b"\x00" * 8
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    p = tmp_path / "adpcm.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(FormatError):
        read_wav(p)


def test_rejects_empty_payload(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", 0)
    p = tmp_path / "empty.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(DataError):
        read_wav(p)


def test_clip_duration_and_validation():
    clip = AudioClip(np.zeros(8000), 16000, "d")
    assert clip.duration == pytest.approx(0.5)
    with pytest.raises(ValueError):
        AudioClip(np.zeros((2, 2)), 16000, "2d")
    with pytest.raises(ValueError):
        AudioClip(np.zeros(4), 0, "rate")
