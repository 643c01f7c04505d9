"""Regenerates the committed test fixtures under tests/fixtures/.

The mel-spectrogram references are computed here by a deliberately
independent implementation: explicit loop framing, manual reflect
padding, scipy's FFT, and the per-bin triangle formula written out
scalar-by-scalar in float64.  The package must agree with these files
within the documented tolerances; regenerating them should be rare.

WAV fixtures are written with the stdlib wave module (and a raw
struct writer for the float32 case), not with the package's own
codec, so the codec tests have an outside oracle.

Run from the repository root:  python3 scripts/gen_fixtures.py
"""

import math
import struct
import wave
from pathlib import Path

import numpy as np
import scipy.fft

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

SR = 16000
N_FFT = 512
HOP = 256
N_MELS = 128


def write_pcm16(path, samples, sr=SR, channels=1):
    data = np.clip(np.rint(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(sr)
        fh.writeframes(data.tobytes())


def write_float32(path, samples, sr=SR):
    """Raw RIFF writer for IEEE-float WAV; the wave module cannot emit format 3."""
    data = np.asarray(samples, dtype="<f4").tobytes()
    byte_rate = sr * 4
    chunks = b"".join(
        [
            b"fmt ",
            struct.pack("<I", 16),
            struct.pack("<HHIIHH", 3, 1, sr, byte_rate, 4, 32),
            b"data",
            struct.pack("<I", len(data)),
            data,
        ]
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 4 + len(chunks)))
        fh.write(b"WAVE")
        fh.write(chunks)


def hz_to_mel(f):
    f_sp = 200.0 / 3.0
    if f < 1000.0:
        return f / f_sp
    return 15.0 + math.log(f / 1000.0) / (math.log(6.4) / 27.0)


def mel_to_hz(m):
    f_sp = 200.0 / 3.0
    if m < 15.0:
        return m * f_sp
    return 1000.0 * math.exp((math.log(6.4) / 27.0) * (m - 15.0))


def ref_filterbank():
    edges = [mel_to_hz(m) for m in np.linspace(0.0, hz_to_mel(SR / 2.0), N_MELS + 2)]
    fft_freqs = [k * (SR / 2.0) / (N_FFT // 2) for k in range(N_FFT // 2 + 1)]
    fb = np.zeros((N_MELS, N_FFT // 2 + 1))
    for m in range(N_MELS):
        lo, ctr, hi = edges[m], edges[m + 1], edges[m + 2]
        for k, f in enumerate(fft_freqs):
            rising = (f - lo) / (ctr - lo)
            falling = (hi - f) / (hi - ctr)
            w = min(rising, falling)
            if w > 0.0:
                fb[m, k] = w * 2.0 / (hi - lo)
    return fb


def ref_mel_spectrogram(x):
    """Full chain: reflect pad, Hann frames, power FFT, mel, dB, min-max."""
    pad = N_FFT // 2
    xp = np.concatenate([x[1 : pad + 1][::-1], x, x[-pad - 1 : -1][::-1]])
    window = np.array([0.5 - 0.5 * math.cos(2.0 * math.pi * k / N_FFT) for k in range(N_FFT)])
    frames = []
    for start in range(0, len(xp) - N_FFT + 1, HOP):
        seg = xp[start : start + N_FFT] * window
        frames.append(np.abs(scipy.fft.rfft(seg)) ** 2)
    power = np.array(frames).T
    mel = ref_filterbank() @ power
    db = 10.0 * np.log10(np.maximum(mel, 1e-10))
    db = np.maximum(db, db.max() - 80.0)
    lo, hi = db.min(), db.max()
    if hi == lo:
        return np.zeros_like(db)
    return (db - lo) / (hi - lo)


def make_waveforms():
    t1 = np.arange(SR) / SR
    rng = np.random.default_rng(20220915)
    tone440 = 0.5 * np.sin(2 * np.pi * 440.0 * t1)

    sil = np.zeros(int(0.3 * SR))
    burst = 0.9 * np.sin(2 * np.pi * 440.0 * np.arange(int(0.4 * SR)) / SR)
    tone_silence = np.concatenate([sil, burst, sil])

    f0, f1 = 200.0, 6000.0
    chirp = 0.7 * np.sin(2 * np.pi * (f0 * t1 + 0.5 * (f1 - f0) * t1 * t1))

    noise = 0.5 * (2.0 * rng.random(SR) - 1.0)

    t2 = np.arange(int(0.7 * SR)) / SR
    am_tone = 0.8 * (0.5 + 0.5 * np.sin(2 * np.pi * 8.0 * t2)) * np.sin(2 * np.pi * 1200.0 * t2)
    return {
        "tone440": ("pcm16", tone440),
        "tone_silence": ("pcm16", tone_silence),
        "chirp": ("float32", chirp),
        "noise": ("pcm16", noise),
        "am_tone": ("pcm16", am_tone),
    }


def decode_as_package_would(name, kind, samples):
    """Reference decode: pcm16 files round to int16 and scale back by 32768."""
    if kind == "pcm16":
        ints = np.clip(np.rint(samples * 32768.0), -32768, 32767)
        return ints / 32768.0
    return np.asarray(samples, dtype=np.float32).astype(np.float64)


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)

    np.save(FIXTURES / "filterbank.npy", ref_filterbank())

    for name, (kind, samples) in make_waveforms().items():
        path = FIXTURES / f"{name}.wav"
        if kind == "pcm16":
            write_pcm16(path, samples)
        else:
            write_float32(path, samples)
        decoded = decode_as_package_would(name, kind, samples)
        np.save(FIXTURES / f"{name}.mel.npy", ref_mel_spectrogram(decoded))
        print(f"{name}: {len(samples)} samples, mel T={1 + len(samples) // HOP}")

    write_pcm16(FIXTURES / "stereo.wav", np.tile([[0.2, 0.4]], (160, 1)).reshape(-1), channels=2)

    rng = np.random.default_rng(42)
    frames = rng.normal(size=(7, 768)).astype("<f4")
    with open(FIXTURES / "sample.emb1", "wb") as fh:
        fh.write(b"EMB1")
        fh.write(struct.pack("<BII", 2, frames.shape[0], frames.shape[1]))
        fh.write(frames.tobytes())
    np.save(FIXTURES / "sample_emb_frames.npy", frames.astype(np.float64))

    # regression pair: a committed checkpoint must keep producing these outputs
    from vburst.models import build_embedding_mlp, save_checkpoint

    model = build_embedding_mlp(seed=123)
    save_checkpoint(model, FIXTURES / "mlp_seed123.bkpt", epoch=0, seed=123)
    probe = np.random.default_rng(7).normal(size=(5, 768)).astype(np.float32)
    np.save(FIXTURES / "mlp_probe_input.npy", probe)
    np.save(FIXTURES / "mlp_probe_output.npy", model.forward(probe))
    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
