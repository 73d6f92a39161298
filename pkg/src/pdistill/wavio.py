"""Mono 16-bit PCM WAV export (and a read-back helper for tests)."""

import wave

import numpy as np


def write_wav(path, x: np.ndarray, sample_rate: int) -> None:
    """Write x in [-1, 1] as mono 16-bit little-endian PCM.

    Values are quantized by round-to-nearest of x * 32767. Out-of-range
    samples are an error; clamp before calling if that is intended.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D waveform, got shape {x.shape}")
    if np.any(np.abs(x) > 1.0):
        bad = int(np.argmax(np.abs(x) > 1.0))
        raise ValueError(f"sample {bad} out of range: {x[bad]}")
    pcm = np.rint(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path):
    """Returns (samples int16 array, sample_rate). Test-side helper."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError("expected mono 16-bit PCM")
        data = w.readframes(w.getnframes())
        return np.frombuffer(data, dtype="<i2").copy(), w.getframerate()


def pcm_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()
