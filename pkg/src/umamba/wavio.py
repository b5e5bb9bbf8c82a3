"""Mono 16-bit PCM WAV files via the standard library."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

SAMPLE_RATE = 8000


def write_wav(path, samples, fs=SAMPLE_RATE):
    """Write a float signal in ``[-1, 1]`` as mono 16-bit little-endian PCM."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only mono signals can be written")
    pcm = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(int(fs))
            wf.writeframes(pcm.tobytes())
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def read_wav(path):
    """Read a mono 16-bit PCM file; returns ``(fs, float64 samples)``."""
    try:
        with wave.open(str(path), "rb") as wf:
            nch, width, fs = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (OSError, wave.Error, EOFError) as err:
        raise ValueError(f"cannot read {path}: {err}") from err
    if width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    if nch != 1:
        x = x.reshape(-1, nch).mean(axis=1)
    return fs, x
