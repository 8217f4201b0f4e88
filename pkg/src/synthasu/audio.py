"""WAV I/O and waveform standardization (16 kHz mono, clipped)."""

from __future__ import annotations

import wave
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

TARGET_RATE = 16000


class AudioError(ValueError):
    pass


def postprocess_waveform(wave_: np.ndarray, source_rate: int) -> np.ndarray:
    """Return a float32 16 kHz mono waveform clipped to [-1, 1].

    2-D input is interpreted as (samples, channels) and averaged to mono.
    """
    x = np.asarray(wave_, dtype=np.float64)
    if x.size == 0:
        raise AudioError("empty waveform")
    if source_rate <= 0:
        raise AudioError(f"invalid sample rate {source_rate}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    elif x.ndim != 1:
        raise AudioError(f"expected 1-D or 2-D waveform, got shape {x.shape}")
    if source_rate != TARGET_RATE:
        g = gcd(int(source_rate), TARGET_RATE)
        x = resample_poly(x, TARGET_RATE // g, int(source_rate) // g)
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def write_wav(path: str | Path, samples: np.ndarray, rate: int = TARGET_RATE) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def read_audio(path: str | Path) -> tuple[np.ndarray, int]:
    """Read audio as float64 (samples,) or (samples, channels) plus its rate.

    WAV is handled by the stdlib; other formats (e.g. SLURP's FLAC) need soundfile.
    """
    path = Path(path)
    if not path.exists():
        raise AudioError(f"audio file not found: {path}")
    if path.suffix.lower() != ".wav":
        try:
            import soundfile
        except ImportError as exc:
            raise AudioError(f"reading {path.suffix} requires the soundfile package") from exc
        data, rate = soundfile.read(str(path), dtype="float64", always_2d=False)
        return data, rate
    try:
        with wave.open(str(path), "rb") as fh:
            n_ch, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            raw = fh.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"unreadable wav {path}: {exc}") from exc
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    elif width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:
        raise AudioError(f"unsupported sample width {width} in {path}")
    if n_ch > 1:
        data = data.reshape(-1, n_ch)
    return data, rate


def audio_duration(path: str | Path) -> float:
    path = Path(path)
    if path.suffix.lower() == ".wav":
        try:
            with wave.open(str(path), "rb") as fh:
                return fh.getnframes() / fh.getframerate()
        except (wave.Error, EOFError, FileNotFoundError) as exc:
            raise AudioError(f"unreadable wav {path}: {exc}") from exc
    try:
        import soundfile
    except ImportError as exc:
        raise AudioError(f"reading {path.suffix} requires the soundfile package") from exc
    return soundfile.info(str(path)).duration
