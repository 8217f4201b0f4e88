"""Small tone-based corpora for exercising the pipeline without licensed audio.

Each class is a pair of tones at class-specific frequencies. "Real" data is
organised in sessions with a per-session pitch/loudness shift; the "synthetic"
variant draws from the same class structure with wider frequency jitter and
more additive noise.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import TARGET_RATE, write_wav
from .corpus import Manifest, UtteranceRecord
from .tasks import EMOTION_LABELS


def _class_freqs(k: int) -> tuple[float, float]:
    return 220.0 + 180.0 * k, 1400.0 + 260.0 * k


def _utterance(rng, k: int, seconds: float, pitch: float, jitter: float, noise: float) -> np.ndarray:
    n = int(seconds * TARGET_RATE * rng.uniform(0.8, 1.2))
    t = np.arange(n) / TARGET_RATE
    f1, f2 = _class_freqs(k)
    f1 *= pitch * (1 + rng.normal(0, jitter))
    f2 *= pitch * (1 + rng.normal(0, jitter))
    amp = rng.uniform(0.2, 0.4)
    x = amp * np.sin(2 * np.pi * f1 * t + rng.uniform(0, 2 * np.pi))
    x += 0.5 * amp * np.sin(2 * np.pi * f2 * t + rng.uniform(0, 2 * np.pi))
    return x + noise * rng.standard_normal(n)


def make_real(root: str | Path, labels: Sequence[str] = EMOTION_LABELS, n_sessions: int = 5,
              per_label_per_session: int = 10, seed: int = 0, seconds: float = 0.3,
              task: str = "emotion") -> Manifest:
    root = Path(root)
    rng = np.random.default_rng(seed)
    records = []
    for s in range(n_sessions):
        session = f"Session{s + 1}"
        pitch = rng.uniform(0.9, 1.1)
        for k, label in enumerate(labels):
            for i in range(per_label_per_session):
                utt = f"{session}_{k:02d}_{i:03d}"
                wave = _utterance(rng, k, seconds, pitch, jitter=0.02, noise=0.02)
                ref = f"wav/{utt}.wav"
                write_wav(root / ref, wave)
                records.append(UtteranceRecord(utt, ref, label, f"{session}-spk{i % 2}", session,
                                               len(wave) / TARGET_RATE, "real"))
    manifest = Manifest(task, records, {"dataset": "toy"}, root)
    manifest.save(root / "manifest.jsonl")
    return manifest


def make_synthetic(root: str | Path, labels: Sequence[str] = EMOTION_LABELS, per_label: int = 40,
                   seed: int = 1, seconds: float = 0.3, jitter: float = 0.06, noise: float = 0.15,
                   task: str = "emotion") -> Manifest:
    root = Path(root)
    rng = np.random.default_rng(seed)
    records = []
    for k, label in enumerate(labels):
        for i in range(per_label):
            utt = f"syn-{k:02d}-{i:04d}"
            wave = _utterance(rng, k, seconds, rng.uniform(0.85, 1.15), jitter, noise)
            ref = f"wav/{utt}.wav"
            write_wav(root / ref, wave)
            records.append(UtteranceRecord(utt, ref, label, f"spk{i % 8:03d}", "synthetic",
                                           len(wave) / TARGET_RATE, "synthetic"))
    manifest = Manifest(task, records, {"dataset": "toy-synthetic"}, root)
    manifest.save(root / "manifest.jsonl")
    return manifest
