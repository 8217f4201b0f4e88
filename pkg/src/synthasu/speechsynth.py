"""Text-to-speech over generated texts, conditioned on sampled speaker x-vectors."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .audio import TARGET_RATE, postprocess_waveform, write_wav
from .corpus import Manifest, UtteranceRecord
from .tasks import TaskSpec
from .textgen import SpokenText

logger = logging.getLogger(__name__)

DEFAULT_XVECTOR_DIM = 512


class SpeakerPoolError(ValueError):
    pass


class SynthesisError(RuntimeError):
    def __init__(self, failed: list[int], partial: Manifest):
        self.failed = failed
        self.partial = partial
        super().__init__(f"TTS failed for {len(failed)} utterance(s): indices {failed[:20]}")


@dataclass(frozen=True)
class SpeakerEmbedding:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if not np.isfinite(v).all():
            raise SpeakerPoolError(f"speaker {self.id}: non-finite x-vector")
        object.__setattr__(self, "vector", v)


class TTSBackend(Protocol):
    backend_id: str

    def synthesize(self, text: str, speaker: SpeakerEmbedding) -> tuple[np.ndarray, int]: ...


def _validate_pool(pool: list[SpeakerEmbedding]) -> list[SpeakerEmbedding]:
    if not pool:
        raise SpeakerPoolError("speaker pool is empty")
    dims = {e.vector.shape[0] for e in pool}
    if len(dims) != 1:
        raise SpeakerPoolError(f"dimension mismatch in speaker pool: {sorted(dims)}")
    ids = [e.id for e in pool]
    if len(set(ids)) != len(ids):
        raise SpeakerPoolError("duplicate speaker ids in pool")
    return pool


def load_speaker_pool(source) -> list[SpeakerEmbedding]:
    """Load x-vectors from an ``.npz`` (one array per id), a ``.jsonl`` of
    ``{"id", "vector"}`` records, or an in-memory ``{id: vector}`` mapping."""
    if isinstance(source, dict):
        pool = [SpeakerEmbedding(str(k), v) for k, v in source.items()]
        return _validate_pool(pool)
    path = Path(source)
    if not path.exists():
        raise SpeakerPoolError(f"speaker pool not found: {path}")
    if path.suffix == ".npz":
        with np.load(path) as data:
            pool = [SpeakerEmbedding(k, data[k]) for k in data.files]
    elif path.suffix in (".jsonl", ".json"):
        pool = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                pool.append(SpeakerEmbedding(str(d["id"]), np.asarray(d["vector"])))
    else:
        raise SpeakerPoolError(f"unsupported speaker pool format {path.suffix!r}")
    return _validate_pool(pool)


def save_speaker_pool(pool: Sequence[SpeakerEmbedding], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **{e.id: e.vector for e in pool})


def stub_speaker_pool(n: int, dim: int = DEFAULT_XVECTOR_DIM, seed: int = 0) -> list[SpeakerEmbedding]:
    rng = np.random.default_rng(seed)
    return [SpeakerEmbedding(f"spk{i:03d}", rng.standard_normal(dim)) for i in range(n)]


def cmu_arctic_pool(n: int | None = None, dataset: str = "Matthijs/cmu-arctic-xvectors",
                    cache_dir=None) -> list[SpeakerEmbedding]:
    """x-vectors extracted from CMU Arctic, via the ``datasets`` package."""
    from datasets import load_dataset

    ds = load_dataset(dataset, split="validation", cache_dir=cache_dir)
    rows = ds if n is None else ds.select(range(n))
    pool = [SpeakerEmbedding(str(r.get("filename", i)), np.asarray(r["xvector"]))
            for i, r in enumerate(rows)]
    return _validate_pool(pool)


def assign_speakers(n: int, pool_size: int, seed: int) -> np.ndarray:
    """Uniform with-replacement speaker indices, precomputed in input order."""
    return np.random.default_rng(seed).integers(0, pool_size, size=n)


def synthesize_corpus(
    texts: Sequence[SpokenText],
    pool: Sequence[SpeakerEmbedding],
    backend: TTSBackend,
    seed: int,
    out_dir: str | Path,
    task: TaskSpec | str = "emotion",
    retries: int = 2,
    workers: int = 1,
    save_partial: bool = True,
) -> Manifest:
    """Synthesize one 16 kHz mono WAV per text and return (and write) the manifest.

    Audio goes to ``out_dir/wav/``; the manifest is ``out_dir/manifest.jsonl``
    with audio_ref paths relative to ``out_dir``.
    """
    pool = _validate_pool(list(pool))
    out_dir = Path(out_dir)
    task_kind = task.kind if isinstance(task, TaskSpec) else task
    # records carry dataset label ids so synthetic and real manifests share one label space
    to_id = task.dataset_label if isinstance(task, TaskSpec) else (lambda label: label)
    assignment = assign_speakers(len(texts), len(pool), seed)

    def run(i: int) -> UtteranceRecord | None:
        item, speaker = texts[i], pool[assignment[i]]
        for attempt in range(retries + 1):
            try:
                wave_, rate = backend.synthesize(item.text, speaker)
                samples = postprocess_waveform(wave_, rate)
                break
            except Exception as exc:  # noqa: BLE001
                logger.warning("TTS attempt %d failed for item %d: %s", attempt + 1, i, exc)
        else:
            return None
        utt_id = f"syn-{i:06d}"
        ref = f"wav/{utt_id}.wav"
        write_wav(out_dir / ref, samples, TARGET_RATE)
        return UtteranceRecord(utt_id, ref, to_id(item.label), speaker.id, "synthetic",
                               len(samples) / TARGET_RATE, "synthetic")

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, range(len(texts))))
    else:
        results = [run(i) for i in range(len(texts))]

    meta = {"backend": backend.backend_id, "seed": seed, "speakers": len(pool)}
    if isinstance(task, TaskSpec) and task.label_ids:
        meta["label_ids"] = dict(task.label_ids)
    manifest = Manifest(task_kind, [r for r in results if r is not None], meta, out_dir)
    failed = [i for i, r in enumerate(results) if r is None]
    if failed:
        if save_partial:
            manifest.save(out_dir / "manifest.partial.jsonl")
        raise SynthesisError(failed, manifest)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


# --- backends -------------------------------------------------------------


class StubTTS:
    """Deterministic tone sequence: one short tone per character, pitch keyed by
    a hash of (character, speaker id)."""

    backend_id = "stub"

    def __init__(self, rate: int = 22050, seconds_per_char: float = 0.02):
        self.rate = rate
        self.seconds_per_char = seconds_per_char

    def synthesize(self, text: str, speaker: SpeakerEmbedding) -> tuple[np.ndarray, int]:
        seg = max(1, int(self.rate * self.seconds_per_char))
        t = np.arange(seg) / self.rate
        base = int.from_bytes(hashlib.sha256(speaker.id.encode()).digest()[:2], "little")
        speaker_shift = 80 + base % 120
        tones = [0.3 * np.sin(2 * np.pi * (speaker_shift + 20 * (ord(ch) % 40)) * t) for ch in text]
        return np.concatenate(tones), self.rate


class SpeechT5Backend:
    """SpeechT5 text-to-speech with x-vector conditioning and a HiFi-GAN vocoder."""

    def __init__(self, model_name: str = "microsoft/speecht5_tts",
                 vocoder_name: str = "microsoft/speecht5_hifigan", device: str = "cpu", cache_dir=None):
        from transformers import SpeechT5ForTextToSpeech, SpeechT5HifiGan, SpeechT5Processor

        self.backend_id = model_name
        self.device = device
        self.processor = SpeechT5Processor.from_pretrained(model_name, cache_dir=cache_dir)
        self.model = SpeechT5ForTextToSpeech.from_pretrained(model_name, cache_dir=cache_dir).to(device).eval()
        self.vocoder = SpeechT5HifiGan.from_pretrained(vocoder_name, cache_dir=cache_dir).to(device).eval()

    def synthesize(self, text, speaker):
        import torch

        inputs = self.processor(text=text, return_tensors="pt").to(self.device)
        emb = torch.from_numpy(speaker.vector).unsqueeze(0).to(self.device)
        with torch.no_grad():
            speech = self.model.generate_speech(inputs["input_ids"], emb, vocoder=self.vocoder)
        return speech.cpu().numpy(), 16000


def make_backend(name: str, **kwargs) -> TTSBackend:
    if name == "stub":
        return StubTTS()  # takes no options
    if name == "speecht5":
        return SpeechT5Backend(**kwargs)
    raise ValueError(f"unknown TTS backend {name!r}")
