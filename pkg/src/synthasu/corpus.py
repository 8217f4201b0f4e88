"""Utterance manifests, dataset adapters, session folds and low-resource subsampling."""

from __future__ import annotations

import dataclasses
import json
import math
import os
import re
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .audio import AudioError, audio_duration, postprocess_waveform, read_audio
from .tasks import EMOTION_LABELS

SCHEMA_VERSION = 1
RECORD_KEYS = ("utt_id", "audio_ref", "label", "speaker_id", "session_id", "duration", "origin")
MAX_SECONDS = {"emotion": 6.0, "intent": 3.0}

# published unique speakers / classes / utterances after label filtering
EXPECTED_STATS = {
    "iemocap": {"speakers": 10, "classes": 4, "utterances": 5531},
    "msp_improv": {"speakers": 12, "classes": 4, "utterances": 7798},
    "slurp": {"speakers": 177, "classes": 46, "utterances": 72277},
}
EXPECTED_SESSIONS = {"iemocap": 5, "msp_improv": 6}
SLURP_SPLITS = ("train", "devel", "test")


class CorpusError(ValueError):
    pass


class LayoutError(CorpusError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    audio_ref: str
    label: str
    speaker_id: str
    session_id: str
    duration: float
    origin: str = "real"

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in RECORD_KEYS}, ensure_ascii=False)


@dataclass
class Manifest:
    task: str
    records: list[UtteranceRecord]
    meta: dict = field(default_factory=dict)
    root: Path | None = None  # audio_ref values resolve against this directory

    def __post_init__(self):
        if self.task not in MAX_SECONDS:
            raise CorpusError(f"unknown task kind {self.task!r}")
        ids = [r.utt_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate utt_id in manifest")
        for r in self.records:
            if not r.duration > 0:
                raise CorpusError(f"{r.utt_id}: duration must be positive")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records)

    @property
    def labels(self) -> list[str]:
        return sorted({r.label for r in self.records})

    @property
    def sessions(self) -> list[str]:
        return sorted({r.session_id for r in self.records})

    @property
    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})

    def derive(self, records: Iterable[UtteranceRecord], **meta) -> "Manifest":
        return Manifest(self.task, list(records), {**self.meta, **meta}, self.root)

    def select_sessions(self, sessions: Iterable[str]) -> "Manifest":
        keep = set(sessions)
        return self.derive(r for r in self.records if r.session_id in keep)

    def audio_path(self, record: UtteranceRecord) -> Path:
        p = Path(record.audio_ref)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def dumps(self) -> str:
        header = {"schema": SCHEMA_VERSION, "task": self.task}
        if self.meta:
            header["meta"] = self.meta
        lines = [json.dumps(header, ensure_ascii=False, sort_keys=True)]
        lines += [r.to_json() for r in self.records]
        return "\n".join(lines) + "\n"

    def rebased(self, new_root: Path) -> "Manifest":
        """Same records with relative audio_ref values re-expressed against ``new_root``."""
        if self.root is None or Path(self.root).resolve() == Path(new_root).resolve():
            return Manifest(self.task, self.records, self.meta, new_root)
        records = []
        for r in self.records:
            ref = r.audio_ref
            if not Path(ref).is_absolute():
                ref = Path(os.path.relpath(Path(self.root) / ref, new_root)).as_posix()
            records.append(dataclasses.replace(r, audio_ref=ref))
        return Manifest(self.task, records, self.meta, new_root)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.rebased(path.parent).dumps(), encoding="utf-8")
        return path

    @classmethod
    def loads(cls, text: str, root: Path | None = None) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise CorpusError("manifest has no header line")
        header = json.loads(lines[0])
        if header.get("schema") != SCHEMA_VERSION:
            raise CorpusError(f"unsupported manifest schema {header.get('schema')!r}")
        records = []
        for ln in lines[1:]:
            d = json.loads(ln)
            records.append(UtteranceRecord(**{k: d[k] for k in RECORD_KEYS}))
        return cls(header["task"], records, header.get("meta", {}), root)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        return cls.loads(path.read_text(encoding="utf-8"), root=path.parent)


# --- ingestion ---------------------------------------------------------------

IEMOCAP_CODES = {"neu": "neutral", "hap": "happy", "sad": "sad", "ang": "angry"}
MSP_CODES = {"N": "neutral", "H": "happy", "S": "sad", "A": "angry"}
_IEMOCAP_LINE = re.compile(r"^\[(\d+\.?\d*)\s*-\s*(\d+\.?\d*)\]\s+(Ses\d+[FM]_\S+)\s+(\w+)")
_MSP_NAME = re.compile(r"MSP-IMPROV-(S\d+[A-Z])-([FM])(\d+)-([A-Z])-([A-Z]{2}\d+)")


def _finish(records: list[UtteranceRecord], task: str, root: Path, meta: dict) -> Manifest:
    if not records:
        raise CorpusError("no records left after label filtering")
    records.sort(key=lambda r: r.utt_id)
    return Manifest(task, records, meta, root)


def ingest_iemocap(source: str | Path, merge_excited: bool = True) -> Manifest:
    """IEMOCAP_full_release layout: SessionN/dialog/EmoEvaluation/*.txt + sentences/wav."""
    root = Path(source)
    sessions = sorted(p for p in root.glob("Session*") if p.is_dir())
    if not sessions:
        raise LayoutError(f"{root}: no SessionN directories")
    codes = dict(IEMOCAP_CODES)
    if merge_excited:
        codes["exc"] = "happy"
    records = []
    for sess in sessions:
        session_id = sess.name
        for txt in sorted((sess / "dialog" / "EmoEvaluation").glob("*.txt")):
            for line in txt.read_text(encoding="utf-8", errors="replace").splitlines():
                m = _IEMOCAP_LINE.match(line)
                if not m:
                    continue
                start, end, utt, code = m.groups()
                label = codes.get(code)
                if label is None:
                    continue
                dialog = utt.rsplit("_", 1)[0]
                # utterance suffix (F000/M012) names the speaking actor of the pair
                speaker = utt[:5] + utt.rsplit("_", 1)[1][0]
                ref = Path(session_id) / "sentences" / "wav" / dialog / f"{utt}.wav"
                records.append(
                    UtteranceRecord(utt, ref.as_posix(), label, speaker, session_id,
                                    round(float(end) - float(start), 4), "real")
                )
    meta = {"dataset": "iemocap", "label_map": {k: v for k, v in sorted(codes.items())}}
    return _finish(records, "emotion", root, meta)


def ingest_msp_improv(source: str | Path) -> Manifest:
    """MSP-Improv layout: Evalution.txt (per-utterance consensus label) + Audio/sessionN/."""
    root = Path(source)
    evals = [p for p in (root / "Evalution.txt", root / "Evaluation.txt") if p.exists()]
    if not evals:
        raise LayoutError(f"{root}: missing Evalution.txt")
    records = []
    for line in evals[0].read_text(encoding="utf-8", errors="replace").splitlines():
        if not line.startswith("UTD-IMPROV") and not line.startswith("MSP-IMPROV"):
            continue
        name, _, rest = line.partition(";")
        code = rest.strip().split(";")[0].strip()
        label = MSP_CODES.get(code)
        if label is None:
            continue
        stem = Path(name.strip()).stem.replace("UTD-IMPROV", "MSP-IMPROV")
        m = _MSP_NAME.match(stem)
        if not m:
            continue
        sentence, gender, num, scenario, _ = m.groups()
        session_id = f"session{int(num)}"
        ref = Path("Audio") / session_id / sentence / scenario / f"{stem}.wav"
        try:
            duration = audio_duration(root / ref)
        except AudioError:
            continue
        records.append(UtteranceRecord(stem, ref.as_posix(), label, f"{gender}{num}", session_id,
                                       round(duration, 4), "real"))
    meta = {"dataset": "msp_improv", "label_map": dict(sorted(MSP_CODES.items()))}
    return _finish(records, "emotion", root, meta)


def ingest_slurp(source: str | Path, label_field: str = "intent",
                 audio_dir: str = "slurp_real", read_durations: bool = True) -> Manifest:
    """SLURP layout: dataset/slurp/{train,devel,test}.jsonl + <audio_dir>/ recordings.

    Each recording becomes one utterance; the split name is its session_id.
    """
    root = Path(source)
    split_dir = root / "dataset" / "slurp"
    if not all((split_dir / f"{s}.jsonl").exists() for s in SLURP_SPLITS):
        raise LayoutError(f"{split_dir}: expected train/devel/test.jsonl")
    records = []
    for split in SLURP_SPLITS:
        for line in (split_dir / f"{split}.jsonl").read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            item = json.loads(line)
            label = str(item[label_field])
            for rec in item.get("recordings", []):
                ref = Path(audio_dir) / rec["file"]
                if read_durations:
                    try:
                        duration = audio_duration(root / ref)
                    except AudioError:
                        continue
                else:
                    duration = float(rec.get("duration", 1.0))
                speaker = str(rec.get("user_id", item.get("user_id", "unknown")))
                records.append(UtteranceRecord(f"{item['slurp_id']}-{Path(rec['file']).stem}",
                                               ref.as_posix(), label, speaker, split,
                                               round(duration, 4), "real"))
    return _finish(records, "intent", root, {"dataset": "slurp", "label_field": label_field})


def ingest(dataset_kind: str, source: str | Path, labels: Sequence[str] | None = None,
           **kwargs) -> Manifest:
    """Build a manifest for ``dataset_kind``; SER sets keep only the four target emotions."""
    source = Path(source)
    if not source.exists() or (source.is_dir() and not any(source.iterdir())):
        raise LayoutError(f"{source}: missing or empty")
    if dataset_kind == "iemocap":
        manifest = ingest_iemocap(source, **kwargs)
    elif dataset_kind == "msp_improv":
        manifest = ingest_msp_improv(source, **kwargs)
    elif dataset_kind == "slurp":
        manifest = ingest_slurp(source, **kwargs)
    elif dataset_kind == "synthetic":
        manifest = Manifest.load(source)
    else:
        raise CorpusError(f"unknown dataset kind {dataset_kind!r}")
    if labels is None and manifest.task == "emotion":
        labels = EMOTION_LABELS
    if labels is not None:
        manifest = filter_labels(manifest, labels)
    return manifest


def filter_labels(manifest: Manifest, labels: Iterable[str]) -> Manifest:
    keep = set(labels)
    kept = [r for r in manifest.records if r.label in keep]
    if not kept:
        raise CorpusError("no records left after label filtering")
    return manifest.derive(kept)


def dataset_stats(manifest: Manifest) -> dict[str, int]:
    return {
        "speakers": len(manifest.speakers),
        "classes": len(manifest.labels),
        "utterances": len(manifest),
    }


def compare_to_expected(manifest: Manifest, dataset_kind: str) -> dict[str, tuple[int, int]]:
    """{stat: (observed, expected)} against the published dataset statistics."""
    expected = EXPECTED_STATS.get(dataset_kind, {})
    observed = dataset_stats(manifest)
    return {k: (observed[k], v) for k, v in expected.items()}


# --- folds -------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    test: tuple[str, ...]
    val: tuple[str, ...]
    train: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def __getitem__(self, k: int) -> Fold:
        return self.folds[k]


def _session_key(s: str):
    # Session10 after Session9
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def make_folds(manifest: Manifest, dataset_kind: str | None = None) -> FoldPlan:
    """Leave-one-session-out folds; validation is the next session cyclically.

    SLURP manifests (sessions train/devel/test) yield their standard split as one fold.
    """
    sessions = sorted(manifest.sessions, key=_session_key)
    if dataset_kind == "slurp":
        if set(sessions) != set(SLURP_SPLITS):
            raise CorpusError(f"slurp manifest sessions {sessions} != {list(SLURP_SPLITS)}")
        return FoldPlan((Fold(("test",), ("devel",), ("train",)),))
    expected = EXPECTED_SESSIONS.get(dataset_kind or "")
    if expected is not None and len(sessions) != expected:
        raise CorpusError(f"{dataset_kind} expects {expected} sessions, manifest has {len(sessions)}")
    if len(sessions) < 3:
        raise CorpusError(f"need at least 3 sessions for test/val/train folds, got {len(sessions)}")
    n = len(sessions)
    folds = []
    for k in range(n):
        test, val = sessions[k], sessions[(k + 1) % n]
        train = tuple(s for s in sessions if s not in (test, val))
        folds.append(Fold((test,), (val,), train))
    return FoldPlan(tuple(folds))


# --- subsampling -------------------------------------------------------------


def per_label_quota(ratio: float, n: int) -> int:
    # decimal view of the ratio so 0.1 * 30 gives 3, not 4
    return max(1, math.ceil(Fraction(repr(float(ratio))) * n))


def subsample(manifest: Manifest, ratio: float, seed: int) -> Manifest:
    """Stratified per-label prefix of a seeded permutation; nested across ratios."""
    if not 0 < ratio <= 1:
        raise CorpusError(f"ratio must lie in (0, 1], got {ratio}")
    by_label: dict[str, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_label.setdefault(r.label, []).append(i)
    keep: set[int] = set()
    for label, idx in sorted(by_label.items()):
        rng = np.random.default_rng([seed, zlib.crc32(label.encode())])
        order = rng.permutation(len(idx))
        keep.update(idx[j] for j in order[: per_label_quota(ratio, len(idx))])
    return manifest.derive(
        (r for i, r in enumerate(manifest.records) if i in keep),
        subsample={"ratio": ratio, "seed": seed},
    )


def holdout_split(manifest: Manifest, fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Stratified (train, held-out) split; each label keeps at least one training record."""
    held: set[str] = set()
    by_label: dict[str, list[UtteranceRecord]] = {}
    for r in manifest.records:
        by_label.setdefault(r.label, []).append(r)
    for label, recs in sorted(by_label.items()):
        if len(recs) < 2:
            continue
        rng = np.random.default_rng([seed, zlib.crc32(label.encode()), 1])
        n_held = min(len(recs) - 1, per_label_quota(fraction, len(recs)))
        held.update(recs[j].utt_id for j in rng.permutation(len(recs))[:n_held])
    train = manifest.derive(r for r in manifest.records if r.utt_id not in held)
    val = manifest.derive(r for r in manifest.records if r.utt_id in held)
    return train, val


# --- audio -------------------------------------------------------------------


def load_standardized(path: str | Path, task_kind: str) -> np.ndarray:
    """16 kHz mono samples truncated to the task's duration cap (6 s / 3 s)."""
    data, rate = read_audio(path)
    samples = postprocess_waveform(data, rate)
    return samples[: int(MAX_SECONDS[task_kind] * 16000)]


def standardize_audio(record: UtteranceRecord, task_kind: str,
                      root: str | Path | None = None) -> np.ndarray:
    path = Path(record.audio_ref)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    return load_standardized(path, task_kind)
