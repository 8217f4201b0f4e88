"""Label-guided spoken-text generation through a pluggable LLM backend."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .tasks import GenerationPlan, TaskSpec, build_prompt, plan_generation

logger = logging.getLogger(__name__)

QUOTE_PAIRS = {'"': '"', "'": "'", "“": "”", "‘": "’", "`": "`"}


class BackendError(RuntimeError):
    pass


class QuotaUnmetError(RuntimeError):
    def __init__(self, shortfall: dict[str, int]):
        self.shortfall = shortfall
        detail = ", ".join(f"{k}: {v} short" for k, v in shortfall.items())
        super().__init__(f"generation quota not met ({detail})")


@dataclass(frozen=True)
class GenerationConfig:
    max_output_tokens: int = 32
    temperature: float = 1.0
    seed: int = 0
    max_chars: int = 200
    overgeneration_factor: int = 5
    backend_retries: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.overgeneration_factor < 1:
            raise ValueError("overgeneration_factor must be >= 1")


@dataclass(frozen=True)
class SpokenText:
    text: str
    label: str
    prompt: str
    backend_id: str
    index: int


class LLMBackend(Protocol):
    backend_id: str

    def generate(self, prompt: str, max_output_tokens: int, temperature: float, seed: int) -> str: ...


class Rejected(Enum):
    EMPTY = "empty"
    TOO_LONG = "too_long"
    DUPLICATE = "duplicate"


def _unquote(text: str) -> str:
    while len(text) >= 2 and QUOTE_PAIRS.get(text[0]) == text[-1]:
        text = text[1:-1].strip()
    return text


def filter_text(raw: str, max_chars: int = 200) -> str | Rejected:
    """Clean one raw LLM output; returns the accepted string or a rejection reason."""
    text = _unquote(raw.strip())
    if not text:
        return Rejected.EMPTY
    if len(text) > max_chars:
        return Rejected.TOO_LONG
    return text


def filter_batch(raws: Iterable[str], max_chars: int = 200) -> list[str | Rejected]:
    """filter_text over a batch sharing one label; exact repeats are rejected."""
    seen: set[str] = set()
    out: list[str | Rejected] = []
    for raw in raws:
        res = filter_text(raw, max_chars)
        if isinstance(res, str):
            if res in seen:
                res = Rejected.DUPLICATE
            else:
                seen.add(res)
        out.append(res)
    return out


def _call_backend(backend: LLMBackend, prompt: str, cfg: GenerationConfig, seed: int) -> str:
    last: Exception | None = None
    for _ in range(cfg.backend_retries + 1):
        try:
            return backend.generate(prompt, cfg.max_output_tokens, cfg.temperature, seed)
        except Exception as exc:  # noqa: BLE001 - any backend failure is retried
            last = exc
            logger.warning("backend %s failed on %r: %s", backend.backend_id, prompt, exc)
    raise BackendError(
        f"backend {backend.backend_id} failed {cfg.backend_retries + 1} times on {prompt!r}"
    ) from last


def _generate_label(
    task: TaskSpec | None, label: str, count: int, backend: LLMBackend, cfg: GenerationConfig
) -> tuple[list[SpokenText], int]:
    prompt = build_prompt(task, label) if task is not None else label
    accepted: list[SpokenText] = []
    seen: set[str] = set()
    budget = cfg.overgeneration_factor * count
    for attempt in range(budget):
        if len(accepted) == count:
            break
        raw = _call_backend(backend, prompt, cfg, cfg.seed + attempt)
        res = filter_text(raw, cfg.max_chars)
        if isinstance(res, Rejected):
            continue
        if res in seen:
            continue
        seen.add(res)
        accepted.append(SpokenText(res, label, prompt, backend.backend_id, len(accepted)))
    return accepted, count - len(accepted)


def generate_texts(
    plan: GenerationPlan | TaskSpec,
    backend: LLMBackend,
    config: GenerationConfig = GenerationConfig(),
    task: TaskSpec | None = None,
) -> list[SpokenText]:
    """Generate exactly ``plan.total`` filtered texts, in (label, index) order.

    Pass a TaskSpec as ``plan`` (or alongside it as ``task``) so prompts use the
    task's template; a bare plan without a task uses the default template for
    emotion labels.
    """
    if isinstance(plan, TaskSpec):
        task, plan = plan, plan_generation(plan)
    if task is None and plan.items:
        task = TaskSpec("emotion", tuple(lb for lb, _ in plan.items))

    items = [(label, count) for label, count in plan.items if count > 0]
    if config.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            shards = list(pool.map(lambda it: _generate_label(task, *it, backend, config), items))
    else:
        shards = [_generate_label(task, label, count, backend, config) for label, count in items]

    shortfall = {label: short for (label, _), (_, short) in zip(items, shards) if short}
    if shortfall:
        raise QuotaUnmetError(shortfall)
    return [rec for recs, _ in shards for rec in recs]


def save_texts(texts: Sequence[SpokenText], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in texts:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")


def load_texts(path: str | Path) -> list[SpokenText]:
    with Path(path).open(encoding="utf-8") as fh:
        return [SpokenText(**json.loads(line)) for line in fh if line.strip()]


# --- backends -------------------------------------------------------------


class CannedBackend:
    """Returns ``outputs[seed % len(outputs)]``; a fixture for tests."""

    backend_id = "canned"

    def __init__(self, outputs: Sequence[str]):
        self.outputs = list(outputs)

    def generate(self, prompt, max_output_tokens, temperature, seed):
        return self.outputs[seed % len(self.outputs)]


_SUBJECTS = ["I", "We", "You", "They", "My friend", "Everyone", "Honestly, I", "Right now we"]
_VERBS = ["really think", "just said", "keep hearing", "can tell", "never expected", "finally know"]
_OBJECTS = [
    "it is going to rain today", "the meeting moved to noon", "the car is ready",
    "dinner is almost done", "the train was late again", "the music is too loud",
    "we won the game", "the phone is on the table", "the lights are still on",
    "the package arrived", "the kids are asleep", "the store closes at nine",
]


class StubLLM:
    """Deterministic template sentence generator keyed by (prompt, seed)."""

    backend_id = "stub"

    def generate(self, prompt, max_output_tokens, temperature, seed):
        digest = hashlib.sha256(f"{prompt}|{seed}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        label = prompt.rsplit(" with ", 1)[-1]
        words = [
            _SUBJECTS[rng.integers(len(_SUBJECTS))],
            _VERBS[rng.integers(len(_VERBS))],
            _OBJECTS[rng.integers(len(_OBJECTS))],
            f"({label})",
        ]
        text = " ".join(words).split()[:max_output_tokens]
        return '"' + " ".join(text) + '."'


class HFText2TextBackend:
    """Instruction-tuned seq2seq LLM (e.g. FLAN-T5) via transformers."""

    def __init__(self, model_name: str = "google/flan-t5-xxl", device: str = "cpu", cache_dir=None):
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self.backend_id = model_name
        self.device = device
        self.tokenizer = AutoTokenizer.from_pretrained(model_name, cache_dir=cache_dir)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(model_name, cache_dir=cache_dir).to(device)
        self.model.eval()

    def generate(self, prompt, max_output_tokens, temperature, seed):
        import torch

        torch.manual_seed(seed)
        inputs = self.tokenizer(prompt, return_tensors="pt").to(self.device)
        with torch.no_grad():
            out = self.model.generate(
                **inputs,
                max_new_tokens=max_output_tokens,
                do_sample=temperature > 0,
                temperature=temperature if temperature > 0 else None,
            )
        return self.tokenizer.decode(out[0], skip_special_tokens=True)


def make_backend(name: str, **kwargs) -> LLMBackend:
    if name == "stub":
        return StubLLM()  # takes no options
    if name.startswith("hf:"):
        return HFText2TextBackend(name[3:], **kwargs)
    if name == "flan-t5":
        return HFText2TextBackend(**kwargs)
    raise ValueError(f"unknown text backend {name!r}")
