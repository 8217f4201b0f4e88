"""ASU task definitions, label-guided prompt templates and generation plans."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

EMOTION_LABELS = ("neutral", "happy", "sad", "angry")

DEFAULT_TEMPLATES = {
    "emotion": "Generate a spoken utterance with {label} emotion",
    "intent": "Generate a spoken utterance with intent to {label}",
}

DEFAULT_COUNTS = {"emotion": 1000, "intent": 100}


class TaskError(ValueError):
    pass


class UnknownLabelError(TaskError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


def normalize_label(label: str) -> str:
    return label.strip().lower()


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    labels: tuple[str, ...]
    per_label_count: int = 1
    template: str | None = None
    # human-readable phrasing -> dataset label identifier (e.g. SLURP intent id)
    label_ids: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFAULT_TEMPLATES:
            raise TaskError(f"unknown task kind {self.kind!r}; expected emotion or intent")
        labels = tuple(normalize_label(lb) for lb in self.labels)
        if not labels:
            raise TaskError("task has an empty label set")
        if any(not lb for lb in labels):
            raise TaskError("labels must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise TaskError(f"duplicate labels in {labels}")
        if self.per_label_count < 1:
            raise TaskError("per_label_count must be >= 1")
        tmpl = self.template
        if tmpl is not None and tmpl.count("{label}") != 1:
            raise TaskError("template must contain exactly one {label} placeholder")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(
            self, "label_ids", {normalize_label(k): v for k, v in dict(self.label_ids).items()}
        )

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def prompt_template(self) -> str:
        return self.template or DEFAULT_TEMPLATES[self.kind]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(normalize_label(label))
        except ValueError:
            raise UnknownLabelError(f"label {label!r} is not in the {self.kind} label set") from None

    @property
    def dataset_labels(self) -> tuple[str, ...]:
        """Class identifiers as they appear in manifests, in label order."""
        return tuple(self.dataset_label(lb) for lb in self.labels)

    def dataset_label(self, label: str) -> str:
        """Dataset identifier for a label phrasing (identity when no mapping is given)."""
        label = normalize_label(label)
        return self.label_ids.get(label, label)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskSpec":
        kind = d.get("kind", "emotion")
        labels = d.get("labels")
        label_ids = dict(d.get("label_ids") or {})
        if isinstance(labels, Mapping):
            # {phrasing: dataset_id}
            label_ids = dict(labels)
            labels = list(labels)
        elif labels is None:
            if kind != "emotion":
                raise TaskError("intent tasks need an explicit label list")
            labels = EMOTION_LABELS
        return cls(
            kind=kind,
            labels=tuple(labels),
            per_label_count=int(d.get("per_label_count", DEFAULT_COUNTS[kind])),
            template=d.get("template"),
            label_ids=label_ids,
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "labels": list(self.labels), "per_label_count": self.per_label_count}
        if self.template:
            d["template"] = self.template
        if self.label_ids:
            d["label_ids"] = dict(self.label_ids)
        return d


def emotion_task(per_label_count: int = 1000) -> TaskSpec:
    return TaskSpec("emotion", EMOTION_LABELS, per_label_count)


def intent_task(labels, per_label_count: int = 100) -> TaskSpec:
    """Intent task from a list of phrasings or a {phrasing: dataset_id} mapping."""
    if isinstance(labels, Mapping):
        return TaskSpec("intent", tuple(labels), per_label_count, label_ids=dict(labels))
    return TaskSpec("intent", tuple(labels), per_label_count)


def build_prompt(task: TaskSpec, label: str) -> str:
    label = task.labels[task.index(label)]
    return task.prompt_template.replace("{label}", label)


@dataclass(frozen=True)
class GenerationPlan:
    items: tuple[tuple[str, int], ...]

    @property
    def total(self) -> int:
        return sum(count for _, count in self.items)

    def __iter__(self):
        return iter(self.items)


def plan_generation(task: TaskSpec) -> GenerationPlan:
    if not task.labels:
        raise TaskError("cannot plan generation for an empty label set")
    return GenerationPlan(tuple((label, task.per_label_count) for label in task.labels))
