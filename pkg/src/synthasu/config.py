"""YAML run configuration: one flat section per module."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .corpus import Manifest
from .encoder import EncoderConfig, LoraConfig
from .model import HeadConfig
from .tasks import TaskSpec
from .textgen import GenerationConfig

CACHE_ENV = "SYNTHASU_CACHE_DIR"
SECTIONS = ("task", "generation", "tts", "corpus", "encoder", "lora", "head", "train", "experiment")
DEFAULT_RATIOS = (0.05, 0.10, 0.20, 0.50, 1.00)


class ConfigError(ValueError):
    pass


def cache_dir() -> str | None:
    return os.environ.get(CACHE_ENV)


def task_from_dict(d: dict, base_dir: str | Path = ".") -> TaskSpec:
    """TaskSpec from a config section.

    ``labels_from_manifest: <path>`` takes the label set from an ingested
    manifest; each id is phrased for prompting by replacing underscores with
    spaces (``alarm_set`` -> "alarm set").
    """
    d = dict(d or {})
    source = d.pop("labels_from_manifest", None)
    if source is not None:
        if "labels" in d:
            raise ConfigError("give either labels or labels_from_manifest, not both")
        path = Path(source)
        ids = Manifest.load(path if path.is_absolute() else Path(base_dir) / path).labels
        d["labels"] = {i.replace("_", " "): i for i in ids}
    return TaskSpec.from_dict(d)


def _pick(cls, d: dict) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(d)


@dataclass
class RunConfig:
    """Parsed configuration; paths are already resolved against the config file."""

    task: TaskSpec
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    text_backend: str = "stub"
    tts: dict = field(default_factory=dict)
    dataset_kind: str | None = None
    real_manifest: Path | None = None
    synthetic_manifest: Path | None = None
    folds: list[int] | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lora: LoraConfig | None = field(default_factory=LoraConfig)
    head: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    regimes: list[str] = field(default_factory=lambda: ["real_baseline"])
    ratios: list[float] = field(default_factory=lambda: list(DEFAULT_RATIOS))
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("runs/default")
    workers: int = 1
    base_dir: Path = Path(".")

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment.seeds must be non-empty")
        for r in self.ratios:
            if not 0 < r <= 1:
                raise ConfigError(f"ratio {r} outside (0, 1]")

    def head_config(self) -> HeadConfig:
        return HeadConfig(n_classes=self.task.n_classes, **_pick(HeadConfig, self.head))

    @property
    def synthetic_val_fraction(self) -> float:
        return float(self.train.get("synthetic_val_fraction", 0.1))

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "RunConfig":
        base = Path(base_dir)
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        def path(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        corpus = dict(raw.get("corpus") or {})
        lora = dict(raw.get("lora") or {})
        lora_enabled = lora.pop("enabled", True)
        if "target_projection_kinds" in lora:
            lora["target_projection_kinds"] = tuple(lora["target_projection_kinds"])
        exp = dict(raw.get("experiment") or {})
        gen = dict(raw.get("generation") or {})
        text_backend = gen.pop("backend", "stub")
        return cls(
            task=task_from_dict(raw.get("task") or {}, base),
            generation=GenerationConfig(**_pick(GenerationConfig, gen)),
            text_backend=text_backend,
            tts=dict(raw.get("tts") or {}),
            dataset_kind=corpus.get("dataset_kind"),
            real_manifest=path(corpus.get("real_manifest")),
            synthetic_manifest=path(corpus.get("synthetic_manifest")),
            folds=corpus.get("folds"),
            encoder=EncoderConfig(**_pick(EncoderConfig, raw.get("encoder") or {})),
            lora=LoraConfig(**_pick(LoraConfig, lora)) if lora_enabled else None,
            head=dict(raw.get("head") or {}),
            train=dict(raw.get("train") or {}),
            regimes=list(exp.get("regimes", ["real_baseline"])),
            ratios=[float(r) for r in exp.get("ratios", DEFAULT_RATIOS)],
            seeds=[int(s) for s in exp.get("seeds", [0])],
            output_dir=path(exp.get("output_dir", "runs/default")),
            workers=int(exp.get("workers", 1)),
            base_dir=base,
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return cls.from_dict(raw, path.parent)


def load_yaml(path: str | Path) -> dict[str, Any]:
    return yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
