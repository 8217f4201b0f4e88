"""Supervised fine-tuning, best-on-validation checkpointing and synthetic-init transfer."""

from __future__ import annotations

import copy
import logging
import os
import threading
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import Manifest, load_standardized
from .encoder import trainable_state
from .metrics import Metrics, compute_metrics
from .model import ASUModel, ModelError, predict

logger = logging.getLogger(__name__)

REGIMES = ("real_baseline", "synthetic_zero_shot", "low_resource", "synthetic_init_low_resource")
LOW_RESOURCE_REGIMES = ("low_resource", "synthetic_init_low_resource")
CHECKPOINT_FORMAT = 1

DEFAULT_LR = {"emotion": 5e-4, "intent": 5e-3}
LOW_RESOURCE_LR = {"emotion": 1e-4, "intent": 5e-3}
DEFAULT_EPOCHS = {"emotion": 30, "intent": 50}


class TrainingError(RuntimeError):
    pass


class EmptyManifestError(TrainingError):
    pass


class LabelMismatchError(TrainingError):
    pass


class DivergenceError(TrainingError):
    pass


class IncompatibleCheckpointError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task_kind: str = "emotion"
    regime: str = "real_baseline"
    batch_size: int = 64
    learning_rate: float | None = None
    max_epochs: int | None = None
    seed: int = 0
    init_checkpoint: str | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.task_kind not in DEFAULT_LR:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.learning_rate is None:
            table = LOW_RESOURCE_LR if self.regime in LOW_RESOURCE_REGIMES else DEFAULT_LR
            object.__setattr__(self, "learning_rate", table[self.task_kind])
        if self.max_epochs is None:
            object.__setattr__(self, "max_epochs", DEFAULT_EPOCHS[self.task_kind])
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")

    def validate_init(self) -> None:
        if self.regime == "synthetic_init_low_resource" and not self.init_checkpoint:
            raise ValueError("synthetic_init_low_resource requires init_checkpoint")


@dataclass
class Checkpoint:
    state: dict[str, torch.Tensor]
    config_digest: dict
    labels: tuple[str, ...]
    best_val_metric: float
    epoch: int
    seed: int
    history: list[dict] = field(default_factory=list)
    head_config: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "state": self.state,
                "config_digest": self.config_digest,
                "labels": list(self.labels),
                "best_val_metric": self.best_val_metric,
                "epoch": self.epoch,
                "seed": self.seed,
                "history": self.history,
                "head_config": self.head_config,
            },
            tmp,
        )
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        d = torch.load(path, map_location="cpu", weights_only=True)
        if d.get("format") != CHECKPOINT_FORMAT:
            raise IncompatibleCheckpointError(f"unsupported checkpoint format {d.get('format')!r}")
        return cls(d["state"], d["config_digest"], tuple(d["labels"]), d["best_val_metric"],
                   d["epoch"], d["seed"], d["history"], d.get("head_config", {}))


def snapshot(model: ASUModel, **kwargs) -> Checkpoint:
    state = {n: p.detach().clone() for n, p in trainable_state(model).items()}
    return Checkpoint(state, model.config_digest(), model.labels, head_config=asdict(model.head_cfg), **kwargs)


def init_from_checkpoint(model: ASUModel, ckpt: Checkpoint) -> ASUModel:
    """Copy layer weights, head and LoRA matrices from ``ckpt`` into ``model``."""
    mine = model.config_digest()
    for component in ("n_classes", "encoder", "head", "lora"):
        if mine.get(component) != ckpt.config_digest.get(component):
            raise IncompatibleCheckpointError(
                f"checkpoint {component} mismatch: {ckpt.config_digest.get(component)!r} vs {mine.get(component)!r}"
            )
    if tuple(ckpt.labels) != model.labels:
        raise IncompatibleCheckpointError(f"checkpoint labels {ckpt.labels} != model labels {model.labels}")
    params = trainable_state(model)
    if set(params) != set(ckpt.state):
        raise IncompatibleCheckpointError("checkpoint parameter names do not match the model")
    with torch.no_grad():
        for name, p in params.items():
            p.copy_(ckpt.state[name])
    return model


# --- data ---------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _cached_audio(path: str, task_kind: str, mtime: float) -> np.ndarray:
    samples = load_standardized(path, task_kind)
    samples.setflags(write=False)
    return samples


def load_examples(manifest: Manifest, labels: Sequence[str]) -> list[tuple[np.ndarray, int]]:
    if len(manifest) == 0:
        raise EmptyManifestError("manifest is empty")
    index = {lb: i for i, lb in enumerate(labels)}
    unknown = sorted({r.label for r in manifest} - set(index))
    if unknown:
        raise LabelMismatchError(f"manifest labels {unknown} not in model labels {list(labels)}")
    out = []
    for r in manifest:
        path = manifest.audio_path(r)
        out.append((_cached_audio(str(path), manifest.task, path.stat().st_mtime), index[r.label]))
    return out


def collate(batch: Sequence[tuple[np.ndarray, int]]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Zero-pad to the longest waveform; returns (waves, sample_mask, labels)."""
    n = max(len(w) for w, _ in batch)
    waves = torch.zeros(len(batch), n)
    mask = torch.zeros(len(batch), n, dtype=torch.bool)
    for i, (w, _) in enumerate(batch):
        waves[i, : len(w)] = torch.tensor(w, dtype=torch.float32)
        mask[i, : len(w)] = True
    return waves, mask, torch.tensor([y for _, y in batch])


def _batches(examples, batch_size: int, order=None):
    order = range(len(examples)) if order is None else order
    order = list(order)
    for i in range(0, len(order), batch_size):
        yield collate([examples[j] for j in order[i : i + batch_size]])


# --- training -------------------------------------------------------------------


def predict_examples(model: ASUModel, examples, batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    preds = []
    with torch.no_grad():
        for waves, mask, _ in _batches(examples, batch_size):
            preds.append(np.atleast_1d(predict(model(waves, mask))))
    model.train(was_training)
    return np.concatenate(preds)


def evaluate_examples(model: ASUModel, examples, batch_size: int = 64) -> Metrics:
    preds = predict_examples(model, examples, batch_size)
    return compute_metrics(preds, [y for _, y in examples], len(model.labels))


def evaluate(model: ASUModel, test_manifest: Manifest, task_kind: str | None = None,
             batch_size: int = 64) -> Metrics:
    """UAR, macro-F1 and the confusion matrix on ``test_manifest`` (no state change)."""
    return evaluate_examples(model, load_examples(test_manifest, model.labels), batch_size)


def train(model: ASUModel, train_manifest: Manifest, val_manifest: Manifest, cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Fine-tune the trainable state and return the best-on-validation checkpoint.

    Epoch 0 is the untrained model; the validation score (UAR for emotion,
    macro-F1 for intent) is recorded after every epoch.
    """
    train_ex = load_examples(train_manifest, model.labels)
    val_ex = load_examples(val_manifest, model.labels)
    kind = cfg.task_kind
    params = list(trainable_state(model).values())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)

    def record(epoch: int, loss: float) -> dict:
        try:
            score = evaluate_examples(model, val_ex, cfg.batch_size).primary(kind)
        except ModelError as exc:
            raise DivergenceError(f"validation at epoch {epoch}: {exc}") from exc
        entry = {"epoch": epoch, "train_loss": loss, "val_metric": score}
        history.append(entry)
        if on_epoch:
            on_epoch(entry)
        return entry

    history: list[dict] = []
    first = record(0, float("nan"))
    best = snapshot(model, best_val_metric=first["val_metric"], epoch=0, seed=cfg.seed)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        for epoch in range(1, cfg.max_epochs + 1):
            model.train()
            order = torch.randperm(len(train_ex), generator=gen).tolist()
            total, count = 0.0, 0
            for waves, mask, y in _batches(train_ex, cfg.batch_size, order):
                loss = F.cross_entropy(model(waves, mask), y)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(y)
                count += len(y)
            entry = record(epoch, total / count)
            logger.info("epoch %d loss %.4f val %.4f", epoch, entry["train_loss"], entry["val_metric"])
            if entry["val_metric"] > best.best_val_metric:
                best = snapshot(model, best_val_metric=entry["val_metric"], epoch=epoch, seed=cfg.seed)
    model.eval()
    best.history = copy.deepcopy(history)
    return best


def with_regime(cfg: TrainConfig, regime: str, **changes) -> TrainConfig:
    """Same config under another regime, re-deriving the regime's default learning rate."""
    return replace(cfg, regime=regime, learning_rate=changes.pop("learning_rate", None), **changes)
