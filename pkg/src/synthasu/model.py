"""Downstream classifier: weighted layer averaging + pointwise-conv head."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import (
    EncoderConfig,
    HiddenStack,
    LoraConfig,
    apply_lora,
    build_encoder,
    lora_modules,
)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class HeadConfig:
    n_classes: int
    conv_channels: int = 256
    conv_kernel: int = 1
    fc_hidden: int = 256

    def __post_init__(self):
        if self.conv_kernel != 1:
            raise ModelError("head convolutions are pointwise (kernel size 1)")
        if self.n_classes < 2:
            raise ModelError("n_classes must be >= 2")

    @property
    def pooled_dim(self) -> int:
        return self.conv_channels

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


class LayerWeights(nn.Module):
    def __init__(self, n_layers: int):
        super().__init__()
        self.raw_logits = nn.Parameter(torch.zeros(n_layers))

    @property
    def normalized(self) -> torch.Tensor:
        return torch.softmax(self.raw_logits, dim=0)

    def forward(self, stack: HiddenStack | torch.Tensor) -> torch.Tensor:
        return weighted_layer_average(stack, self.raw_logits)


def weighted_layer_average(stack: HiddenStack | torch.Tensor, raw_logits: torch.Tensor) -> torch.Tensor:
    """Convex combination of layer outputs with weights softmax(raw_logits).

    ``stack`` holds layers on dim 0: ``(L, T, D)`` or ``(L, B, T, D)``.
    """
    states = stack.states if isinstance(stack, HiddenStack) else stack
    if states.shape[0] != raw_logits.shape[0]:
        raise ModelError(f"{raw_logits.shape[0]} layer weights for {states.shape[0]} layers")
    w = torch.softmax(raw_logits, dim=0).to(states.dtype)
    return torch.tensordot(w, states, dims=1)


class ClassifierHead(nn.Module):
    """conv1x1 -> ReLU -> conv1x1 -> ReLU -> masked mean pool -> FC -> ReLU -> FC."""

    def __init__(self, in_dim: int, cfg: HeadConfig):
        super().__init__()
        self.cfg = cfg
        self.conv1 = nn.Conv1d(in_dim, cfg.conv_channels, 1)
        self.conv2 = nn.Conv1d(cfg.conv_channels, cfg.conv_channels, 1)
        self.fc1 = nn.Linear(cfg.conv_channels, cfg.fc_hidden)
        self.fc2 = nn.Linear(cfg.fc_hidden, cfg.n_classes)

    def pool(self, features: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Pooled ``(B, conv_channels)`` embedding of ``(B, T, D)`` features."""
        if mask is None:
            mask = torch.ones(features.shape[:2], dtype=torch.bool, device=features.device)
        counts = mask.sum(dim=1)
        if (counts == 0).any():
            raise ModelError("frame mask admits zero frames")
        x = F.relu(self.conv1(features.transpose(1, 2)))
        x = F.relu(self.conv2(x))
        m = mask[:, None, :].to(x.dtype)
        return (x * m).sum(dim=2) / counts[:, None].to(x.dtype)

    def forward(self, features: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(self.pool(features, mask))))


def forward_head(features: torch.Tensor, mask: torch.Tensor | None, head: ClassifierHead) -> torch.Tensor:
    unbatched = features.dim() == 2
    if unbatched:
        features = features[None]
        mask = None if mask is None else mask[None]
    logits = head(features, mask)
    return logits[0] if unbatched else logits


def predict(logits) -> np.ndarray | int:
    """Argmax over the last axis; ties go to the lowest index."""
    if isinstance(logits, torch.Tensor):
        logits = logits.detach().cpu().numpy()
    arr = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ModelError("non-finite logits")
    out = np.argmax(arr, axis=-1)
    return int(out) if out.ndim == 0 else out


class ASUModel(nn.Module):
    """Frozen encoder -> weighted layer average -> classification head."""

    def __init__(self, encoder: nn.Module, encoder_cfg: EncoderConfig, labels,
                 head_cfg: HeadConfig | None = None, lora_cfg: LoraConfig | None = None,
                 seed: int = 0):
        super().__init__()
        self.labels = tuple(labels)
        head_cfg = head_cfg or HeadConfig(len(self.labels))
        if head_cfg.n_classes != len(self.labels):
            raise ModelError(f"head has {head_cfg.n_classes} classes for {len(self.labels)} labels")
        self.encoder_cfg, self.head_cfg, self.lora_cfg = encoder_cfg, head_cfg, lora_cfg
        self.encoder = encoder
        self.encoder.requires_grad_(False)
        if lora_cfg is not None:
            apply_lora(self.encoder, lora_cfg)
        n_layers = encoder_cfg.n_layers + int(encoder_cfg.include_embedding_layer)
        self.layer_weights = LayerWeights(n_layers)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.head = ClassifierHead(encoder_cfg.hidden_dim, head_cfg)

    @classmethod
    def build(cls, encoder_cfg: EncoderConfig, labels, head_cfg: HeadConfig | None = None,
              lora_cfg: LoraConfig | None = None, seed: int = 0, cache_dir=None) -> "ASUModel":
        return cls(build_encoder(encoder_cfg, cache_dir), encoder_cfg, labels, head_cfg, lora_cfg, seed)

    def train(self, mode: bool = True):
        super().train(mode)
        # backbone stays in inference mode; only LoRA dropout follows `mode`
        self.encoder.eval()
        for m in lora_modules(self.encoder):
            m.train(mode)
        return self

    def encode(self, waves: torch.Tensor, sample_mask: torch.Tensor) -> HiddenStack:
        if self.lora_cfg is None:
            with torch.no_grad():
                return self.encoder(waves, sample_mask)
        return self.encoder(waves, sample_mask)

    def forward_stack(self, stack: HiddenStack) -> torch.Tensor:
        return self.head(self.layer_weights(stack), stack.frame_mask)

    def forward(self, waves: torch.Tensor, sample_mask: torch.Tensor) -> torch.Tensor:
        return self.forward_stack(self.encode(waves, sample_mask))

    def config_digest(self) -> dict[str, str | int]:
        return {
            "encoder": self.encoder_cfg.digest(),
            "head": self.head_cfg.digest(),
            "lora": self.lora_cfg.digest() if self.lora_cfg else "none",
            "n_classes": self.head_cfg.n_classes,
        }
