"""Frozen self-supervised speech encoders exposing all layer hidden states, plus LoRA."""

from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


class EncoderError(ValueError):
    pass


class InputTooShortError(EncoderError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    backend_id: str = "stub"
    n_layers: int = 12
    hidden_dim: int = 768
    frame_rate: float = 50.0
    include_embedding_layer: bool = False
    # stub backbone only
    frame_size: int = 400
    seed: int = 0
    # hub id or local path for pre-trained backends
    checkpoint: str = "microsoft/wavlm-base-plus"

    def __post_init__(self):
        if self.n_layers < 1 or self.hidden_dim < 1:
            raise EncoderError("n_layers and hidden_dim must be >= 1")

    @property
    def hop(self) -> int:
        return int(round(16000 / self.frame_rate))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    target_projection_kinds: tuple[str, ...] = ("q_proj", "v_proj")
    dropout: float = 0.0
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise EncoderError("LoRA rank must be >= 1")
        if not self.alpha > 0:
            raise EncoderError("LoRA alpha must be > 0")
        if not 0 <= self.dropout < 1:
            raise EncoderError("LoRA dropout must lie in [0, 1)")
        object.__setattr__(self, "target_projection_kinds", tuple(self.target_projection_kinds))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class HiddenStack:
    """Per-layer hidden states ``(L, B, T, D)`` and a ``(B, T)`` frame validity mask."""

    states: torch.Tensor
    frame_mask: torch.Tensor = field(repr=False)

    @property
    def n_layers(self) -> int:
        return self.states.shape[0]


class _Attention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x, mask):
        q, k, v = self.q_proj(x), self.k_proj(x), self.v_proj(x)
        scores = q @ k.transpose(1, 2) / math.sqrt(x.shape[-1])
        scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
        return self.out_proj(torch.softmax(scores, dim=-1) @ v)


class _StubLayer(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.attention = _Attention(dim)
        self.feed_forward = nn.Linear(dim, dim)

    def forward(self, x, mask):
        x = F.layer_norm(x + self.attention(x, mask), x.shape[-1:])
        return F.layer_norm(x + torch.tanh(self.feed_forward(x)), x.shape[-1:])


def _n_frames(n_samples: torch.Tensor, frame_size: int, hop: int) -> torch.Tensor:
    return torch.div(n_samples - frame_size, hop, rounding_mode="floor") + 1


class StubEncoder(nn.Module):
    """Tiny deterministic backbone: seeded framewise filterbank + small attention layers.

    Mirrors the structure of a transformer speech encoder (named q/k/v/out
    projections per layer) so LoRA targeting behaves as on the real model.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        self.filterbank = nn.Conv1d(1, cfg.hidden_dim, cfg.frame_size, stride=cfg.hop, bias=False)
        self.layers = nn.ModuleList(_StubLayer(cfg.hidden_dim) for _ in range(cfg.n_layers))
        with torch.no_grad():
            for p in self.parameters():
                scale = 1 / math.sqrt(p[0].numel()) if p.dim() > 1 else 0.1
                p.copy_(torch.randn(p.shape, generator=gen) * scale)
        self.requires_grad_(False)
        self.eval()

    def frame_mask(self, sample_mask: torch.Tensor) -> torch.Tensor:
        lengths = sample_mask.sum(dim=1)
        n = _n_frames(lengths, self.cfg.frame_size, self.cfg.hop)
        if (lengths < self.cfg.frame_size).any():
            raise InputTooShortError(
                f"waveform shorter than one encoder frame ({self.cfg.frame_size} samples)"
            )
        t_max = int(_n_frames(torch.tensor(sample_mask.shape[1]), self.cfg.frame_size, self.cfg.hop))
        return torch.arange(t_max)[None, :] < n[:, None]

    def forward(self, waves: torch.Tensor, sample_mask: torch.Tensor) -> HiddenStack:
        mask = self.frame_mask(sample_mask)
        x = self.filterbank((waves * sample_mask)[:, None, :]).transpose(1, 2)
        x = F.layer_norm(x, x.shape[-1:])
        states = [x] if self.cfg.include_embedding_layer else []
        for layer in self.layers:
            x = layer(x, mask)
            states.append(x)
        return HiddenStack(torch.stack(states), mask)


class WavLMEncoder(nn.Module):
    """Pre-trained WavLM-class encoder from the Hugging Face hub (frozen)."""

    def __init__(self, cfg: EncoderConfig, cache_dir=None):
        super().__init__()
        from transformers import WavLMModel

        self.cfg = cfg
        self.model = WavLMModel.from_pretrained(cfg.checkpoint, cache_dir=cache_dir)
        if self.model.config.num_hidden_layers != cfg.n_layers:
            raise EncoderError(
                f"{cfg.checkpoint} has {self.model.config.num_hidden_layers} layers, config says {cfg.n_layers}"
            )
        self.requires_grad_(False)
        self.eval()

    def forward(self, waves, sample_mask) -> HiddenStack:
        if (sample_mask.sum(dim=1) < 400).any():
            raise InputTooShortError("waveform shorter than one encoder frame (400 samples)")
        out = self.model(waves, attention_mask=sample_mask.long(), output_hidden_states=True)
        hidden = out.hidden_states if self.cfg.include_embedding_layer else out.hidden_states[1:]
        states = torch.stack(hidden)
        mask = self.model._get_feature_vector_attention_mask(states.shape[2], sample_mask.long())
        return HiddenStack(states, mask.bool())


def build_encoder(cfg: EncoderConfig, cache_dir=None) -> nn.Module:
    if cfg.backend_id == "stub":
        return StubEncoder(cfg)
    if cfg.backend_id in ("wavlm", "hf"):
        return WavLMEncoder(cfg, cache_dir=cache_dir)
    raise EncoderError(f"unknown encoder backend {cfg.backend_id!r}")


def encode(waveform: torch.Tensor, encoder: nn.Module) -> HiddenStack:
    """Encode one 1-D 16 kHz waveform (or a padded batch) in inference mode."""
    waves = waveform[None, :] if waveform.dim() == 1 else waveform
    if waves.shape[-1] == 0:
        raise InputTooShortError("empty waveform")
    mask = torch.ones_like(waves, dtype=torch.bool)
    with torch.no_grad():
        return encoder(waves, mask)


# --- LoRA -------------------------------------------------------------------


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable ``(alpha / rank) * B @ A`` delta."""

    def __init__(self, base: nn.Linear, cfg: LoraConfig, generator: torch.Generator):
        super().__init__()
        self.base = base
        self.base.requires_grad_(False)
        self.scaling = cfg.alpha / cfg.rank
        dtype = base.weight.dtype
        self.lora_A = nn.Parameter(
            torch.randn(cfg.rank, base.in_features, generator=generator).to(dtype) * cfg.init_std
        )
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, cfg.rank, dtype=dtype))
        self.dropout = nn.Dropout(cfg.dropout) if cfg.dropout > 0 else nn.Identity()

    def forward(self, x):
        return self.base(x) + (self.dropout(x) @ self.lora_A.T @ self.lora_B.T) * self.scaling


def apply_lora(encoder: nn.Module, cfg: LoraConfig) -> nn.Module:
    """Wrap every targeted projection in place; returns the same encoder."""
    gen = torch.Generator().manual_seed(cfg.seed)
    found = {kind: 0 for kind in cfg.target_projection_kinds}
    targets = []
    for name, module in encoder.named_modules():
        kind = name.rsplit(".", 1)[-1]
        if kind in found and isinstance(module, nn.Linear):
            targets.append(name)
            found[kind] += 1
    missing = [k for k, n in found.items() if n == 0]
    if missing:
        raise EncoderError(f"unknown LoRA target projection(s): {missing}")
    for name in targets:
        parent_name, _, attr = name.rpartition(".")
        parent = encoder.get_submodule(parent_name) if parent_name else encoder
        setattr(parent, attr, LoRALinear(getattr(parent, attr), cfg, gen))
    return encoder


def lora_modules(model: nn.Module) -> list[LoRALinear]:
    return [m for m in model.modules() if isinstance(m, LoRALinear)]


def trainable_state(model: nn.Module) -> "OrderedDict[str, nn.Parameter]":
    """Named parameters that training may update (layer weights, head, LoRA A/B)."""
    return OrderedDict((n, p) for n, p in model.named_parameters() if p.requires_grad)


def backbone_digest(encoder: nn.Module) -> str:
    """sha256 over base (non-LoRA) encoder parameters and buffers, keyed by pre-LoRA names."""
    h = hashlib.sha256()
    tensors = list(encoder.named_parameters()) + list(encoder.named_buffers())
    items = sorted(
        (n.replace(".base.", "."), t) for n, t in tensors if "lora_" not in n
    )
    for name, t in items:
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
