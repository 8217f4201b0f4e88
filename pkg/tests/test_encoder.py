import pytest
import torch

from synthasu.encoder import (
    EncoderConfig,
    EncoderError,
    HiddenStack,
    InputTooShortError,
    LoRALinear,
    LoraConfig,
    StubEncoder,
    apply_lora,
    backbone_digest,
    build_encoder,
    encode,
    lora_modules,
    trainable_state,
)
from synthasu.model import ASUModel, HeadConfig

TINY = EncoderConfig(n_layers=3, hidden_dim=8)


def wave(n=16000, seed=0):
    return torch.randn(n, generator=torch.Generator().manual_seed(seed)) * 0.1


def test_config_defaults_and_errors():
    cfg = EncoderConfig()
    assert (cfg.n_layers, cfg.hidden_dim, cfg.hop) == (12, 768, 320)
    with pytest.raises(EncoderError):
        EncoderConfig(n_layers=0)
    with pytest.raises(EncoderError):
        build_encoder(EncoderConfig(backend_id="nope"))


def test_stub_shapes():
    stack = encode(wave(), StubEncoder(TINY))
    assert isinstance(stack, HiddenStack)
    # (16000 - 400) // 320 + 1 frames
    assert stack.states.shape == (3, 1, 49, 8)
    assert stack.frame_mask.shape == (1, 49) and stack.frame_mask.all()


def test_embedding_layer_included():
    stack = encode(wave(), StubEncoder(EncoderConfig(n_layers=3, hidden_dim=8, include_embedding_layer=True)))
    assert stack.n_layers == 4


def test_encode_deterministic():
    a = encode(wave(), StubEncoder(TINY)).states
    b = encode(wave(), StubEncoder(TINY)).states
    assert torch.equal(a, b)
    enc = StubEncoder(TINY)
    assert torch.equal(encode(wave(), enc).states, encode(wave(), enc).states)


def test_too_short():
    with pytest.raises(InputTooShortError):
        encode(wave(399), StubEncoder(TINY))
    with pytest.raises(InputTooShortError):
        encode(torch.zeros(0), StubEncoder(TINY))
    assert encode(wave(400), StubEncoder(TINY)).states.shape[2] == 1


def test_padding_mask_consistent():
    enc = StubEncoder(TINY)
    w = wave(8000)
    padded = torch.cat([w, torch.zeros(4000)])[None]
    mask = torch.zeros_like(padded, dtype=torch.bool)
    mask[:, :8000] = True
    with torch.no_grad():
        full = enc(w[None], torch.ones_like(w[None], dtype=torch.bool))
        pad = enc(padded, mask)
    t = full.states.shape[2]
    assert pad.frame_mask[0].sum() == t
    assert torch.allclose(pad.states[:, :, :t], full.states, atol=1e-5)


def test_lora_param_count():
    base = torch.nn.Linear(64, 64)
    layer = LoRALinear(base, LoraConfig(rank=8), torch.Generator().manual_seed(0))
    n_new = sum(p.numel() for n, p in layer.named_parameters() if "lora_" in n)
    assert n_new == 2 * 8 * 64
    assert not torch.any(layer.lora_B)
    assert layer.scaling == 2.0


def test_lora_transparent_at_init():
    enc = StubEncoder(TINY)
    before = encode(wave(), enc).states
    apply_lora(enc, LoraConfig(rank=4))
    assert torch.equal(encode(wave(), enc).states, before)


def test_lora_invalid():
    for kw in ({"rank": 0}, {"alpha": 0.0}, {"dropout": 1.0}):
        with pytest.raises(EncoderError):
            LoraConfig(**kw)
    with pytest.raises(EncoderError):
        apply_lora(StubEncoder(TINY), LoraConfig(target_projection_kinds=("gate_proj",)))


def test_lora_targets_counted():
    enc = apply_lora(StubEncoder(EncoderConfig(n_layers=12, hidden_dim=8)), LoraConfig(rank=8))
    assert len(lora_modules(enc)) == 24
    names = [n for n, p in enc.named_parameters() if p.requires_grad]
    assert len(names) == 48
    assert all(n.endswith(("lora_A", "lora_B")) for n in names)


def test_trainable_state_contents():
    model = ASUModel.build(EncoderConfig(n_layers=12, hidden_dim=8), ["a", "b"], HeadConfig(2, 16, 1, 16))
    names = list(trainable_state(model))
    assert names == ["layer_weights.raw_logits"] + [
        f"head.{m}.{p}" for m in ("conv1", "conv2", "fc1", "fc2") for p in ("weight", "bias")
    ]
    lora = ASUModel.build(EncoderConfig(n_layers=12, hidden_dim=8), ["a", "b"], HeadConfig(2, 16, 1, 16), LoraConfig())
    state = trainable_state(lora)
    a_names = [n for n in state if n.endswith("lora_A")]
    b_names = [n for n in state if n.endswith("lora_B")]
    # 2 kinds x 12 layers = 24 projections, one (A, B) pair each: 48 low-rank matrices
    assert len(a_names) == len(b_names) == 24
    assert len(a_names) + len(b_names) == 48
    assert {n[: -len("lora_A")] for n in a_names} == {n[: -len("lora_B")] for n in b_names}
    assert not [n for n in state if n.startswith("encoder.") and "lora_" not in n]


def test_backbone_digest_ignores_lora():
    enc = StubEncoder(TINY)
    d0 = backbone_digest(enc)
    apply_lora(enc, LoraConfig(rank=2))
    assert backbone_digest(enc) == d0
    with torch.no_grad():
        lora_modules(enc)[0].lora_B.add_(1.0)
    assert backbone_digest(enc) == d0
    with torch.no_grad():
        enc.filterbank.weight.add_(1e-3)
    assert backbone_digest(enc) != d0


def test_backbone_frozen():
    enc = StubEncoder(TINY)
    assert not any(p.requires_grad for p in enc.parameters())
    assert not enc.training
