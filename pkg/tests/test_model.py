import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from synthasu.encoder import HiddenStack
from synthasu.model import (
    ClassifierHead,
    HeadConfig,
    LayerWeights,
    ModelError,
    forward_head,
    predict,
    weighted_layer_average,
)


def head(in_dim=8, n_classes=3, seed=0, channels=16, hidden=16):
    torch.manual_seed(seed)
    return ClassifierHead(in_dim, HeadConfig(n_classes, channels, 1, hidden))


def test_head_defaults():
    cfg = HeadConfig(4)
    assert (cfg.conv_channels, cfg.conv_kernel, cfg.fc_hidden, cfg.pooled_dim) == (256, 1, 256, 256)
    h = ClassifierHead(768, cfg)
    assert h.conv1.kernel_size == (1,) and h.conv2.kernel_size == (1,)
    assert h.conv1.out_channels == 256 and h.fc2.out_features == 4
    with pytest.raises(ModelError):
        HeadConfig(4, conv_kernel=3)


def test_uniform_average():
    states = torch.randn(3, 5, 4, dtype=torch.float64)
    out = weighted_layer_average(states, torch.zeros(3, dtype=torch.float64))
    assert torch.allclose(out, states.mean(0), atol=1e-15)


def test_near_one_hot():
    states = torch.randn(3, 5, 4, dtype=torch.float64)
    out = weighted_layer_average(states, torch.tensor([30.0, -30.0, -30.0], dtype=torch.float64))
    assert (out - states[0]).abs().max() <= 1e-9


def test_hand_mixing():
    states = torch.stack([torch.ones(2, 3), 3 * torch.ones(2, 3)]).double()
    out = weighted_layer_average(states, torch.tensor([0.0, math.log(3)], dtype=torch.float64))
    assert torch.allclose(out, torch.full((2, 3), 2.5, dtype=torch.float64), atol=1e-15)


def test_average_stack_and_mismatch():
    stack = HiddenStack(torch.randn(2, 1, 5, 4), torch.ones(1, 5, dtype=torch.bool))
    lw = LayerWeights(2)
    assert lw(stack).shape == (1, 5, 4)
    assert torch.allclose(lw.normalized, torch.tensor([0.5, 0.5]))
    with pytest.raises(ModelError):
        weighted_layer_average(stack, torch.zeros(3))


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=12))
def test_simplex(logits):
    w = LayerWeights(len(logits))
    with torch.no_grad():
        w.raw_logits.copy_(torch.tensor(logits))
    n = w.normalized.double()
    assert abs(n.sum().item() - 1) <= 1e-6 and (n > 0).all()


def test_permutation_invariance():
    h = head()
    x = torch.randn(1, 7, 8)
    perm = torch.randperm(7)
    assert torch.allclose(h(x), h(x[:, perm]), atol=1e-6)


def test_padding_ignored():
    h = head()
    x = torch.randn(1, 5, 8)
    padded = torch.cat([x, torch.randn(1, 3, 8) * 100], dim=1)
    mask = torch.tensor([[True] * 5 + [False] * 3])
    assert torch.allclose(h(x), h(padded, mask), atol=1e-5)


def test_zero_features_bias_path():
    h = head()
    logits = forward_head(torch.zeros(4, 8), None, h)
    with torch.no_grad():
        z = torch.relu(h.conv1.bias)
        z = torch.relu(h.conv2.weight[:, :, 0] @ z + h.conv2.bias)
        z = torch.relu(h.fc1.weight @ z + h.fc1.bias)
        expected = h.fc2.weight @ z + h.fc2.bias
    assert torch.allclose(logits, expected, atol=1e-6)
    for p in h.parameters():
        if p.dim() == 1:
            torch.nn.init.zeros_(p)
    assert torch.equal(forward_head(torch.zeros(4, 8), None, h), torch.zeros(3))


def test_single_frame_identity_convs():
    h = head(in_dim=4, channels=4, hidden=4, n_classes=2)
    with torch.no_grad():
        for conv in (h.conv1, h.conv2):
            conv.weight.copy_(torch.eye(4)[:, :, None])
            conv.bias.zero_()
    frame = torch.tensor([[[1.5, -2.0, 0.0, 0.25]]])
    pooled = h.pool(frame)
    assert torch.equal(pooled, torch.tensor([[1.5, 0.0, 0.0, 0.25]]))


def test_empty_mask():
    with pytest.raises(ModelError):
        head()(torch.randn(1, 3, 8), torch.zeros(1, 3, dtype=torch.bool))


def test_predict_cases():
    assert predict([0.1, 0.9, 0.3]) == 1
    assert predict([0.5, 0.5]) == 0
    assert predict(torch.tensor([[0.0, 1.0], [2.0, 1.0]])).tolist() == [1, 0]
    with pytest.raises(ModelError):
        predict([0.1, float("nan")])
    with pytest.raises(ModelError):
        predict([float("inf"), 0.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.floats(-1e3, 1e3))
def test_predict_shift_invariant(logits, c):
    arr = np.array(logits)
    # ties may be created or broken by rounding; compare only when the max is unique after shifting
    shifted = arr + c
    if np.sum(shifted == shifted.max()) == 1 and np.sum(arr == arr.max()) == 1:
        assert predict(shifted) == predict(arr)
