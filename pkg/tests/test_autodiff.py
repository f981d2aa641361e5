import math

import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from conftest import random_tokens
from inflect.errors import InvalidInputError, NumericError, StateError
from inflect.model.architectures.encoder import MiniEncoder, ModelConfig, SelfAttention
from inflect.model.autodiff import (DTYPE, ComputeGraph, finite_diff_check, saturation_gradient_ratio,
                                    softmax_cross_entropy)


def _ce(logits, label):
    return softmax_cross_entropy(torch.tensor([logits], dtype=DTYPE), torch.tensor([label]))


def test_cross_entropy_symmetric_logits():
    loss, dL_dz = _ce([0.0, 0.0], 0)
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)
    assert dL_dz[0].tolist() == pytest.approx([-0.5, 0.5], abs=1e-15)


def test_cross_entropy_hand_evaluated_softmax():
    _, dL_dz = _ce([math.log(3), 0.0], 1)
    assert dL_dz[0].tolist() == pytest.approx([0.75, -0.75], abs=1e-12)


def test_cross_entropy_overconfident_wrong_label():
    _, dL_dz = _ce([10.0, 0.0], 1)
    assert dL_dz[0].tolist() == pytest.approx([0.99995, -0.99995], abs=1e-4)


def test_cross_entropy_residual_matches_probabilities_minus_onehot():
    generator = torch.Generator().manual_seed(7)
    for _ in range(1000):
        logits = torch.randn(4, 3, generator=generator, dtype=DTYPE) * 5
        labels = torch.randint(0, 3, (4,), generator=generator)
        _, dL_dz = softmax_cross_entropy(logits, labels)
        expected = torch.softmax(logits, dim=-1) - nn.functional.one_hot(labels, 3).to(DTYPE)
        assert torch.allclose(dL_dz, expected, rtol=0, atol=1e-15)


def test_cross_entropy_backward_is_residual_over_batch():
    generator = torch.Generator().manual_seed(3)
    logits = torch.randn(5, 4, generator=generator, dtype=DTYPE).requires_grad_(True)
    labels = torch.tensor([0, 3, 1, 1, 2])
    loss, dL_dz = softmax_cross_entropy(logits, labels)
    loss.backward()
    assert torch.allclose(logits.grad, dL_dz / 5, rtol=0, atol=1e-16)


def test_cross_entropy_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        softmax_cross_entropy(torch.zeros(0, 2, dtype=DTYPE), torch.zeros(0, dtype=torch.long))
    with pytest.raises(NumericError):
        softmax_cross_entropy(torch.tensor([[float("nan"), 0.0]], dtype=DTYPE), torch.tensor([0]))
    with pytest.raises(InvalidInputError):
        softmax_cross_entropy(torch.zeros(1, 2, dtype=DTYPE), torch.tensor([2]))


def test_graph_square_gradient():
    graph = ComputeGraph().begin()
    x = graph.tap("x", torch.tensor(3.0, dtype=DTYPE, requires_grad=True))
    graph.backward(x ** 2)
    assert graph.tap_grad("x").item() == 6.0


def test_graph_backward_before_forward():
    with pytest.raises(StateError):
        ComputeGraph().backward(torch.tensor(1.0, dtype=DTYPE))


def test_graph_tap_grad_before_backward():
    graph = ComputeGraph().begin()
    graph.tap("h", torch.ones(2, dtype=DTYPE, requires_grad=True))
    with pytest.raises(StateError):
        graph.tap_grad("h")


def test_graph_tap_on_constant_still_gets_gradient():
    graph = ComputeGraph().begin()
    h = graph.tap("h", torch.tensor([1.0, -2.0], dtype=DTYPE))
    graph.backward((h ** 2).sum())
    assert graph.tap_grad("h").tolist() == [2.0, -4.0]


def test_saturated_sigmoid_suppresses_upstream_gradient():
    graph = ComputeGraph().begin()
    x = torch.tensor(10.0, dtype=DTYPE, requires_grad=True)
    s = graph.tap("s", torch.sigmoid(x))
    graph.backward(3.0 * s)
    assert abs(x.grad.item()) <= 4.6e-5 * abs(graph.tap_grad("s").item())
    assert saturation_gradient_ratio(10.0) == pytest.approx(4 * 4.5396e-5, rel=1e-4)


def test_finite_differences_linear_layer():
    torch.manual_seed(0)
    layer = nn.Linear(4, 3).to(DTYPE)
    with torch.no_grad():
        layer.weight.uniform_(0.1, 1.0)
        layer.bias.uniform_(0.1, 1.0)
    x = torch.rand(5, 4, dtype=DTYPE) + 0.5

    error = finite_diff_check(lambda: (layer(x) ** 2).sum() / 2, list(layer.parameters()), eps=1e-5)
    assert error < 1e-8


def test_finite_differences_identity_graph_is_exact():
    x = torch.tensor([0.5, 1.25, -2.0], dtype=DTYPE, requires_grad=True)
    assert finite_diff_check(lambda: x.sum(), [x], eps=2 ** -10) == 0.0


# Every primitive loss carries a linear term so no gradient entry sits near zero.
TILT = 3.0
FD_SHAPES = [(2, 4), (3, 6)]
FD_SEEDS = range(8)


def _randn(generator, *shape, scale=1.0, shift=0.0):
    return (scale * torch.randn(*shape, generator=generator, dtype=DTYPE) + shift).requires_grad_(True)


def _tilted(core, params):
    return lambda: core() + TILT * sum(p.sum() for p in params)


def _softmax_case(generator, rows, width):
    x, w = _randn(generator, rows, width, scale=1.5), torch.randn(rows, width, generator=generator, dtype=DTYPE)
    return _tilted(lambda: (w * torch.softmax(x, dim=-1)).sum(), [x]), [x]


def _layer_norm_case(generator, rows, width):
    x = _randn(generator, rows, width, scale=2.0, shift=0.5)
    weight, bias = _randn(generator, width, scale=0.3, shift=1.0), _randn(generator, width)
    w = torch.randn(rows, width, generator=generator, dtype=DTYPE)
    params = [x, weight, bias]
    return _tilted(lambda: (w * F.layer_norm(x, (width,), weight, bias, eps=1e-12)).sum(), params), params


def _gelu_case(generator, rows, width):
    x, w = _randn(generator, rows, width, scale=2.0), torch.randn(rows, width, generator=generator, dtype=DTYPE)
    return _tilted(lambda: (w * F.gelu(x)).sum(), [x]), [x]


def _embedding_case(generator, rows, width):
    table = _randn(generator, width + 2, 3)
    ids = torch.randint(0, width + 2, (rows, width), generator=generator)
    w = torch.randn(rows, width, 3, generator=generator, dtype=DTYPE)
    return _tilted(lambda: (w * F.embedding(ids, table)).sum(), [table]), [table]


def _attention_case(generator, rows, width):
    cfg = ModelConfig(num_layers=1, num_heads=2, d_model=4, d_ff=8, vocab_size=8, max_seq_len=8, dropout=0.0)
    attention = SelfAttention(cfg).to(DTYPE)
    with torch.no_grad():
        for param in attention.parameters():
            param.copy_(0.5 * torch.randn(param.shape, generator=generator, dtype=DTYPE))
    x = _randn(generator, rows, width, 4)
    key_mask = torch.ones(rows, width, dtype=torch.bool)
    key_mask[0, -1] = False
    w = torch.randn(rows, width, 4, generator=generator, dtype=DTYPE)
    params = [x, *attention.parameters()]
    return _tilted(lambda: (w * attention(x, key_mask)[0]).sum(), params), params


def _residual_case(generator, rows, width):
    x = _randn(generator, rows, width)
    weight, bias = _randn(generator, width, width, scale=0.5), _randn(generator, width)
    w = torch.randn(rows, width, generator=generator, dtype=DTYPE)
    params = [x, weight, bias]
    return _tilted(lambda: (w * (x + F.gelu(F.linear(x, weight, bias)))).sum(), params), params


def _cross_entropy_case(generator, rows, width):
    logits = _randn(generator, rows, width, scale=2.0)
    labels = torch.randint(0, width, (rows,), generator=generator)
    return _tilted(lambda: softmax_cross_entropy(logits, labels)[0], [logits]), [logits]


PRIMITIVES = {
    "softmax": _softmax_case,
    "layer_norm": _layer_norm_case,
    "gelu": _gelu_case,
    "embedding": _embedding_case,
    "attention": _attention_case,
    "residual": _residual_case,
    "cross_entropy": _cross_entropy_case,
}


@pytest.mark.parametrize("seed", FD_SEEDS)
@pytest.mark.parametrize("shape", FD_SHAPES, ids=lambda shape: f"{shape[0]}x{shape[1]}")
@pytest.mark.parametrize("primitive", sorted(PRIMITIVES))
def test_finite_differences_primitives(primitive, shape, seed):
    generator = torch.Generator().manual_seed(seed)
    loss_fn, params = PRIMITIVES[primitive](generator, *shape)
    assert finite_diff_check(loss_fn, params, eps=1e-5) < 1e-5


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_finite_differences_mini_transformer(seed):
    cfg = ModelConfig(num_layers=2, num_heads=2, d_model=8, d_ff=16, vocab_size=16, max_seq_len=6,
                      dropout=0.0, init_std=0.3)
    model = MiniEncoder(cfg, seed=seed).eval()
    tokens = random_tokens(cfg, 3, seed=seed)
    labels = torch.tensor([0, 1, 1])

    def loss_fn():
        return softmax_cross_entropy(model(tokens).logits, labels)[0]

    # softmax ignores a per-query shift, so the key bias gradient is identically zero
    key_biases = [block.attention.key.bias for block in model.blocks]
    for grad in torch.autograd.grad(loss_fn(), key_biases):
        assert grad.abs().max().item() < 1e-12

    params = [p for name, p in model.named_parameters() if not name.endswith("attention.key.bias")]
    assert any("embedding" in name for name, _ in model.named_parameters())
    error = finite_diff_check(loss_fn, params, eps=1e-5, module=model, floor=1e-5)
    assert error < 1e-5


def test_finite_differences_refuse_active_dropout():
    cfg = ModelConfig(num_layers=1, num_heads=1, d_model=4, d_ff=8, vocab_size=8, max_seq_len=4, dropout=0.1)
    model = MiniEncoder(cfg).train()
    tokens = random_tokens(cfg, 2)
    with pytest.raises(StateError):
        finite_diff_check(lambda: model(tokens).logits.sum(), list(model.parameters()), module=model)


def test_identical_seed_gives_identical_loss_trajectory(tiny_config):
    def trajectory():
        model = MiniEncoder(tiny_config, seed=5).train()
        optimizer = torch.optim.AdamW(model.parameters(), lr=1e-2)
        tokens = random_tokens(tiny_config, 6, seed=2)
        labels = torch.tensor([0, 1, 0, 1, 0, 1])
        losses = []
        for _ in range(5):
            optimizer.zero_grad()
            loss, _ = softmax_cross_entropy(model(tokens).logits, labels)
            model.graph.backward(loss)
            optimizer.step()
            losses.append(loss.item())
        return losses

    assert trajectory() == trajectory()
