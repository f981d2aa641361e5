import math

import numpy as np
import pytest
import torch

from conftest import random_tokens
from inflect.diagnostics.metrics import (ACTIVATION_GRAD, ENTROPY, METRICS_COLUMNS, PARAM_GRAD, DiagnosticsLog,
                                         activation_grad_norm, attention_entropy, collect_cls, param_grad_norm,
                                         profile_model)
from inflect.errors import InvalidInputError, StateError
from inflect.model.architectures.encoder import SHALLOW, set_strategy
from inflect.model.autodiff import DTYPE, ComputeGraph, softmax_cross_entropy
from inflect.model.dataset import TokenSet


def _rows(*rows):
    return torch.tensor(rows, dtype=DTYPE)


def test_uniform_entropy_is_log_support():
    for support in (2, 4, 7):
        assert attention_entropy(torch.full((3, support), 1.0 / support, dtype=DTYPE)) == pytest.approx(
            math.log(support), abs=1e-12)


def test_one_hot_entropy_is_zero():
    assert attention_entropy(_rows([0.0, 1.0, 0.0, 0.0])) == 0.0


def test_two_point_entropy():
    assert attention_entropy(_rows([0.5, 0.5, 0.0, 0.0])) == pytest.approx(math.log(2), abs=1e-12)


def test_rows_must_be_distributions():
    with pytest.raises(InvalidInputError):
        attention_entropy(_rows([0.5, 0.4, 0.0, 0.0]))


def test_masked_entropy_ignores_padding(tiny_model, tiny_config):
    tokens = random_tokens(tiny_config, 2)
    tokens[:, 4:] = 0
    trace = tiny_model(tokens)
    value = attention_entropy(trace.attentions[0], trace.key_mask)
    assert 0.0 < value <= math.log(4) + 1e-12
    with pytest.raises(InvalidInputError):
        attention_entropy(trace.attentions[0], trace.key_mask[:, :3])


def test_activation_grad_of_half_squared_norm():
    graph = ComputeGraph().begin()
    h = graph.tap("block.0", torch.randn(3, 4, dtype=DTYPE, requires_grad=True))
    graph.backward(0.5 * h.pow(2).sum())
    assert activation_grad_norm(graph, 0) == pytest.approx(torch.linalg.vector_norm(h.detach()).item(), rel=1e-15)


def test_activation_grad_of_detached_head_is_zero():
    graph = ComputeGraph().begin()
    graph.tap("block.0", torch.randn(3, 4, dtype=DTYPE, requires_grad=True))
    other = torch.randn(2, dtype=DTYPE, requires_grad=True)
    graph.backward(other.sum())
    assert activation_grad_norm(graph, 0) == 0.0


def test_activation_grad_of_missing_tap():
    graph = ComputeGraph().begin()
    graph.tap("block.0", torch.ones(2, dtype=DTYPE, requires_grad=True))
    graph.finish()
    with pytest.raises(StateError):
        activation_grad_norm(graph, 3)


def test_param_grad_of_single_square_weight(tiny_model):
    tiny_model.zero_grad(set_to_none=True)
    bias = tiny_model.blocks[0].attention_norm.bias
    (bias[0] - bias[0].detach() + 3.0).pow(2).backward()
    assert param_grad_norm(tiny_model, 0) == 6.0
    assert param_grad_norm(tiny_model, 1) == 0.0


def test_frozen_layer_has_zero_param_grad_but_activation_grad(tiny_model, tiny_config):
    set_strategy(tiny_model, SHALLOW, k=1)
    loss, _ = softmax_cross_entropy(tiny_model(random_tokens(tiny_config, 4)).logits, torch.tensor([0, 1, 1, 0]))
    tiny_model.graph.backward(loss)
    assert param_grad_norm(tiny_model, 0) == 0.0
    assert param_grad_norm(tiny_model, 1) > 0.0
    assert activation_grad_norm(tiny_model, 0) > 0.0


def test_diagnostics_log_requires_one_value_per_layer():
    log = DiagnosticsLog(3)
    with pytest.raises(InvalidInputError):
        log.record(1, [1.0, 2.0], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])


def test_diagnostics_log_means_and_frame():
    log = DiagnosticsLog(2)
    log.record(1, [1.0, 2.0], [0.5, 0.1], [0.0, 0.3])
    log.record(2, [3.0, 2.0], [1.5, 0.3], [0.0, 0.5])

    assert log.means(ENTROPY).tolist() == [2.0, 2.0]
    assert log.means(ACTIVATION_GRAD).tolist() == pytest.approx([1.0, 0.2])
    assert log.series(PARAM_GRAD).shape == (2, 2)

    frame = log.to_frame()
    assert list(frame.columns) == METRICS_COLUMNS
    assert len(frame) == 2 * 2 * 3
    restored = DiagnosticsLog.from_frame(frame)
    assert restored.steps == [1, 2]
    assert np.array_equal(restored.series(ACTIVATION_GRAD), log.series(ACTIVATION_GRAD))

    summary = log.summary()
    assert summary["steps"] == 2
    assert summary["entropy_argmin"] == 0


def test_collect_cls_shapes(tiny_model, tiny_config):
    token_set = TokenSet(random_tokens(tiny_config, 5), torch.tensor([0, 1, 0, 1, 0]))
    reps = collect_cls(tiny_model, token_set, batch_size=2)
    assert len(reps) == tiny_config.num_layers
    assert all(rep.shape == (5, tiny_config.d_model) for rep in reps)


def test_profile_model_leaves_no_gradients(tiny_model, tiny_config):
    token_set = TokenSet(random_tokens(tiny_config, 6), torch.tensor([0, 1, 0, 1, 0, 1]))
    profile = profile_model(tiny_model, token_set, batch_size=4)
    assert 0.5 <= profile.confidence <= 1.0
    assert len(profile.attention_entropy) == len(profile.activation_grad_norm) == tiny_config.num_layers
    assert all(p.grad is None for p in tiny_model.parameters())
    assert not tiny_model.training
