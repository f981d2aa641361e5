import math

import numpy as np
import pytest
import torch

from conftest import random_tokens
from inflect.diagnostics.probes import (LINEAR, MLP, PROBE_COLUMNS, ProbeConfig, probe_sweep, sweep_representations,
                                        train_probe)
from inflect.errors import InvalidInputError
from inflect.model.autodiff import DTYPE
from inflect.model.dataset import TokenSet


def _blobs(n, seed=0):
    generator = torch.Generator().manual_seed(seed)
    labels = torch.arange(n) % 2
    centres = torch.tensor([[-4.0, -4.0], [4.0, 4.0]], dtype=DTYPE)
    return centres[labels] + 0.5 * torch.randn(n, 2, generator=generator, dtype=DTYPE), labels


def _xor(n, seed=0):
    generator = torch.Generator().manual_seed(seed)
    corners = torch.tensor([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]], dtype=DTYPE)
    which = torch.arange(n) % 4
    labels = (which >= 2).long()
    return corners[which] + 0.2 * torch.randn(n, 2, generator=generator, dtype=DTYPE), labels


FAST = ProbeConfig(epochs=60, batch_size=32, learning_rate=0.05, seed=0)


def test_separable_blobs():
    reps, labels = _blobs(300)
    _, accuracy = train_probe(reps, labels, FAST)
    assert accuracy == 1.0


def test_shuffled_labels_sit_at_chance():
    generator = torch.Generator().manual_seed(1)
    reps = torch.randn(3000, 8, generator=generator, dtype=DTYPE)
    labels = torch.randperm(3000, generator=generator) % 2
    _, accuracy = train_probe(reps, labels, ProbeConfig(seed=1))
    sigma = math.sqrt(0.25 / 1000)
    assert abs(accuracy - 0.5) <= 3 * sigma


def test_xor_needs_the_mlp():
    reps, labels = _xor(800)
    _, linear = train_probe(reps, labels, FAST)
    _, mlp = train_probe(reps, labels, ProbeConfig(kind=MLP, hidden_dim=16, epochs=60, batch_size=32,
                                                   learning_rate=0.05, seed=0))
    assert linear < 0.6
    assert mlp > 0.9


def test_label_feature_makes_probe_perfect():
    generator = torch.Generator().manual_seed(2)
    labels = torch.arange(400) % 2
    noise = torch.randn(400, 6, generator=generator, dtype=DTYPE)
    reps = torch.cat([noise, 5.0 * labels[:, None].to(DTYPE)], dim=1)
    _, accuracy = train_probe(reps, labels, FAST)
    assert accuracy == 1.0


def test_probe_is_deterministic():
    reps, labels = _xor(200, seed=3)
    config = ProbeConfig(kind=MLP, hidden_dim=8, epochs=5, seed=4)
    first, accuracy_first = train_probe(reps, labels, config)
    second, accuracy_second = train_probe(reps, labels, config)
    assert accuracy_first == accuracy_second
    for a, b in zip(first.parameters(), second.parameters()):
        assert torch.equal(a, b)


def test_single_class_is_rejected():
    with pytest.raises(InvalidInputError):
        train_probe(torch.zeros(10, 2, dtype=DTYPE), torch.zeros(10, dtype=torch.long))


def test_identical_layers_give_identical_accuracies():
    reps, labels = _blobs(120, seed=5)
    val_reps, val_labels = _blobs(60, seed=6)
    report = sweep_representations([reps] * 3, labels, [val_reps] * 3, val_labels, ProbeConfig(epochs=3, seed=0))
    for kind in (LINEAR, MLP):
        accuracies = report.accuracies(kind)
        assert len(accuracies) == 3
        assert accuracies[0] == accuracies[1] == accuracies[2]


def test_probe_sweep_on_encoder(tiny_model, tiny_config):
    labels = torch.arange(40) % 2
    train = TokenSet(random_tokens(tiny_config, 40, seed=1), labels)
    val = TokenSet(random_tokens(tiny_config, 40, seed=2), labels)
    report = probe_sweep(tiny_model, train, val, ProbeConfig(epochs=2, batch_size=16))

    frame = report.to_frame()
    assert list(frame.columns) == PROBE_COLUMNS
    assert len(frame) == 2 * tiny_config.num_layers
    assert frame["accuracy"].between(0.0, 1.0).all()
    assert report.to_dict()["val_size"] == 40
    assert 0 <= report.best_layer(LINEAR) < tiny_config.num_layers
    assert np.all(frame["seed"] == 0)
