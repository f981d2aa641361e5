import numpy as np
import pytest
import torch

from inflect.errors import InvalidInputError
from inflect.harness.tasks import POSITIONAL_MOTIF, TOKEN_MOTIF, MotifOracle, TaskSpec, generate_task
from inflect.model.architectures.encoder import CLS_ID, PAD_ID

SMALL = dict(source_size=512, target_size=256, val_size=256)


def test_labels_are_balanced():
    task = generate_task(TaskSpec(**SMALL))
    for split in (task.source_train, task.source_val, task.target_train, task.target_val):
        assert np.all(np.abs(split.class_fractions(2) - 0.5) <= 0.02)


def test_generation_is_deterministic():
    first = generate_task(TaskSpec(seed=3, **SMALL))
    second = generate_task(TaskSpec(seed=3, **SMALL))
    assert torch.equal(first.source_train.tokens, second.source_train.tokens)
    assert torch.equal(first.target_val.labels, second.target_val.labels)
    assert np.array_equal(first.target_motifs, second.target_motifs)
    other = generate_task(TaskSpec(seed=4, **SMALL))
    assert not torch.equal(first.source_train.tokens, other.source_train.tokens)


def test_sequences_start_with_cls_and_carry_no_padding():
    task = generate_task(TaskSpec(**SMALL))
    tokens = task.source_train.tokens
    assert torch.all(tokens[:, 0] == CLS_ID)
    assert not torch.any(tokens[:, 1:] == CLS_ID)
    assert not torch.any(tokens == PAD_ID)
    assert int(tokens.max()) < 64


def test_zero_shift_keeps_the_motifs():
    task = generate_task(TaskSpec(substitution_rate=0.0, **SMALL))
    assert np.array_equal(task.target_motifs, task.source_motifs)
    assert task.summary()["substituted_tokens"] == 0


def test_full_shift_replaces_every_motif_token():
    task = generate_task(TaskSpec(substitution_rate=1.0, **SMALL))
    source = set(task.source_motifs.ravel().tolist())
    target = set(task.target_motifs.ravel().tolist())
    assert source.isdisjoint(target)
    assert target.isdisjoint(task.filler.tolist())
    assert len(target) == task.source_motifs.size

    source_oracle = MotifOracle(task.spec, task.source_motifs)
    # no source motif survives, so the oracle falls back to class 0 on a balanced split
    assert source_oracle.accuracy(task.target_val) == pytest.approx(0.5)
    assert MotifOracle(task.spec, task.target_motifs).accuracy(task.target_val) > 0.8


def test_half_shift_count():
    task = generate_task(TaskSpec(substitution_rate=0.5, **SMALL))
    assert task.summary()["substituted_tokens"] == round(0.5 * task.source_motifs.size)


@pytest.mark.parametrize("family", [TOKEN_MOTIF, POSITIONAL_MOTIF])
def test_perfectly_correlated_labels_are_readable(family):
    task = generate_task(TaskSpec(family=family, label_correlation=1.0, **SMALL))
    oracle = MotifOracle(task.spec, task.source_motifs)
    assert oracle.accuracy(task.source_train) == 1.0
    assert oracle.accuracy(task.source_val) == 1.0


def test_label_noise_matches_bayes_accuracy():
    spec = TaskSpec(label_correlation=0.9, source_size=4096, target_size=256, val_size=256)
    task = generate_task(spec)
    assert spec.bayes_accuracy == 0.9
    assert MotifOracle(spec, task.source_motifs).accuracy(task.source_train) == pytest.approx(0.9, abs=0.03)


def test_positional_family_shares_one_motif_set():
    task = generate_task(TaskSpec(family=POSITIONAL_MOTIF, **SMALL))
    assert task.source_motifs.shape == (1, 2, 3)


@pytest.mark.parametrize("overrides", [
    dict(vocab_size=16),
    dict(family=POSITIONAL_MOTIF, motif_len=20),
    dict(family="bag-of-words"),
    dict(substitution_rate=1.5),
    dict(num_classes=1),
    dict(val_size=1),
])
def test_infeasible_specs_are_rejected(overrides):
    with pytest.raises(InvalidInputError):
        TaskSpec(**overrides)
