"""
Synthetic source/target classification tasks with a controllable shift.

Every sequence is ``[CLS]`` followed by filler tokens with one planted motif.
In the ``token-motif`` family the motif's identity carries the label; in the
``positional-motif`` family one shared motif set is used and the segment it
lands in carries the label. The target domain is the source domain with a
fraction of motif tokens swapped for tokens the source never uses.

Vocabulary layout: 0 is padding, 1 is [CLS], then (shuffled per seed) the
source motif tokens, an equally sized replacement pool, and filler tokens.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from inflect.errors import InvalidInputError
from inflect.model.architectures.encoder import CLS_ID
from inflect.model.dataset import TokenSet

logger = logging.getLogger(__name__)

TOKEN_MOTIF = "token-motif"
POSITIONAL_MOTIF = "positional-motif"
FAMILIES = (TOKEN_MOTIF, POSITIONAL_MOTIF)
MIN_FILLER_TOKENS = 4


@dataclass(frozen=True)
class TaskSpec:
    vocab_size: int = 64
    seq_len: int = 32
    num_classes: int = 2
    family: str = TOKEN_MOTIF
    motif_len: int = 3
    motifs_per_class: int = 2
    substitution_rate: float = 0.5
    label_correlation: float = 0.9
    source_size: int = 4096
    target_size: int = 2048
    val_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown task family '{self.family}', expected one of {FAMILIES}")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.motif_len < 1 or self.motifs_per_class < 1:
            raise InvalidInputError("motif_len and motifs_per_class must be >= 1")
        for name in ("substitution_rate", "label_correlation"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
        if min(self.source_size, self.target_size, self.val_size) < self.num_classes:
            raise InvalidInputError("every split needs at least one sample per class")
        if self.motif_len > self.slot_len:
            raise InvalidInputError(
                f"motif of length {self.motif_len} does not fit a {self.family} slot of {self.slot_len} tokens "
                f"(seq_len={self.seq_len})")
        if self.filler_size < MIN_FILLER_TOKENS:
            raise InvalidInputError(
                f"vocab_size={self.vocab_size} leaves {self.filler_size} filler tokens after "
                f"{2 * self.motif_pool_size} motif tokens; need at least {MIN_FILLER_TOKENS}")

    @property
    def content_len(self) -> int:
        return self.seq_len - 1

    @property
    def slot_len(self) -> int:
        """Positions a motif may occupy: the whole content, or one class segment."""
        if self.family == POSITIONAL_MOTIF:
            return self.content_len // self.num_classes
        return self.content_len

    @property
    def motif_classes(self) -> int:
        return 1 if self.family == POSITIONAL_MOTIF else self.num_classes

    @property
    def motif_pool_size(self) -> int:
        return self.motif_classes * self.motifs_per_class * self.motif_len

    @property
    def filler_size(self) -> int:
        return self.vocab_size - 2 - 2 * self.motif_pool_size

    @property
    def bayes_accuracy(self) -> float:
        """Mislabelled samples carry a motif of a uniformly chosen other class."""
        return max(self.label_correlation, (1.0 - self.label_correlation) / (self.num_classes - 1))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TransferTask:
    spec: TaskSpec
    source_train: TokenSet
    source_val: TokenSet
    target_train: TokenSet
    target_val: TokenSet
    source_motifs: np.ndarray
    target_motifs: np.ndarray
    filler: np.ndarray

    def summary(self) -> Dict[str, object]:
        return {
            "spec": self.spec.to_dict(),
            "sizes": {name: len(getattr(self, name)) for name in
                      ("source_train", "source_val", "target_train", "target_val")},
            "substituted_tokens": int((self.source_motifs != self.target_motifs).sum()),
        }


def _substitute(source_motifs: np.ndarray, replacements: np.ndarray, rate: float,
                rng: np.random.Generator) -> np.ndarray:
    flat = source_motifs.reshape(-1).copy()
    count = int(round(rate * flat.size))
    positions = np.sort(rng.choice(flat.size, size=count, replace=False))
    flat[positions] = replacements[:count]
    return flat.reshape(source_motifs.shape)


def _sample(spec: TaskSpec, motifs: np.ndarray, filler: np.ndarray, size: int,
            rng: np.random.Generator) -> TokenSet:
    """``size`` sequences with exactly balanced labels (up to one sample per class)."""
    labels = rng.permutation(np.arange(size) % spec.num_classes)
    tokens = np.empty((size, spec.seq_len), dtype=np.int64)
    tokens[:, 0] = CLS_ID
    tokens[:, 1:] = filler[rng.integers(0, filler.size, size=(size, spec.content_len))]

    keep = rng.random(size) < spec.label_correlation
    for index, label in enumerate(labels):
        planted = label
        if not keep[index]:
            others = [c for c in range(spec.num_classes) if c != label]
            planted = others[rng.integers(len(others))]
        if spec.family == TOKEN_MOTIF:
            motif = motifs[planted, rng.integers(spec.motifs_per_class)]
            start = rng.integers(0, spec.content_len - spec.motif_len + 1)
        else:
            motif = motifs[0, rng.integers(spec.motifs_per_class)]
            start = planted * spec.slot_len + rng.integers(0, spec.slot_len - spec.motif_len + 1)
        tokens[index, 1 + start:1 + start + spec.motif_len] = motif
    return TokenSet(tokens, labels)


def generate_task(spec: TaskSpec) -> TransferTask:
    """
    Build source and target train/val splits for ``spec``.

    Source and target share vocabulary, filler distribution and label space;
    they differ only in ``round(substitution_rate * motif tokens)`` motif
    tokens. Deterministic in ``spec.seed``.
    """
    layout_rng, source_train_rng, source_val_rng, target_train_rng, target_val_rng = [
        np.random.default_rng(child) for child in np.random.SeedSequence(spec.seed).spawn(5)]

    content_tokens = layout_rng.permutation(np.arange(2, spec.vocab_size))
    pool = spec.motif_pool_size
    source_motifs = content_tokens[:pool].reshape(spec.motif_classes, spec.motifs_per_class, spec.motif_len)
    replacements = content_tokens[pool:2 * pool]
    filler = np.sort(content_tokens[2 * pool:])
    target_motifs = _substitute(source_motifs, replacements, spec.substitution_rate, layout_rng)

    task = TransferTask(
        spec=spec,
        source_train=_sample(spec, source_motifs, filler, spec.source_size, source_train_rng),
        source_val=_sample(spec, source_motifs, filler, spec.val_size, source_val_rng),
        target_train=_sample(spec, target_motifs, filler, spec.target_size, target_train_rng),
        target_val=_sample(spec, target_motifs, filler, spec.val_size, target_val_rng),
        source_motifs=source_motifs,
        target_motifs=target_motifs,
        filler=filler,
    )
    logger.info(f"Generated {spec.family} task: {task.summary()['sizes']}, "
                f"{task.summary()['substituted_tokens']} substituted motif tokens")
    return task


class MotifOracle:
    """Reads the label off the planted motif; predicts class 0 when no known motif occurs."""

    def __init__(self, spec: TaskSpec, motifs: np.ndarray):
        self.spec = spec
        self.motifs = np.asarray(motifs)

    def _match_starts(self, windows: np.ndarray, motif: np.ndarray) -> np.ndarray:
        return (windows == motif).all(axis=-1)

    def predict(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens)
        content = tokens[:, 1:]
        windows = sliding_window_view(content, self.spec.motif_len, axis=1)
        predictions = np.zeros(tokens.shape[0], dtype=np.int64)
        found = np.zeros(tokens.shape[0], dtype=bool)

        if self.spec.family == TOKEN_MOTIF:
            for label in range(self.spec.num_classes):
                for motif in self.motifs[label]:
                    hit = self._match_starts(windows, motif).any(axis=1) & ~found
                    predictions[hit] = label
                    found |= hit
        else:
            for motif in self.motifs[0]:
                matches = self._match_starts(windows, motif)
                hit = matches.any(axis=1) & ~found
                starts = matches.argmax(axis=1)
                predictions[hit] = np.minimum(starts[hit] // self.spec.slot_len, self.spec.num_classes - 1)
                found |= hit
        return predictions

    def accuracy(self, token_set: TokenSet) -> float:
        return float((self.predict(token_set.tokens.numpy()) == token_set.labels.numpy()).mean())

