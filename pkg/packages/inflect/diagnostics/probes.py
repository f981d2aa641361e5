"""
Linear and two-layer MLP probes on frozen per-layer [CLS] representations.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from sklearn.model_selection import train_test_split
from torch.optim import AdamW
from tqdm import tqdm

from inflect.errors import InvalidInputError
from inflect.model.architectures.encoder import MiniEncoder
from inflect.model.autodiff import DTYPE, softmax_cross_entropy
from inflect.model.dataset import TokenSet
from inflect.diagnostics.metrics import collect_cls

logger = logging.getLogger(__name__)

LINEAR = "linear"
MLP = "mlp"
PROBE_KINDS = (LINEAR, MLP)
PROBE_COLUMNS = ["layer", "kind", "accuracy", "seed"]


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = LINEAR
    hidden_dim: Optional[int] = None
    dropout: float = 0.1
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 3e-3
    weight_decay: float = 1e-4
    seed: int = 0
    train_size: int = 1000
    val_size: int = 512
    val_fraction: float = 1 / 3

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise InvalidInputError(f"unknown probe kind '{self.kind}', expected one of {PROBE_KINDS}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("probe epochs and batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError(f"probe dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidInputError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")


class LinearProbe(nn.Module):
    def __init__(self, d_in: int, num_classes: int):
        super().__init__()
        self.classifier = nn.Linear(d_in, num_classes)

    def forward(self, x):
        return self.classifier(x)


class MLPProbe(nn.Module):
    def __init__(self, d_in: int, num_classes: int, hidden_dim: int, dropout: float):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(d_in, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, num_classes),
        )

    def forward(self, x):
        return self.layers(x)


def build_probe(config: ProbeConfig, d_in: int, num_classes: int) -> nn.Module:
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        if config.kind == LINEAR:
            probe = LinearProbe(d_in, num_classes)
        else:
            probe = MLPProbe(d_in, num_classes, config.hidden_dim or d_in, config.dropout)
    return probe.to(DTYPE)


def split_indices(labels: np.ndarray, config: ProbeConfig) -> Tuple[np.ndarray, np.ndarray]:
    indices = np.arange(labels.shape[0])
    train_idx, val_idx = train_test_split(indices, test_size=config.val_fraction, stratify=labels,
                                          random_state=config.seed)
    return np.sort(train_idx), np.sort(val_idx)


def _accuracy(probe: nn.Module, reps: torch.Tensor, labels: torch.Tensor) -> float:
    probe.eval()
    with torch.no_grad():
        predictions = probe(reps).argmax(dim=-1)
    return (predictions == labels).double().mean().item()


def train_probe(reps, labels, config: ProbeConfig = ProbeConfig(),
                val_reps=None, val_labels=None) -> Tuple[nn.Module, float]:
    """
    Fit one probe with AdamW at a constant learning rate, no early stopping.

    Without an explicit validation set, ``config.val_fraction`` of the rows are
    held out with a stratified split. Representations are detached, so nothing
    flows back into the model that produced them.
    """
    reps = torch.as_tensor(reps).detach().to(DTYPE)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if reps.dim() != 2 or labels.shape != (reps.shape[0],):
        raise InvalidInputError(f"need reps [n, d] and labels [n], got {tuple(reps.shape)} and {tuple(labels.shape)}")
    if torch.unique(labels).numel() < 2:
        raise InvalidInputError("probe labels contain a single class")
    num_classes = int(labels.max()) + 1

    if val_reps is None:
        train_idx, val_idx = split_indices(labels.numpy(), config)
        val_reps, val_labels = reps[val_idx], labels[val_idx]
        reps, labels = reps[train_idx], labels[train_idx]
    else:
        val_reps = torch.as_tensor(val_reps).detach().to(DTYPE)
        val_labels = torch.as_tensor(val_labels, dtype=torch.long)
        num_classes = max(num_classes, int(val_labels.max()) + 1)

    probe = build_probe(config, reps.shape[1], num_classes)
    optimizer = AdamW(probe.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    generator = torch.Generator().manual_seed(config.seed)

    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        for _ in range(config.epochs):
            probe.train()
            order = torch.randperm(reps.shape[0], generator=generator)
            for start in range(0, reps.shape[0], config.batch_size):
                batch = order[start:start + config.batch_size]
                loss, _ = softmax_cross_entropy(probe(reps[batch]), labels[batch])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

    return probe, _accuracy(probe, val_reps, val_labels)


@dataclass
class ProbeReport:
    seed: int
    train_size: int
    val_size: int
    rows: List[Tuple[int, str, float]] = field(default_factory=list)

    def accuracies(self, kind: str) -> List[float]:
        return [accuracy for _, row_kind, accuracy in sorted(self.rows) if row_kind == kind]

    def best_layer(self, kind: str) -> int:
        return int(np.argmax(self.accuracies(kind)))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([(layer, kind, accuracy, self.seed) for layer, kind, accuracy in self.rows],
                             columns=PROBE_COLUMNS)
        return frame.sort_values(["kind", "layer"], kind="stable").reset_index(drop=True)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_size": self.train_size,
            "val_size": self.val_size,
            "accuracy": {kind: self.accuracies(kind) for kind in sorted({row[1] for row in self.rows})},
        }


def sweep_representations(train_reps: Sequence[torch.Tensor], train_labels, val_reps: Sequence[torch.Tensor],
                          val_labels, config: ProbeConfig, kinds: Sequence[str] = PROBE_KINDS,
                          progress: bool = False) -> ProbeReport:
    """One probe per (layer, kind) over precomputed per-layer representations."""
    if len(train_reps) != len(val_reps):
        raise InvalidInputError(f"layer counts differ: {len(train_reps)} vs {len(val_reps)}")
    report = ProbeReport(seed=config.seed, train_size=len(train_labels), val_size=len(val_labels))
    jobs = [(layer, kind) for kind in kinds for layer in range(len(train_reps))]
    for layer, kind in tqdm(jobs, desc="probes", disable=not progress):
        _, accuracy = train_probe(train_reps[layer], train_labels, dataclasses.replace(config, kind=kind),
                                  val_reps=val_reps[layer], val_labels=val_labels)
        report.rows.append((layer, kind, accuracy))
    return report


def probe_sweep(model: MiniEncoder, train: TokenSet, val: TokenSet, config: ProbeConfig = ProbeConfig(),
                kinds: Sequence[str] = PROBE_KINDS, progress: bool = False) -> ProbeReport:
    train = train.head(config.train_size)
    val = val.head(config.val_size)
    train_reps = collect_cls(model, train)
    val_reps = collect_cls(model, val)
    report = sweep_representations(train_reps, train.labels, val_reps, val.labels, config, kinds, progress)
    for kind in kinds:
        logger.info(f"{kind} probe accuracy by layer: {np.round(report.accuracies(kind), 3).tolist()}")
    return report
