"""
Layer-wise observables read off one forward/backward pass.

Entropy is in nats. Activation-gradient norms come from the graph taps and
therefore exist for frozen layers too; parameter-gradient norms are exactly
zero for layers with no trainable tensor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
import torch

from inflect.errors import InvalidInputError
from inflect.model.architectures.encoder import MiniEncoder
from inflect.model.autodiff import ComputeGraph, softmax_cross_entropy
from inflect.model.dataset import TokenSet

logger = logging.getLogger(__name__)

ENTROPY = "attention_entropy"
ACTIVATION_GRAD = "activation_grad_norm"
PARAM_GRAD = "param_grad_norm"
METRICS = (ENTROPY, ACTIVATION_GRAD, PARAM_GRAD)
METRICS_COLUMNS = ["step", "layer", "metric", "value"]

ROW_SUM_TOLERANCE = 1e-6


def row_entropy(attn: torch.Tensor) -> torch.Tensor:
    """-sum a ln a over the last axis with 0 ln 0 = 0."""
    safe = torch.where(attn > 0, attn, torch.ones_like(attn))
    return -(torch.where(attn > 0, attn * torch.log(safe), torch.zeros_like(attn))).sum(dim=-1)


def attention_entropy(attn: torch.Tensor, mask: Optional[torch.Tensor] = None) -> float:
    """
    Mean attention entropy of one layer.

    Args:
        attn: attention probabilities [batch, head, query, key]; any [..., key]
            shape is accepted when no mask is given.
        mask: optional key mask [batch, key], True for real tokens. Masked keys
            leave the support and masked query positions leave the average.
    """
    attn = attn.detach().to(torch.float64)
    if mask is None:
        rows = attn.reshape(-1, attn.shape[-1])
    else:
        if attn.dim() != 4 or mask.shape != (attn.shape[0], attn.shape[-1]):
            raise InvalidInputError(
                f"mask {tuple(mask.shape)} does not fit attention {tuple(attn.shape)}")
        mask = mask.to(torch.bool)
        support = attn * mask[:, None, None, :]
        query_valid = mask[:, None, :].expand(attn.shape[0], attn.shape[1], attn.shape[2])
        rows = support[query_valid]
    if rows.shape[0] == 0:
        raise InvalidInputError("no unmasked attention rows")

    deviation = (rows.sum(dim=-1) - 1.0).abs().max().item()
    if deviation > ROW_SUM_TOLERANCE:
        raise InvalidInputError(f"attention rows are not distributions over unmasked keys "
                                f"(max |sum - 1| = {deviation:.3g})")
    return row_entropy(rows).mean().item()


def _graph_of(source: Union[ComputeGraph, MiniEncoder]) -> ComputeGraph:
    return source.graph if isinstance(source, MiniEncoder) else source


def activation_grad_norm(source: Union[ComputeGraph, MiniEncoder], layer: int) -> float:
    """||dL/dh|| of block ``layer``'s output over the whole batch, flattened."""
    grad = _graph_of(source).tap_grad(f"block.{layer}")
    return torch.linalg.vector_norm(grad.reshape(-1)).item()


def param_grad_norm(model: MiniEncoder, layer: int) -> float:
    squares = [p.grad.detach().pow(2).sum() for p in model.block_parameters(layer).values() if p.grad is not None]
    if not squares:
        return 0.0
    return torch.sqrt(torch.stack(squares).sum()).item()


@dataclass
class LayerDiagnostics:
    layer: int
    attention_entropy: List[float] = field(default_factory=list)
    activation_grad_norm: List[float] = field(default_factory=list)
    param_grad_norm: List[float] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        values = getattr(self, metric)
        return float(np.mean(values)) if values else float("nan")


class DiagnosticsLog:
    """Per-step, per-layer records of the three gradient/entropy metrics."""

    def __init__(self, num_layers: int):
        self.num_layers = num_layers
        self.steps: List[int] = []
        self.layers = [LayerDiagnostics(layer) for layer in range(num_layers)]

    def __len__(self):
        return len(self.steps)

    def record(self, step: int, entropy: Iterable[float], activation: Iterable[float], param: Iterable[float]):
        entropy, activation, param = list(entropy), list(activation), list(param)
        if not len(entropy) == len(activation) == len(param) == self.num_layers:
            raise InvalidInputError(f"step {step} must carry exactly {self.num_layers} values per metric")
        self.steps.append(int(step))
        for layer, values in enumerate(self.layers):
            values.attention_entropy.append(float(entropy[layer]))
            values.activation_grad_norm.append(float(activation[layer]))
            values.param_grad_norm.append(float(param[layer]))

    def series(self, metric: str) -> np.ndarray:
        """[steps, layers] array of ``metric``."""
        if metric not in METRICS:
            raise InvalidInputError(f"unknown metric '{metric}', expected one of {METRICS}")
        return np.array([getattr(values, metric) for values in self.layers], dtype=np.float64).T.reshape(
            len(self.steps), self.num_layers)

    def means(self, metric: str) -> np.ndarray:
        """Arithmetic mean over steps, one value per layer."""
        if not self.steps:
            raise InvalidInputError("no steps recorded")
        return self.series(metric).mean(axis=0)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for index, step in enumerate(self.steps):
            for values in self.layers:
                for metric in METRICS:
                    rows.append((step, values.layer, metric, getattr(values, metric)[index]))
        return pd.DataFrame(rows, columns=METRICS_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "DiagnosticsLog":
        if list(frame.columns) != METRICS_COLUMNS:
            raise InvalidInputError(f"metrics table must have columns {METRICS_COLUMNS}, got {list(frame.columns)}")
        unknown = set(frame["metric"]) - set(METRICS)
        if unknown:
            raise InvalidInputError(f"unknown metrics {sorted(unknown)}")
        num_layers = int(frame["layer"].max()) + 1
        log = cls(num_layers)
        for step, rows in frame.groupby("step", sort=True):
            wide = rows.pivot(index="layer", columns="metric", values="value").reindex(range(num_layers))
            if wide.isna().to_numpy().any() or set(wide.columns) != set(METRICS):
                raise InvalidInputError(f"step {step} is missing metric values")
            log.record(int(step), wide[ENTROPY], wide[ACTIVATION_GRAD], wide[PARAM_GRAD])
        return log

    def summary(self) -> Dict[str, object]:
        entropy = self.means(ENTROPY)
        return {
            "steps": len(self.steps),
            "mean": {metric: self.means(metric).tolist() for metric in METRICS},
            "overall_mean": {metric: float(self.means(metric).mean()) for metric in METRICS},
            "entropy_min": float(entropy.min()),
            "entropy_argmin": int(np.argmin(entropy)),
        }


def collect_cls(model: MiniEncoder, token_set: TokenSet, batch_size: int = 256) -> List[torch.Tensor]:
    """[CLS] representation of every layer for every row, in eval mode and without gradients."""
    was_training = model.training
    model.eval()
    per_layer: List[List[torch.Tensor]] = [[] for _ in range(model.num_layers)]
    with torch.no_grad():
        for start in range(0, len(token_set), batch_size):
            trace = model(token_set.tokens[start:start + batch_size])
            for layer, cls in enumerate(trace.cls):
                per_layer[layer].append(cls)
    model.train(was_training)
    return [torch.cat(chunks) for chunks in per_layer]


@dataclass
class ModelProfile:
    confidence: float
    accuracy: float
    attention_entropy: List[float]
    activation_grad_norm: List[float]

    def to_dict(self) -> dict:
        entropy = np.asarray(self.attention_entropy)
        return {
            "confidence": self.confidence,
            "accuracy": self.accuracy,
            "attention_entropy": list(self.attention_entropy),
            "activation_grad_norm": list(self.activation_grad_norm),
            "entropy_min": float(entropy.min()),
            "entropy_argmin": int(np.argmin(entropy)),
        }


def profile_model(model: MiniEncoder, token_set: TokenSet, batch_size: int = 256) -> ModelProfile:
    """
    Eval-mode pass over ``token_set``: mean max-softmax, accuracy, per-layer
    entropy and per-layer activation-gradient norm, each averaged over batches.
    Parameter gradients produced along the way are discarded.
    """
    was_training = model.training
    model.eval()
    model.zero_grad(set_to_none=True)
    confidences, correct = [], 0
    entropy, activation = [], []
    for start in range(0, len(token_set), batch_size):
        tokens = token_set.tokens[start:start + batch_size]
        labels = token_set.labels[start:start + batch_size]
        trace = model(tokens)
        loss, _ = softmax_cross_entropy(trace.logits, labels)
        model.graph.backward(loss)
        probs = torch.softmax(trace.logits.detach(), dim=-1)
        confidences.append(probs.max(dim=-1).values)
        correct += int((probs.argmax(dim=-1) == labels).sum())
        entropy.append([attention_entropy(attn, trace.key_mask) for attn in trace.attentions])
        activation.append([activation_grad_norm(model.graph, layer) for layer in range(model.num_layers)])
        model.zero_grad(set_to_none=True)
    model.train(was_training)
    return ModelProfile(
        confidence=torch.cat(confidences).mean().item(),
        accuracy=correct / len(token_set),
        attention_entropy=np.mean(entropy, axis=0).tolist(),
        activation_grad_norm=np.mean(activation, axis=0).tolist(),
    )
