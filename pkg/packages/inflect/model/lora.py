"""
Low-rank adapters on the attention projections.

Orientation follows ``nn.Linear``: a projection maps ``x`` to ``x @ W.T + b``
with ``W`` of shape [d_out, d_in]. An adapter adds
``multiplier * (dropout(x) @ A.T) @ B.T`` with ``A`` [r, d_in] and
``B`` [d_out, r], i.e. ``W_eff = W + multiplier * B @ A``.
The multiplier is ``alpha / rank``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from inflect.errors import ConflictError, InvalidInputError, StateError
from inflect.model.architectures.encoder import FROZEN_BACKBONE, MiniEncoder, set_strategy

logger = logging.getLogger(__name__)

TARGETS = ("query", "key", "value")
TARGET_ALIASES = {"Q": "query", "K": "key", "V": "value", "q": "query", "k": "key", "v": "value"}


def normalize_targets(targets: Iterable[str]) -> Tuple[str, ...]:
    resolved = []
    for target in targets:
        name = TARGET_ALIASES.get(target, target)
        if name not in TARGETS:
            raise InvalidInputError(f"unknown LoRA target '{target}', expected a subset of Q, K, V")
        if name not in resolved:
            resolved.append(name)
    return tuple(sorted(resolved, key=TARGETS.index))


@dataclass(frozen=True)
class LoraSpec:
    rank: int = 4
    alpha: float = 16.0
    dropout: float = 0.05
    targets: Tuple[str, ...] = TARGETS
    layers: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.rank < 1:
            raise InvalidInputError(f"LoRA rank must be >= 1, got {self.rank}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError(f"LoRA dropout must lie in [0, 1), got {self.dropout}")
        object.__setattr__(self, "targets", normalize_targets(self.targets))
        object.__setattr__(self, "layers", tuple(sorted(set(int(l) for l in self.layers))))

    @property
    def multiplier(self) -> float:
        return self.alpha / self.rank

    def with_layers(self, layers: Iterable[int]) -> "LoraSpec":
        return LoraSpec(self.rank, self.alpha, self.dropout, self.targets, tuple(layers))

    def to_dict(self) -> dict:
        record = asdict(self)
        record["targets"] = list(self.targets)
        record["layers"] = list(self.layers)
        record["multiplier"] = self.multiplier
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "LoraSpec":
        return cls(rank=int(record["rank"]), alpha=float(record["alpha"]), dropout=float(record["dropout"]),
                   targets=tuple(record["targets"]), layers=tuple(record.get("layers", ())))


def adapted_projection(x: torch.Tensor,
                       weight: torch.Tensor,
                       bias: Optional[torch.Tensor],
                       lora_A: torch.Tensor,
                       lora_B: torch.Tensor,
                       multiplier: float,
                       dropout_p: float = 0.0,
                       training: bool = False) -> torch.Tensor:
    """``x @ W.T + b + multiplier * (dropout(x) @ A.T) @ B.T``."""
    d_out, d_in = weight.shape
    rank = lora_A.shape[0]
    if x.shape[-1] != d_in:
        raise InvalidInputError(f"input feature size {x.shape[-1]} does not match weight d_in={d_in}")
    if lora_A.shape != (rank, d_in) or lora_B.shape != (d_out, rank):
        raise InvalidInputError(
            f"adapter shapes A{tuple(lora_A.shape)}, B{tuple(lora_B.shape)} do not fit weight {tuple(weight.shape)}")
    base = F.linear(x, weight, bias)
    update = F.linear(F.linear(F.dropout(x, dropout_p, training), lora_A), lora_B)
    return base + multiplier * update


class LoraLinear(nn.Module):
    """A linear projection carrying its base weight plus trainable factors A and B.

    Parameter names match ``nn.Linear`` (``weight``, ``bias``) so that base
    weights keep their state-dict keys once adapters are merged away.
    """

    def __init__(self, base: nn.Linear, rank: int, multiplier: float, dropout_p: float,
                 owner: Tuple[int, str], generator: torch.Generator):
        super().__init__()
        self.in_features = base.in_features
        self.out_features = base.out_features
        self.rank = rank
        self.multiplier = multiplier
        self.dropout_p = dropout_p
        self.owner = owner

        self.weight = nn.Parameter(base.weight.detach().clone(), requires_grad=False)
        self.bias = None if base.bias is None else nn.Parameter(base.bias.detach().clone(), requires_grad=False)

        bound = 1.0 / math.sqrt(self.in_features)
        init = torch.rand(rank, self.in_features, generator=generator, dtype=base.weight.dtype)
        self.lora_A = nn.Parameter(init * (2 * bound) - bound)
        self.lora_B = nn.Parameter(torch.zeros(self.out_features, rank, dtype=base.weight.dtype))

    def forward(self, x):
        return adapted_projection(x, self.weight, self.bias, self.lora_A, self.lora_B,
                                  self.multiplier, self.dropout_p, self.training)

    def merged_weight(self) -> torch.Tensor:
        return self.weight.detach() + self.multiplier * (self.lora_B.detach() @ self.lora_A.detach())

    def extra_repr(self):
        return (f"in_features={self.in_features}, out_features={self.out_features}, "
                f"rank={self.rank}, multiplier={self.multiplier}, dropout={self.dropout_p}")


def mounted_adapters(model: MiniEncoder) -> Dict[Tuple[int, str], LoraLinear]:
    adapters = {}
    for layer, block in enumerate(model.blocks):
        for target in TARGETS:
            module = getattr(block.attention, target)
            if isinstance(module, LoraLinear):
                adapters[(layer, target)] = module
    return adapters


def mount(model: MiniEncoder, spec: LoraSpec, seed: int) -> MiniEncoder:
    """
    Freeze the backbone and attach adapters on ``spec.targets`` of ``spec.layers``.

    All checks run before anything is modified. A is drawn from one seeded
    generator in (layer, target) order; B starts at zero, so the adapted model
    computes exactly what the base model computed.
    """
    bad_layers = [layer for layer in spec.layers if not 0 <= layer < model.num_layers]
    if bad_layers:
        raise InvalidInputError(f"LoRA layers {bad_layers} outside [0, {model.num_layers})")
    existing = mounted_adapters(model)
    clashes = [(layer, target) for layer in spec.layers for target in spec.targets if (layer, target) in existing]
    if clashes:
        raise ConflictError(f"adapters already mounted on {clashes}")

    generator = torch.Generator().manual_seed(int(seed))
    for layer in spec.layers:
        attention = model.blocks[layer].attention
        for target in spec.targets:
            adapter = LoraLinear(getattr(attention, target), spec.rank, spec.multiplier, spec.dropout,
                                 owner=(layer, target), generator=generator)
            setattr(attention, target, adapter)

    model.lora_spec = spec if not existing else LoraSpec(
        spec.rank, spec.alpha, spec.dropout, spec.targets,
        tuple(sorted(set(spec.layers) | {layer for layer, _ in existing})))
    model.lora_seed = int(seed)
    set_strategy(model, FROZEN_BACKBONE)
    logger.info(f"Mounted {len(spec.layers) * len(spec.targets)} adapters (rank={spec.rank}, "
                f"multiplier={spec.multiplier}) on layers {list(spec.layers)}")
    return model


def merge(model: MiniEncoder) -> MiniEncoder:
    """
    Fold every adapter into its base weight and restore plain ``nn.Linear`` projections.

    Works in place and returns the model. Merging a model without adapters
    (including one already merged) is a state error.
    """
    adapters = mounted_adapters(model)
    if not adapters:
        raise StateError("no mounted adapters to merge (already merged or never mounted)")
    if model.training and any(adapter.dropout_p > 0 for adapter in adapters.values()):
        raise StateError("cannot merge while adapter dropout is active; call model.eval() first")

    for (layer, target), adapter in adapters.items():
        plain = nn.Linear(adapter.in_features, adapter.out_features, bias=adapter.bias is not None,
                          dtype=adapter.weight.dtype)
        with torch.no_grad():
            plain.weight.copy_(adapter.merged_weight())
            if adapter.bias is not None:
                plain.bias.copy_(adapter.bias.detach())
        plain.weight.requires_grad_(False)
        if plain.bias is not None:
            plain.bias.requires_grad_(False)
        setattr(model.blocks[layer].attention, target, plain)

    model.lora_spec = None
    model.lora_seed = None
    return model


def adapter_parameter_count(spec: LoraSpec, d_model: int) -> int:
    """Closed form: layers x targets x 2 x rank x d_model (square projections)."""
    return len(spec.layers) * len(spec.targets) * 2 * spec.rank * d_model
