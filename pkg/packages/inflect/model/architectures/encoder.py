from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from inflect.errors import InvalidInputError
from inflect.model.autodiff import DTYPE, ComputeGraph

logger = logging.getLogger(__name__)

PAD_ID = 0
CLS_ID = 1

SHALLOW = "shallow"
FULL = "full"
FROZEN_BACKBONE = "frozen-backbone"
FROZEN_ALL = "frozen-all"
BACKBONE_STRATEGIES = (SHALLOW, FULL, FROZEN_BACKBONE, FROZEN_ALL)


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 6
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    vocab_size: int = 64
    max_seq_len: int = 32
    num_classes: int = 2
    dropout: float = 0.1
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02

    def __post_init__(self):
        if self.num_layers < 1:
            raise InvalidInputError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.d_model % self.num_heads != 0:
            raise InvalidInputError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardTrace:
    """Per-layer artifacts of one forward pass.

    attentions[l]: [batch, head, query, key]; block_outputs[l]: [batch, seq, d_model];
    cls[l]: [batch, d_model] (position 0 of block_outputs[l]).
    """
    embeddings: torch.Tensor
    attentions: List[torch.Tensor] = field(default_factory=list)
    block_outputs: List[torch.Tensor] = field(default_factory=list)
    cls: List[torch.Tensor] = field(default_factory=list)
    logits: Optional[torch.Tensor] = None
    key_mask: Optional[torch.Tensor] = None

    @property
    def num_layers(self) -> int:
        return len(self.block_outputs)


class SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.head_dim
        self.query = nn.Linear(cfg.d_model, cfg.d_model)
        self.key = nn.Linear(cfg.d_model, cfg.d_model)
        self.value = nn.Linear(cfg.d_model, cfg.d_model)
        self.output = nn.Linear(cfg.d_model, cfg.d_model)

    def _split(self, x):
        batch, seq, _ = x.shape
        return x.view(batch, seq, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, x, key_mask):
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        context = (probs @ v).transpose(1, 2).reshape(x.shape)
        return self.output(context), probs


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.dense_in = nn.Linear(cfg.d_model, cfg.d_ff)
        self.dense_out = nn.Linear(cfg.d_ff, cfg.d_model)

    def forward(self, x):
        return self.dense_out(F.gelu(self.dense_in(x)))


class EncoderBlock(nn.Module):
    """Post-norm block: LN(x + Attn(x)) followed by LN(h + FFN(h))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attention = SelfAttention(cfg)
        self.attention_norm = nn.LayerNorm(cfg.d_model, eps=cfg.layer_norm_eps)
        self.ffn = FeedForward(cfg)
        self.ffn_norm = nn.LayerNorm(cfg.d_model, eps=cfg.layer_norm_eps)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        attended, probs = self.attention(x, key_mask)
        h = self.attention_norm(x + self.dropout(attended))
        h = self.ffn_norm(h + self.dropout(self.ffn(h)))
        return h, probs


class MiniEncoder(nn.Module):
    """
    Small BERT-style encoder with a [CLS] classifier head.

    Token 1 is reserved for [CLS] and must open every sequence; token 0 is
    padding and is masked out of the attention keys. Every forward pass taps
    the embedding output and each block output on `self.graph`, so
    activation gradients exist after backward for every layer, trainable or
    not.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.position_embedding = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.embedding_norm = nn.LayerNorm(cfg.d_model, eps=cfg.layer_norm_eps)
        self.embedding_dropout = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList([EncoderBlock(cfg) for _ in range(cfg.num_layers)])
        self.classifier_dropout = nn.Dropout(cfg.dropout)
        self.classifier = nn.Linear(cfg.d_model, cfg.num_classes)

        self.graph = ComputeGraph()
        self.lora_spec = None
        self.lora_seed = None

        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.apply(self._init_weights)
        self.to(DTYPE)

    def _init_weights(self, module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=self.cfg.init_std)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)
        if isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)

    @property
    def num_layers(self) -> int:
        return self.cfg.num_layers

    def validate_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() != 2:
            raise InvalidInputError(f"token batch must be [batch, seq], got shape {tuple(tokens.shape)}")
        if tokens.shape[1] > self.cfg.max_seq_len:
            raise InvalidInputError(f"sequence length {tokens.shape[1]} exceeds max_seq_len={self.cfg.max_seq_len}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise InvalidInputError(f"token ids must lie in [0, {self.cfg.vocab_size})")
        return tokens

    def forward(self, tokens: torch.Tensor) -> ForwardTrace:
        tokens = self.validate_tokens(tokens)
        graph = self.graph.begin()
        key_mask = tokens != PAD_ID

        positions = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.token_embedding(tokens) + self.position_embedding(positions)[None]
        x = self.embedding_dropout(self.embedding_norm(x))
        x = graph.tap("embedding", x)

        trace = ForwardTrace(embeddings=x.detach(), key_mask=key_mask)
        for index, block in enumerate(self.blocks):
            x, probs = block(x, key_mask)
            x = graph.tap(f"block.{index}", x)
            trace.attentions.append(probs.detach())
            trace.block_outputs.append(x.detach())
            trace.cls.append(x[:, 0].detach())

        trace.logits = self.classifier(self.classifier_dropout(x[:, 0]))
        return trace

    def block_parameters(self, layer: int) -> Dict[str, nn.Parameter]:
        """Parameters of block `layer`, including any mounted adapter factors."""
        if not 0 <= layer < self.num_layers:
            raise InvalidInputError(f"layer {layer} outside [0, {self.num_layers})")
        return dict(self.blocks[layer].named_parameters())


def set_strategy(model: MiniEncoder, strategy: str, k: Optional[int] = None) -> Dict[str, bool]:
    """
    Apply a backbone trainability pattern and return the resulting mask.

    shallow: top-k blocks + classifier; full: embeddings, all blocks and the
    classifier; frozen-backbone: classifier only; frozen-all: nothing. Mounted
    adapter factors stay trainable under every pattern except frozen-all.
    """
    if strategy == "shallow-top-k":
        strategy = SHALLOW
    if strategy not in BACKBONE_STRATEGIES:
        raise InvalidInputError(f"unknown strategy '{strategy}', expected one of {BACKBONE_STRATEGIES}")
    num_layers = model.num_layers
    if strategy == SHALLOW:
        if k is None or not 0 <= k <= num_layers:
            raise InvalidInputError(f"shallow strategy needs 0 <= k <= {num_layers}, got k={k}")

    trainable_blocks = set()
    if strategy == SHALLOW:
        trainable_blocks = set(range(num_layers - k, num_layers))
    elif strategy == FULL:
        trainable_blocks = set(range(num_layers))

    for name, param in model.named_parameters():
        if "lora_" in name:
            flag = strategy != FROZEN_ALL
        elif name.startswith("classifier."):
            flag = strategy != FROZEN_ALL
        elif name.startswith("blocks."):
            flag = int(name.split(".")[1]) in trainable_blocks
        else:
            flag = strategy == FULL
        param.requires_grad_(flag)
    return trainable_mask(model)


def trainable_mask(model: nn.Module) -> Dict[str, bool]:
    return {name: param.requires_grad for name, param in model.named_parameters()}


def count_trainable(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def count_total(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def trainable_blocks(model: MiniEncoder) -> List[int]:
    return [index for index in range(model.num_layers)
            if any(p.requires_grad for p in model.blocks[index].parameters())]
