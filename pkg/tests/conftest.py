from pathlib import Path

import pytest
import torch

from inflect.model.architectures.encoder import CLS_ID, MiniEncoder, ModelConfig
from inflect.utility.configs import Config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def tiny_config():
    return ModelConfig(num_layers=2, num_heads=2, d_model=8, d_ff=16, vocab_size=16, max_seq_len=8,
                       num_classes=2, dropout=0.0)


@pytest.fixture
def tiny_model(tiny_config):
    return MiniEncoder(tiny_config, seed=0).eval()


def random_tokens(cfg: ModelConfig, batch: int, seq_len: int = None, seed: int = 0) -> torch.Tensor:
    """[CLS] followed by random non-special tokens."""
    seq_len = seq_len or cfg.max_seq_len
    generator = torch.Generator().manual_seed(seed)
    tokens = torch.randint(2, cfg.vocab_size, (batch, seq_len), generator=generator)
    tokens[:, 0] = CLS_ID
    return tokens


@pytest.fixture
def smoke_config():
    return Config.load_from_file(str(CONFIG_DIR / "smoke.py"))
