"""Named random streams derived from a single root seed.

Every source of randomness in a run (data generation, pretraining,
fine-tuning, probes, LoRA init) draws from its own stream so that adding a
consumer to one phase never shifts the draws of another.
"""
import zlib
from typing import Dict, Iterable

import numpy as np
import torch

STREAMS = ("data", "init", "pretrain", "calibrate", "finetune", "lora", "probe")


def derive_seed(root_seed: int, stream: str) -> int:
    """Deterministic 31-bit seed for `stream` under `root_seed`."""
    sequence = np.random.SeedSequence([int(root_seed), zlib.crc32(stream.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint32)[0] & 0x7FFFFFFF)


def stream_seeds(root_seed: int, streams: Iterable[str] = STREAMS) -> Dict[str, int]:
    return {name: derive_seed(root_seed, name) for name in streams}


def torch_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator

