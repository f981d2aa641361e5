"""
Checkpoint container.

A checkpoint is a ``torch.save`` dict with these fields:

    format_version    int, currently 1
    hyper_parameters  ModelConfig as a dict
    state_dict        every parameter; adapter factors appear under
                      ``blocks.<layer>.attention.<target>.lora_A`` / ``.lora_B``
    trainable         parameter name -> requires_grad
    lora              None, or {"spec": LoraSpec dict, "seed": mount seed}
    meta              free-form run metadata (root seed, stream seeds, regime, ...)

Loading rebuilds the encoder, re-mounts adapters when present, then loads
``state_dict`` strictly, so every tensor comes back bitwise identical.
"""
import logging
import os
from pathlib import Path
from typing import Optional, Tuple

import torch

from inflect.errors import InvalidInputError
from inflect.model.architectures.encoder import MiniEncoder, ModelConfig, trainable_mask
from inflect.model.lora import LoraSpec, mount

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_checkpoint(model: MiniEncoder, path, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "hyper_parameters": model.cfg.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "trainable": trainable_mask(model),
        "lora": None if model.lora_spec is None else {"spec": model.lora_spec.to_dict(), "seed": model.lora_seed},
        "meta": dict(meta or {}),
    }
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path) -> Tuple[MiniEncoder, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"Unsupported checkpoint format {payload.get('format_version')} in {path}")

    model = MiniEncoder(ModelConfig(**payload["hyper_parameters"]))
    if payload["lora"] is not None:
        mount(model, LoraSpec.from_dict(payload["lora"]["spec"]), seed=payload["lora"]["seed"])
    model.load_state_dict(payload["state_dict"], strict=True)
    for name, param in model.named_parameters():
        param.requires_grad_(payload["trainable"][name])
    return model, payload["meta"]
