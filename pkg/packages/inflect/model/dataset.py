from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import Dataset

from inflect.errors import InvalidInputError


@dataclass
class TokenSet:
    """Token-id matrix [n, seq] with one class index per row."""
    tokens: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        self.tokens = torch.as_tensor(self.tokens, dtype=torch.long)
        self.labels = torch.as_tensor(self.labels, dtype=torch.long)
        if self.tokens.dim() != 2 or self.labels.shape != (self.tokens.shape[0],):
            raise InvalidInputError(
                f"TokenSet needs tokens [n, seq] and labels [n], got {tuple(self.tokens.shape)} "
                f"and {tuple(self.labels.shape)}")

    def __len__(self):
        return self.tokens.shape[0]

    def head(self, n: int) -> "TokenSet":
        return TokenSet(self.tokens[:n], self.labels[:n])

    def class_fractions(self, num_classes: int) -> np.ndarray:
        counts = np.bincount(self.labels.numpy(), minlength=num_classes)
        return counts / max(len(self), 1)


class MotifDataset(Dataset):
    def __init__(self, token_set: TokenSet):
        self.tokens = token_set.tokens
        self.labels = token_set.labels

    def __len__(self):
        return self.tokens.shape[0]

    def __getitem__(self, idx):
        return self.tokens[idx], self.labels[idx]
