"""
Linear CKA between paired representations projected onto one shared PCA basis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence

import torch

from inflect.errors import InvalidInputError, UndefinedInputError
from inflect.model.autodiff import DTYPE

logger = logging.getLogger(__name__)


def _as_matrix(values, what: str) -> torch.Tensor:
    matrix = torch.as_tensor(values).to(DTYPE)
    if matrix.dim() != 2 or matrix.shape[0] == 0:
        raise InvalidInputError(f"{what} must be a non-empty [samples, features] matrix, got {tuple(matrix.shape)}")
    return matrix


def shared_pca_basis(reps_before, reps_after, pca_dim: int) -> torch.Tensor:
    """
    Top principal directions of the mean-centred concatenation of both matrices.

    Returns a [d, k] matrix with orthonormal columns sorted by decreasing
    variance, k == pca_dim unless the data has lower rank, in which case k is
    the rank and a warning is logged. Each column's largest-magnitude entry is
    positive (first such entry on ties).
    """
    before = _as_matrix(reps_before, "reps_before")
    after = _as_matrix(reps_after, "reps_after")
    if before.shape[1] != after.shape[1]:
        raise InvalidInputError(f"feature sizes differ: {before.shape[1]} vs {after.shape[1]}")
    d = before.shape[1]
    if not 1 <= pca_dim <= d:
        raise InvalidInputError(f"pca_dim must lie in [1, {d}], got {pca_dim}")

    combined = torch.cat([before, after])
    centred = combined - combined.mean(dim=0, keepdim=True)
    covariance = centred.T @ centred / max(combined.shape[0] - 1, 1)
    eigvals, eigvecs = torch.linalg.eigh(covariance)
    order = torch.argsort(eigvals, descending=True, stable=True)
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    tolerance = eigvals[0].clamp(min=0).item() * max(combined.shape) * torch.finfo(DTYPE).eps
    rank = int((eigvals > tolerance).sum())
    if rank == 0:
        raise UndefinedInputError("representations have zero variance; no principal directions exist")
    if rank < pca_dim:
        logger.warning(f"Representations have rank {rank} < pca_dim={pca_dim}; using {rank} directions")
    basis = eigvecs[:, :min(pca_dim, rank)].clone()

    pivots = basis.abs().argmax(dim=0)
    signs = torch.sign(basis[pivots, torch.arange(basis.shape[1])])
    return basis * signs


def linear_cka(X, Y) -> float:
    """||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centred copies, clipped to [0, 1]."""
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"CKA needs paired samples, got {X.shape[0]} and {Y.shape[0]} rows")
    for name, matrix in (("X", X), ("Y", Y)):
        if bool((matrix == matrix[0]).all()):
            raise UndefinedInputError(f"{name} has zero variance (all rows identical); CKA is undefined")

    X = X - X.mean(dim=0, keepdim=True)
    Y = Y - Y.mean(dim=0, keepdim=True)
    cross = torch.linalg.matrix_norm(Y.T @ X) ** 2
    denominator = torch.linalg.matrix_norm(X.T @ X) * torch.linalg.matrix_norm(Y.T @ Y)
    if denominator.item() == 0.0:
        raise UndefinedInputError("centred representations vanish; CKA is undefined")
    return min(max((cross / denominator).item(), 0.0), 1.0)


@dataclass
class CkaPair:
    reps_before: torch.Tensor
    reps_after: torch.Tensor
    shared_basis: torch.Tensor
    cka: float

    @property
    def delta_cka(self) -> float:
        return 1.0 - self.cka


def compare_representations(before, after, pca_dim: int) -> CkaPair:
    before = _as_matrix(before, "before")
    after = _as_matrix(after, "after")
    if before.shape != after.shape:
        raise InvalidInputError(f"before {tuple(before.shape)} and after {tuple(after.shape)} are not paired")
    basis = shared_pca_basis(before, after, pca_dim)
    if torch.equal(before, after):
        return CkaPair(before, after, basis, 1.0)
    return CkaPair(before, after, basis, linear_cka(before @ basis, after @ basis))


def delta_cka(before, after, pca_dim: int) -> float:
    """1 - CKA of both matrices projected through their shared PCA basis."""
    return compare_representations(before, after, pca_dim).delta_cka


def delta_cka_profile(before: Sequence[torch.Tensor], after: Sequence[torch.Tensor], pca_dim: int) -> List[float]:
    if len(before) != len(after):
        raise InvalidInputError(f"layer counts differ: {len(before)} vs {len(after)}")
    return [delta_cka(b, a, pca_dim) for b, a in zip(before, after)]
