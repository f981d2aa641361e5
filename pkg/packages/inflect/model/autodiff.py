"""
Verified reverse-mode differentiation on top of torch autograd.

Everything here runs in float64. Three pieces sit on top of torch:

* `softmax_cross_entropy` with an analytic backward (dL/dz = p - y) instead of
  autograd's composed log-softmax derivative.
* `ComputeGraph`, a per-forward tap registry. Tapped activations keep their
  gradient after backward even when nothing upstream of them is trainable.
* `finite_diff_check`, a central-difference oracle for any scalar closure.
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from inflect.errors import InvalidInputError, NumericError, StateError

logger = logging.getLogger(__name__)

DTYPE = torch.float64


def set_deterministic(num_threads: int = 1) -> None:
    """Fix the intra-op thread count and force deterministic kernels."""
    torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(True)


def check_finite(tensor: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        bad = int((~torch.isfinite(tensor)).sum())
        raise NumericError(f"{what} contains {bad} non-finite value(s)")
    return tensor


class _SoftmaxCrossEntropy(torch.autograd.Function):
    """Mean cross-entropy over the batch with backward p - y scaled by 1/batch."""

    @staticmethod
    def forward(ctx, logits, labels):
        probs = torch.softmax(logits, dim=-1)
        onehot = F.one_hot(labels, num_classes=logits.shape[-1]).to(logits.dtype)
        log_probs = torch.log_softmax(logits, dim=-1)
        picked = log_probs.gather(1, labels.unsqueeze(1)).squeeze(1)
        loss = -picked.sum() / logits.shape[0]
        ctx.save_for_backward(probs - onehot)
        ctx.batch_size = logits.shape[0]
        return loss

    @staticmethod
    def backward(ctx, grad_output):
        (residual,) = ctx.saved_tensors
        return grad_output * residual / ctx.batch_size, None


def softmax_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Cross-entropy of softmax(logits) against class indices.

    Returns:
        loss: differentiable scalar, mean over the batch of -log p[b, label_b].
        dL_dz: per-row derivative p - onehot(y), detached. The gradient that
            flows into the graph is this divided by the batch size, because the
            loss is a batch mean.
    """
    if logits.dim() != 2:
        raise InvalidInputError(f"logits must be [batch, classes], got shape {tuple(logits.shape)}")
    if logits.shape[0] == 0:
        raise InvalidInputError("empty batch")
    if logits.shape[1] < 2:
        raise InvalidInputError(f"need at least 2 classes, got {logits.shape[1]}")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != (logits.shape[0],):
        raise InvalidInputError(f"labels must have shape ({logits.shape[0]},), got {tuple(labels.shape)}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise InvalidInputError(f"labels must lie in [0, {logits.shape[1]})")
    check_finite(logits.detach(), "logits")

    loss = _SoftmaxCrossEntropy.apply(logits, labels)
    with torch.no_grad():
        dL_dz = torch.softmax(logits, dim=-1) - F.one_hot(labels, num_classes=logits.shape[1]).to(logits.dtype)
    return loss, dL_dz


class ComputeGraph:
    """
    Tap registry and lifecycle guard for one forward/backward pass.

    The op tape itself is torch's autograd graph. This object records which
    activations must expose their gradient, and rejects a backward that has
    no preceding forward.
    """

    def __init__(self):
        self._taps: Dict[str, torch.Tensor] = {}
        self._grads: Dict[str, torch.Tensor] = {}
        self._order: List[str] = []
        self.state = "idle"

    def __deepcopy__(self, memo):
        # taps hold non-leaf tensors of a finished pass; a copy starts idle
        return ComputeGraph()

    def begin(self) -> "ComputeGraph":
        self._taps.clear()
        self._grads.clear()
        self._order.clear()
        self.state = "forward"
        return self

    def tap(self, name: str, tensor: torch.Tensor) -> torch.Tensor:
        """
        Register `tensor` as a tap point and return the tensor to use downstream.

        If nothing upstream requires grad, the activation is re-rooted as a
        grad-requiring leaf so that its gradient still exists after backward.
        """
        if self.state != "forward":
            raise StateError("tap() called outside a forward pass; call begin() first")
        if name in self._taps:
            raise StateError(f"tap '{name}' registered twice in one forward pass")
        if not tensor.requires_grad:
            if not torch.is_grad_enabled():
                # Inference pass: record the value, there will be no backward.
                self._taps[name] = tensor
                self._order.append(name)
                return tensor
            tensor = tensor.detach().requires_grad_(True)
        tensor.register_hook(self._store_hook(name))
        self._taps[name] = tensor
        self._order.append(name)
        return tensor

    def _store_hook(self, name):
        def hook(grad):
            self._grads[name] = grad.detach().clone()
        return hook

    def backward(self, loss: torch.Tensor) -> None:
        if self.state != "forward":
            raise StateError(f"backward requested in state '{self.state}'; run a forward pass first")
        if loss.numel() != 1:
            raise InvalidInputError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
        check_finite(loss.detach(), "loss")
        if loss.requires_grad:
            loss.backward()
        self.finish()

    def finish(self) -> None:
        """Close the pass; taps that did not reach the loss get exact zero gradients."""
        for name in self._order:
            if name not in self._grads:
                self._grads[name] = torch.zeros_like(self._taps[name]).detach()
        self.state = "backward"

    @property
    def tapped_names(self) -> List[str]:
        return list(self._order)

    def activation(self, name: str) -> torch.Tensor:
        if name not in self._taps:
            raise StateError(f"no tap named '{name}'")
        return self._taps[name].detach()

    def tap_grad(self, name: str) -> torch.Tensor:
        if name not in self._taps:
            raise StateError(f"no tap named '{name}'")
        if self.state != "backward":
            raise StateError(f"gradient of tap '{name}' requested before backward")
        return self._grads[name]

    def missing_grads(self) -> List[str]:
        return [name for name in self._order if name not in self._grads]


def dropout_active(module: nn.Module) -> bool:
    if not module.training:
        return False
    return any(isinstance(m, nn.Dropout) and m.p > 0 for m in module.modules()) or any(
        getattr(m, "dropout_p", 0.0) > 0 for m in module.modules()
    )


def finite_diff_check(loss_fn: Callable[[], torch.Tensor],
                      params: Sequence[torch.Tensor],
                      eps: float = 1e-5,
                      module: Optional[nn.Module] = None,
                      max_entries: Optional[int] = None,
                      seed: int = 0,
                      floor: float = 1e-12) -> float:
    """
    Compare autograd gradients of ``loss_fn()`` against central differences.

    For every perturbed entry the relative error is
    ``|analytic - central| / max(|analytic|, |central|, floor)``; the maximum
    over entries is returned. ``max_entries`` samples that many entries per
    parameter (seeded) instead of sweeping all of them.
    """
    if module is not None and dropout_active(module):
        raise StateError("finite-difference check needs a deterministic graph; dropout is active")

    params = list(params)
    loss = loss_fn()
    if loss.numel() != 1:
        raise InvalidInputError("loss_fn must return a scalar")
    grads = torch.autograd.grad(loss, params, allow_unused=True)

    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    for param, grad in zip(params, grads):
        analytic = torch.zeros_like(param) if grad is None else grad.detach()
        flat = param.data.view(-1)
        flat_grad = analytic.reshape(-1)
        indices: Iterable[int] = range(flat.numel())
        if max_entries is not None and flat.numel() > max_entries:
            indices = torch.randperm(flat.numel(), generator=generator)[:max_entries].tolist()

        with torch.no_grad():
            for index in indices:
                original = flat[index].item()
                flat[index] = original + eps
                loss_plus = loss_fn().item()
                flat[index] = original - eps
                loss_minus = loss_fn().item()
                flat[index] = original

                central = (loss_plus - loss_minus) / (2.0 * eps)
                exact = flat_grad[index].item()
                scale = max(abs(exact), abs(central), floor)
                worst = max(worst, abs(exact - central) / scale)
    return worst


def saturation_gradient_ratio(pre_activation: float) -> float:
    """sigmoid'(pre_activation) / sigmoid'(0), both obtained through autograd."""
    def derivative(value):
        x = torch.tensor(value, dtype=DTYPE, requires_grad=True)
        torch.sigmoid(x).backward()
        return x.grad.item()

    return derivative(pre_activation) / derivative(0.0)
