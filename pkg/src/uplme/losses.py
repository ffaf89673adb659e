"""Loss kernels for heteroscedastic pair regression.

All kernels take torch tensors (anything array-like is promoted to float64)
and are differentiable with autograd.  Closed-form gradients are provided
alongside as plain numpy functions; they are what the autograd path is
checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInputError, NonFiniteLossError

__all__ = [
    "LossWeights",
    "BatchTargets",
    "rescale_labels",
    "beta_nll",
    "variance_penalty",
    "alignment_loss",
    "total_loss",
    "beta_nll_grad",
    "variance_penalty_grad",
    "alignment_loss_grad",
]


@dataclass(frozen=True)
class LossWeights:
    """Hyperparameters of the composite objective.

    The defaults for ``alpha``, ``lambda1`` and ``lambda2`` are the values
    tuned on NewsEmpathy; ``beta=0.5`` is the usual beta-NLL setting.
    """

    beta: float = 0.5
    alpha: float = 1.5
    lambda1: float = 9.110462266012783
    lambda2: float = 5.5635098435909764
    var_floor: float = 1e-8
    norm_eps: float = 1e-12
    reduction: str = "sum"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.alpha > 0:
            raise InvalidInputError(f"alpha must be > 0, got {self.alpha}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidInputError("lambda1 and lambda2 must be >= 0")
        if not self.var_floor > 0:
            raise InvalidInputError(f"var_floor must be > 0, got {self.var_floor}")
        if self.norm_eps < 0:
            raise InvalidInputError("norm_eps must be >= 0")
        if self.reduction not in ("sum", "mean"):
            raise InvalidInputError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")


@dataclass(frozen=True)
class BatchTargets:
    """Gold scores of a batch together with their [-1, 1] rescaling."""

    y: torch.Tensor
    y_prime: torch.Tensor
    label_min: float
    label_max: float

    @classmethod
    def from_scores(cls, y, label_min: float, label_max: float, dtype=torch.float64) -> "BatchTargets":
        y = torch.as_tensor(np.asarray(y, dtype=np.float64), dtype=dtype)
        return cls(y, rescale_labels(y, label_min, label_max), float(label_min), float(label_max))


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_same_length(*xs: torch.Tensor) -> int:
    n = xs[0].shape[0] if xs[0].dim() else 1
    for x in xs:
        if x.dim() != 1 or x.shape[0] != n:
            raise InvalidInputError(
                f"expected equal-length 1-d vectors, got shapes {[tuple(v.shape) for v in xs]}"
            )
    if n < 1:
        raise InvalidInputError("empty batch")
    return n


def rescale_labels(y, label_min: float, label_max: float):
    """Affinely map scores from ``[label_min, label_max]`` onto ``[-1, 1]``."""
    if not label_max > label_min:
        raise InvalidInputError(f"degenerate label bounds [{label_min}, {label_max}]")
    is_tensor = isinstance(y, torch.Tensor)
    arr = y.detach().cpu().numpy() if is_tensor else np.asarray(y, dtype=np.float64)
    if np.any(arr < label_min) or np.any(arr > label_max) or np.any(~np.isfinite(arr)):
        raise InvalidInputError(f"scores outside [{label_min}, {label_max}]")
    out = 2.0 * ((y if is_tensor else arr) - label_min) / (label_max - label_min) - 1.0
    return out if is_tensor else (float(out) if np.ndim(out) == 0 else out)


def beta_nll(y, y_hat, sigma2, beta: float = 0.5, reduction: str = "sum") -> torch.Tensor:
    """Gaussian NLL re-weighted per sample by ``sigma2 ** beta``.

    The weight is detached: it rescales each sample's contribution but no
    gradient flows through it.
    """
    y, y_hat, sigma2 = _as_tensor(y), _as_tensor(y_hat), _as_tensor(sigma2)
    n = _check_same_length(y, y_hat, sigma2)
    if torch.any(sigma2 <= 0):
        raise InvalidInputError("sigma2 must be strictly positive")
    weight = sigma2.detach() ** beta
    loss = 0.5 * torch.sum(weight * (torch.log(sigma2) + (y - y_hat) ** 2 / sigma2))
    if reduction == "mean":
        loss = loss / n
    return loss


def variance_penalty(y, y_hat, sigma2, alpha: float = 1.5, norm_eps: float = 1e-12) -> torch.Tensor:
    """Error-weighted L2 norm of the predicted variances, divided by N.

    Each variance is scaled by ``exp(-alpha * err**2)`` so variance spent on
    accurately predicted samples is penalised and variance on badly
    predicted ones is nearly free.
    """
    if not alpha > 0:
        raise InvalidInputError(f"alpha must be > 0, got {alpha}")
    y, y_hat, sigma2 = _as_tensor(y), _as_tensor(y_hat), _as_tensor(sigma2)
    n = _check_same_length(y, y_hat, sigma2)
    scaled = torch.exp(-alpha * (y - y_hat) ** 2) * sigma2
    return torch.sqrt(torch.sum(scaled**2) + norm_eps) / n


def alignment_loss(s, y_prime) -> torch.Tensor:
    """Mean squared gap between pair similarities and rescaled labels."""
    s, y_prime = _as_tensor(s), _as_tensor(y_prime)
    _check_same_length(s, y_prime)
    return torch.mean((s - y_prime) ** 2)


def total_loss(parts: dict, weights: LossWeights):
    """Weighted sum ``nll + lambda1 * pen + lambda2 * align``.

    Raises NonFiniteLossError naming the first non-finite component.
    """
    for name in ("nll", "pen", "align"):
        value = parts[name]
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)
    return parts["nll"] + weights.lambda1 * parts["pen"] + weights.lambda2 * parts["align"]


# closed-form gradients (numpy, float64)

def beta_nll_grad(y, y_hat, sigma2, beta: float = 0.5, reduction: str = "sum"):
    """Return ``(dL/dy_hat, dL/dsigma2)`` with the beta weight held constant."""
    y, y_hat, sigma2 = (np.asarray(a, dtype=np.float64) for a in (y, y_hat, sigma2))
    err = y - y_hat
    w = sigma2**beta
    g_mean = -w * err / sigma2
    g_var = 0.5 * w * (1.0 / sigma2 - err**2 / sigma2**2)
    if reduction == "mean":
        g_mean, g_var = g_mean / len(y), g_var / len(y)
    return g_mean, g_var


def variance_penalty_grad(y, y_hat, sigma2, alpha: float = 1.5, norm_eps: float = 1e-12):
    """Return ``(dP/dy_hat, dP/dsigma2)``."""
    y, y_hat, sigma2 = (np.asarray(a, dtype=np.float64) for a in (y, y_hat, sigma2))
    err = y - y_hat
    decay = np.exp(-alpha * err**2)
    u = decay * sigma2
    dp_du = u / (len(y) * np.sqrt(np.sum(u**2) + norm_eps))
    return dp_du * 2.0 * alpha * err * u, dp_du * decay


def alignment_loss_grad(s, y_prime):
    """Return ``dA/ds``."""
    s, y_prime = np.asarray(s, dtype=np.float64), np.asarray(y_prime, dtype=np.float64)
    return 2.0 * (s - y_prime) / len(s)
