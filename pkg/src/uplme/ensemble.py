"""Variational ensembling: T stochastic passes averaged into one prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInputError
from .model import PairBatch, PairRegressor

TRAIN_PHASE, EVAL_PHASE = 0, 1


def stream_seed(seed: int, *key: int) -> int:
    """Derive an independent 63-bit seed from the root seed and a key tuple."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in key)])
    hi, lo = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) & ((1 << 63) - 1)


def pass_generators(seed: int, key: tuple, T: int, order=None) -> list[torch.Generator]:
    """One generator per pass ``t``, seeded from ``(seed, *key, t)``."""
    order = range(T) if order is None else order
    return [torch.Generator().manual_seed(stream_seed(seed, *key, t)) for t in order]


@dataclass
class EnsembleOutput:
    y_bar: torch.Tensor  # (B,)
    sigma2_bar: torch.Tensor  # (B,)
    h_bar: torch.Tensor | None  # (B, L, d) when requested
    T: int
    per_pass: tuple | None = None  # ((T, B) y_hat, (T, B) sigma2)


def ensemble_forward(model: PairRegressor, batch: PairBatch, T: int = 4, seed: int = 0,
                     key: tuple = (EVAL_PHASE, 0, 0), mc_dropout: bool = True,
                     keep_h: bool = False, keep_passes: bool = False,
                     order=None) -> EnsembleOutput:
    """Average ``T`` stochastic passes of ``model`` over ``batch``.

    Pass ``t`` draws its dropout masks from ``(seed, *key, t)``.  When
    dropout cannot fire (rate 0 or ``mc_dropout=False``) all passes would be
    identical, so one deterministic pass is returned as is.  ``order``
    permutes which derived stream each pass slot uses.
    """
    if T < 1:
        raise InvalidInputError(f"T must be >= 1, got {T}")
    B = len(batch)
    active = mc_dropout and model.config.dropout_rate > 0
    if not active:
        out = model(batch, stochastic=False)
        passes = (out.y_hat[None], out.sigma2[None]) if keep_passes else None
        return EnsembleOutput(out.y_hat, out.sigma2, out.h_z if keep_h else None, T, passes)
    out = model(batch, stochastic=True, generators=pass_generators(seed, key, T, order))
    y = out.y_hat.view(T, B)
    s2 = out.sigma2.view(T, B)
    h_bar = out.h_z.view(T, B, *out.h_z.shape[1:]).mean(0) if keep_h else None
    passes = (y, s2) if keep_passes else None
    return EnsembleOutput(y.mean(0), s2.mean(0), h_bar, T, passes)
