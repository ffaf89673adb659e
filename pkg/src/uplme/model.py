"""Probabilistic cross-encoder with mean and variance heads.

The encoder is a small pre-norm transformer trained from scratch.  Dropout
masks are drawn from explicit ``torch.Generator`` objects rather than the
global RNG so every stochastic pass is reproducible from its seed.
"""

from __future__ import annotations

import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, InvalidInputError

log = logging.getLogger(__name__)

PAD_ID, CLS_ID, SEP_ID = 0, 1, 2
N_RESERVED = 3
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TokenizedPair:
    """``[CLS, a..., SEP, SEP, b..., SEP]`` plus where each text sits.

    ``seg_a``/``seg_b`` are ranges over positions in ``ids`` and never cover a
    marker.  ``truncated`` is set when content tokens were dropped to fit.
    """

    ids: tuple
    seg_a: range
    seg_b: range
    truncated: bool = False
    id: str = ""

    @property
    def L(self) -> int:
        return len(self.ids)

    @property
    def a_ids(self) -> tuple:
        return self.ids[self.seg_a.start : self.seg_a.stop]

    @property
    def b_ids(self) -> tuple:
        return self.ids[self.seg_b.start : self.seg_b.stop]


def assemble_pair(a_ids: Sequence[int], b_ids: Sequence[int], max_len: int, uid: str = "",
                  cls_id: int = CLS_ID, sep_id: int = SEP_ID) -> TokenizedPair:
    """Lay two token lists out as a cross-encoder input.

    Over-long pairs lose tokens from the end of whichever segment is
    currently longer; markers are never dropped.
    """
    a, b = list(a_ids), list(b_ids)
    if not a or not b:
        raise InvalidInputError(f"empty segment in pair {uid!r}")
    budget = max_len - 4
    if budget < 2:
        raise InvalidInputError(f"max_len={max_len} leaves no room for both segments")
    truncated = False
    excess = len(a) + len(b) - budget
    if excess > 0:
        truncated = True
        la, lb = len(a), len(b)
        while la + lb > budget:
            if la >= lb:
                la -= 1
            else:
                lb -= 1
        a, b = a[:la], b[:lb]
    ids = (cls_id, *a, sep_id, sep_id, *b, sep_id)
    seg_a = range(1, 1 + len(a))
    seg_b = range(3 + len(a), 3 + len(a) + len(b))
    return TokenizedPair(ids, seg_a, seg_b, truncated, uid)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 4096
    d: int = 64
    depth: int = 2
    n_heads: int = 4
    ff_mult: int = 2
    dropout_rate: float = 0.1
    max_len: int = 256
    var_floor: float = 1e-8

    def __post_init__(self):
        if self.d < 1 or self.depth < 1 or self.n_heads < 1:
            raise InvalidInputError("d, depth and n_heads must be >= 1")
        if self.d % self.n_heads:
            raise InvalidInputError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.vocab_size <= N_RESERVED:
            raise InvalidInputError("vocab_size too small")
        if self.max_len < 6:
            raise InvalidInputError("max_len must be >= 6")
        if not self.var_floor > 0:
            raise InvalidInputError("var_floor must be > 0")


@dataclass
class PairBatch:
    """Padded batch of tokenized pairs.  Masks are float so they broadcast."""

    ids: torch.Tensor  # (B, L) long
    key_mask: torch.Tensor  # (B, L) bool, True on real tokens
    mask_a: torch.Tensor  # (B, L)
    mask_b: torch.Tensor  # (B, L)
    truncated: torch.Tensor  # (B,) bool
    pair_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.ids.shape[0]


def collate(pairs: Sequence[TokenizedPair], max_len: int | None = None) -> PairBatch:
    if not pairs:
        raise InvalidInputError("cannot collate an empty batch")
    fixed = []
    for p in pairs:
        if max_len is not None and p.L > max_len:
            p = assemble_pair(p.a_ids, p.b_ids, max_len, p.id)
            log.warning("pair %r exceeds max_len; truncated", p.id)
        fixed.append(p)
    B, L = len(fixed), max(p.L for p in fixed)
    ids = np.full((B, L), PAD_ID, dtype=np.int64)
    key = np.zeros((B, L), dtype=bool)
    ma = np.zeros((B, L))
    mb = np.zeros((B, L))
    for i, p in enumerate(fixed):
        ids[i, : p.L] = p.ids
        key[i, : p.L] = True
        ma[i, p.seg_a.start : p.seg_a.stop] = 1.0
        mb[i, p.seg_b.start : p.seg_b.stop] = 1.0
    return PairBatch(
        ids=torch.from_numpy(ids),
        key_mask=torch.from_numpy(key),
        mask_a=torch.from_numpy(ma),
        mask_b=torch.from_numpy(mb),
        truncated=torch.tensor([p.truncated for p in fixed]),
        pair_ids=[p.id for p in fixed],
    )


@dataclass
class ModelOutput:
    y_hat: torch.Tensor  # (N,)
    sigma2: torch.Tensor  # (N,)
    h_z: torch.Tensor  # (N, L, d)
    h_pooled: torch.Tensor  # (N, d)
    truncated: torch.Tensor | None = None


def _dropout(x: torch.Tensor, rate: float, generators) -> torch.Tensor:
    """Inverted dropout; batch dim is split into one chunk per generator."""
    if not generators or rate == 0.0:
        return x
    chunks = x.shape[0] // len(generators)
    keep = torch.cat(
        [torch.rand((chunks, *x.shape[1:]), generator=g) >= rate for g in generators]
    )
    return x * keep.to(x.dtype) / (1.0 - rate)


class Block(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.rate = cfg.dropout_rate
        self.ln1 = nn.LayerNorm(cfg.d)
        self.qkv = nn.Linear(cfg.d, 3 * cfg.d)
        self.proj = nn.Linear(cfg.d, cfg.d)
        self.ln2 = nn.LayerNorm(cfg.d)
        self.ff_in = nn.Linear(cfg.d, cfg.ff_mult * cfg.d)
        self.ff_out = nn.Linear(cfg.ff_mult * cfg.d, cfg.d)

    def forward(self, x, key_mask, generators):
        N, L, d = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        hd = d // self.n_heads
        q, k, v = (t.view(N, L, self.n_heads, hd).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        att = torch.softmax(scores, dim=-1) @ v
        att = att.transpose(1, 2).reshape(N, L, d)
        x = x + _dropout(self.proj(att), self.rate, generators)
        ff = self.ff_out(F.gelu(self.ff_in(self.ln2(x))))
        return x + _dropout(ff, self.rate, generators)


class PairRegressor(nn.Module):
    """Transformer encoder over the joint pair sequence with two scalar heads."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.tok = nn.Embedding(config.vocab_size, config.d)
        self.pos = nn.Embedding(config.max_len, config.d)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.depth))
        self.ln_f = nn.LayerNorm(config.d)
        self.mean_head = nn.Linear(config.d, 1)
        self.var_head = nn.Linear(config.d, 1)
        self.reset_parameters(seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.tok.weight.dtype

    @torch.no_grad()
    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(int(seed))
        for name, p in self.named_parameters():
            if name.startswith("ln") or ".ln" in name:
                continue  # LayerNorm keeps (1, 0)
            if p.dim() == 2:
                # embeddings use their row width as fan-in
                bound = 1.0 / math.sqrt(p.shape[1])
                p.copy_(torch.rand(p.shape, generator=g, dtype=torch.float64).mul(2 * bound).sub(bound))
            else:
                p.zero_()
        # softplus(bias) == 1 at start
        self.var_head.bias.fill_(math.log(math.expm1(1.0)))

    def forward(self, batch: PairBatch, stochastic: bool = False, generators=None) -> ModelOutput:
        """Run ``len(generators)`` stochastic passes (pass-major) or one deterministic pass.

        With ``stochastic=False`` dropout is off and ``generators`` is ignored.
        """
        gens = list(generators) if (stochastic and generators) else []
        if stochastic and not gens:
            raise InvalidInputError("stochastic forward needs at least one generator")
        if batch.ids.shape[1] > self.config.max_len:
            raise InvalidInputError(f"sequence length {batch.ids.shape[1]} exceeds max_len")
        reps = max(len(gens), 1)
        ids = batch.ids.repeat(reps, 1)
        key_mask = batch.key_mask.repeat(reps, 1)
        pos = torch.arange(ids.shape[1])
        x = self.tok(ids) + self.pos(pos)[None]
        for block in self.blocks:
            x = block(x, key_mask, gens)
        h_z = self.ln_f(x)
        pooled = h_z[:, 0]
        y_hat = self.mean_head(pooled).squeeze(-1)
        sigma2 = F.softplus(self.var_head(pooled).squeeze(-1)) + self.config.var_floor
        return ModelOutput(y_hat, sigma2, h_z, pooled, batch.truncated)

    def forward_pair(self, pair: TokenizedPair, stochastic: bool = False, generator=None) -> ModelOutput:
        """Single-pair convenience wrapper returning unbatched tensors."""
        out = self.forward(collate([pair], self.config.max_len), stochastic,
                           [generator] if generator is not None else None)
        return ModelOutput(out.y_hat[0], out.sigma2[0], out.h_z[0], out.h_pooled[0], out.truncated[0])


def batch_similarity(h: torch.Tensor, mask_a: torch.Tensor, mask_b: torch.Tensor):
    """Cosine similarity of per-segment mean vectors for a (B, L, d) batch.

    Returns ``(s, degenerate)``; degenerate rows (a zero-norm mean) get s=0.
    """
    mask_a = mask_a.to(h.dtype)
    mask_b = mask_b.to(h.dtype)
    mean_a = (h * mask_a[..., None]).sum(1) / mask_a.sum(1, keepdim=True)
    mean_b = (h * mask_b[..., None]).sum(1) / mask_b.sum(1, keepdim=True)
    denom = mean_a.norm(dim=-1) * mean_b.norm(dim=-1)
    degenerate = denom == 0
    safe = torch.where(degenerate, torch.ones_like(denom), denom)
    s = (mean_a * mean_b).sum(-1) / safe
    s = torch.where(degenerate, torch.zeros_like(s), s)
    return s.clamp(-1.0, 1.0), degenerate


def segment_similarity(h_z, seg_a: range, seg_b: range):
    """Cosine similarity between the mean rows of two segments of ``h_z`` (L, d)."""
    h = torch.as_tensor(np.asarray(h_z, dtype=np.float64)) if not isinstance(h_z, torch.Tensor) else h_z
    L = h.shape[0]
    for seg in (seg_a, seg_b):
        if len(seg) == 0 or seg.start < 0 or seg.stop > L:
            raise InvalidInputError(f"invalid segment {seg} for length {L}")
    ma = torch.zeros(1, L, dtype=h.dtype)
    mb = torch.zeros(1, L, dtype=h.dtype)
    ma[0, seg_a.start : seg_a.stop] = 1
    mb[0, seg_b.start : seg_b.stop] = 1
    s, degenerate = batch_similarity(h[None], ma, mb)
    return s[0], bool(degenerate[0])


# checkpoint I/O

def save_checkpoint(path, model: PairRegressor, meta: dict | None = None) -> Path:
    """Write config and every parameter tensor to an ``.npz`` archive."""
    path = Path(path)
    header = {
        "version": CHECKPOINT_VERSION,
        "encoder": asdict(model.config),
        "dtype": str(model.dtype).replace("torch.", ""),
        "meta": meta or {},
    }
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, expect: EncoderConfig | None = None) -> tuple[PairRegressor, dict]:
    """Inverse of ``save_checkpoint``; returns ``(model, meta)``."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
    try:
        config = EncoderConfig(**header["encoder"])
    except (TypeError, InvalidInputError) as exc:
        raise CheckpointError(f"bad encoder config in {path}: {exc}") from exc
    if expect is not None and expect != config:
        raise CheckpointError(f"checkpoint config {config} does not match expected {expect}")
    model = PairRegressor(config)
    model.to(getattr(torch, header["dtype"]))
    state = model.state_dict()
    if set(state) != set(params):
        raise CheckpointError(f"parameter set mismatch in {path}")
    try:
        model.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
    except RuntimeError as exc:
        raise CheckpointError(str(exc)) from exc
    return model, header["meta"]
