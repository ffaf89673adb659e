"""Training and evaluation loops, LR schedule and the multi-seed protocol."""

from __future__ import annotations

import copy
import logging
import math
import statistics
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .data import ExamplePair, HashTokenizer, tokenize_pair
from .ensemble import EVAL_PHASE, TRAIN_PHASE, ensemble_forward
from .errors import CorrelationUndefinedError, InvalidInputError
from .losses import (
    BatchTargets,
    LossWeights,
    alignment_loss,
    beta_nll,
    total_loss,
    variance_penalty,
)
from .metrics import HIGHER_IS_BETTER, MetricReport, metric_report
from .model import PairBatch, PairRegressor, TokenizedPair, batch_similarity, collate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-6
    weight_decay: float = 0.01
    batch_size: int = 16
    max_steps: int = 6000
    warmup_frac: float = 0.03
    min_epochs: int = 5
    patience: int = 3
    seeds: tuple = (0, 42, 100)
    T: int = 4
    grad_clip: float = 1.0
    mc_dropout: bool = True
    init_mean_bias: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not 0.0 < self.warmup_frac < 1.0:
            raise InvalidInputError(f"warmup_frac must lie in (0, 1), got {self.warmup_frac}")
        if self.min_epochs < 1:
            raise InvalidInputError("min_epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.T < 1:
            raise InvalidInputError("T must be >= 1")
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be >= 1")
        if self.patience < 0:
            raise InvalidInputError("patience must be >= 0")
        if not self.seeds:
            raise InvalidInputError("at least one seed is required")


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to ``config.lr``, then linear decay to 0 at ``total_steps``."""
    if step > total_steps:
        warnings.warn(f"step {step} beyond schedule end {total_steps}; lr clamped to 0")
        return 0.0
    if step < 0:
        raise InvalidInputError(f"negative step {step}")
    warmup = config.warmup_frac * total_steps
    if step < warmup:
        return config.lr * step / warmup
    return config.lr * (total_steps - step) / (total_steps - warmup)


# loss on one batch

def batch_loss(model: PairRegressor, batch: PairBatch, targets: BatchTargets, weights: LossWeights,
               T: int, seed: int = 0, key: tuple = (TRAIN_PHASE, 0, 0)):
    """Composite loss evaluated on the T-pass ensemble means.

    Returns ``(loss, parts)`` where ``parts`` maps nll/pen/align to tensors.
    """
    ens = ensemble_forward(model, batch, T, seed, key, mc_dropout=True, keep_h=True)
    y = targets.y.to(ens.y_bar.dtype)
    s, _ = batch_similarity(ens.h_bar, batch.mask_a, batch.mask_b)
    parts = {
        "nll": beta_nll(y, ens.y_bar, ens.sigma2_bar, weights.beta, weights.reduction),
        "pen": variance_penalty(y, ens.y_bar, ens.sigma2_bar, weights.alpha, weights.norm_eps),
        "align": alignment_loss(s, targets.y_prime.to(s.dtype)),
    }
    return total_loss(parts, weights), parts


def loss_gradients(model: PairRegressor, pairs: Sequence[TokenizedPair], targets: BatchTargets,
                   weights: LossWeights, T: int, seed: int = 0, key: tuple = (TRAIN_PHASE, 0, 0)) -> dict:
    """Gradient of the composite loss for every named parameter."""
    if not pairs:
        raise InvalidInputError("empty batch")
    model.zero_grad(set_to_none=True)
    loss, _ = batch_loss(model, collate(pairs, model.config.max_len), targets, weights, T, seed, key)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        grads[name] = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
    model.zero_grad(set_to_none=True)
    return grads


# evaluation

@torch.no_grad()
def predict(model: PairRegressor, pairs: Sequence[TokenizedPair], T: int, seed: int = 0,
            mc_dropout: bool = True, batch_size: int = 16):
    """Ensembled ``(y_bar, sigma2_bar)`` as float64 numpy arrays."""
    ys, vs = [], []
    for b, start in enumerate(range(0, len(pairs), batch_size)):
        batch = collate(pairs[start : start + batch_size], model.config.max_len)
        ens = ensemble_forward(model, batch, T, seed, (EVAL_PHASE, 0, b), mc_dropout=mc_dropout)
        ys.append(ens.y_bar.double().numpy())
        vs.append(ens.sigma2_bar.double().numpy())
    return np.concatenate(ys), np.concatenate(vs)


def evaluate_split(model: PairRegressor, split: Sequence[ExamplePair], T: int = 4,
                   config: TrainConfig | None = None, seed: int = 0, tokenizer=None,
                   mc_dropout: bool | None = None):
    """Metric report plus one record per sample for an evaluation split."""
    config = config or TrainConfig()
    if len(split) < 2:
        raise InvalidInputError("metrics need at least 2 samples")
    mc = config.mc_dropout if mc_dropout is None else mc_dropout
    tokenizer = tokenizer or HashTokenizer(model.config.vocab_size)
    pairs = [tokenize_pair(p, tokenizer, model.config.max_len) for p in split]
    y = np.array([p.score for p in split], dtype=np.float64)
    y_bar, s2_bar = predict(model, pairs, T, seed, mc, config.batch_size)
    report = metric_report(y, y_bar, s2_bar, seed=seed)
    records = [
        {
            "id": p.id,
            "y": p.score,
            "y_bar": float(yb),
            "sigma2_bar": float(sb),
            "is_noisy": p.is_noisy,
            "original_score": p.original_score,
        }
        for p, yb, sb in zip(split, y_bar, s2_bar)
    ]
    return report, records


# training

@dataclass
class RunResult:
    seed: int
    best_state: dict
    best_epoch: int
    best_val_ccc: float
    stopped_epoch: int
    steps: int
    history: list  # MetricReport per epoch (validation)
    train_losses: list  # mean training loss per epoch
    initial_train_loss: float
    test_report: MetricReport | None = None
    test_records: list | None = None
    pruned: bool = False


def _ccc_or_nan(report: MetricReport) -> float:
    return report.ccc if math.isfinite(report.ccc) else -math.inf


def _safe_report(model, split, config, seed, tokenizer) -> MetricReport:
    try:
        return evaluate_split(model, split, config.T, config, seed, tokenizer)[0]
    except CorrelationUndefinedError as exc:
        # constant predictions early in training: keep the error metric only
        return MetricReport(rmse=exc.rmse if exc.rmse is not None else math.nan, n=len(split), seed=seed)


def train(train_split: Sequence[ExamplePair], val_split: Sequence[ExamplePair], config: TrainConfig,
          model: PairRegressor, label_bounds: tuple, seed: int = 0, test_split=None, tokenizer=None,
          prune_hook: Callable[[int, MetricReport], bool] | None = None) -> RunResult:
    """Fit ``model`` in place and restore its best-validation-CCC state.

    ``prune_hook(epoch, val_report)`` may return True to abandon the run.
    """
    if not train_split or not val_split:
        raise InvalidInputError("training and validation splits must be nonempty")
    lo, hi = label_bounds
    tokenizer = tokenizer or HashTokenizer(model.config.vocab_size)
    max_len = model.config.max_len
    pairs = [tokenize_pair(p, tokenizer, max_len) for p in train_split]
    scores = np.array([p.score for p in train_split], dtype=np.float64)
    dtype = model.dtype

    if config.init_mean_bias:
        with torch.no_grad():
            model.mean_head.bias.fill_(float(scores.mean()))

    opt = torch.optim.AdamW(model.parameters(), lr=0.0, betas=(config.adam_beta1, config.adam_beta2),
                            eps=config.adam_eps, weight_decay=config.weight_decay)
    w = config.weights
    bs = config.batch_size
    step, epoch = 0, 0
    history, train_losses = [], []
    best_state, best_epoch, best_ccc = None, 0, -math.inf
    initial_loss = None
    pruned = False

    while step < config.max_steps:
        epoch += 1
        order = np.random.default_rng([seed, epoch]).permutation(len(pairs))
        losses = []
        for start in range(0, len(order), bs):
            if step >= config.max_steps:
                break
            idx = order[start : start + bs]
            if len(idx) == 0:
                log.warning("skipping empty batch at step %d", step)
                continue
            batch = collate([pairs[i] for i in idx], max_len)
            targets = BatchTargets.from_scores(scores[idx], lo, hi, dtype=dtype)
            loss, _ = batch_loss(model, batch, targets, w, config.T, seed, (TRAIN_PHASE, epoch, step))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            for group in opt.param_groups:
                group["lr"] = lr_at(step, config.max_steps, config)
            opt.step()
            step += 1
            value = float(loss.detach())
            if initial_loss is None:
                initial_loss = value
            losses.append(value)
        train_losses.append(float(np.mean(losses)) if losses else math.nan)

        report = _safe_report(model, val_split, config, seed, tokenizer)
        report.extra["epoch"] = epoch
        report.extra["step"] = step
        report.extra["train_loss"] = train_losses[-1]
        history.append(report)
        ccc = _ccc_or_nan(report)
        if best_state is None or ccc > best_ccc:
            best_ccc, best_epoch = ccc, epoch
            best_state = copy.deepcopy(model.state_dict())
        log.info("seed %d epoch %d step %d loss %.4f val ccc %.4f", seed, epoch, step, train_losses[-1], report.ccc)

        if prune_hook is not None and prune_hook(epoch, report):
            pruned = True
            break
        if epoch >= config.min_epochs and epoch - best_epoch >= config.patience:
            break

    model.load_state_dict(best_state)
    result = RunResult(
        seed=seed,
        best_state=best_state,
        best_epoch=best_epoch,
        best_val_ccc=best_ccc,
        stopped_epoch=epoch,
        steps=step,
        history=history,
        train_losses=train_losses,
        initial_train_loss=initial_loss if initial_loss is not None else math.nan,
        pruned=pruned,
    )
    if test_split is not None and not pruned:
        result.test_report, result.test_records = evaluate_split(model, test_split, config.T, config, seed, tokenizer)
    return result


# multi-seed protocol

def aggregate_reports(reports: Sequence[MetricReport]) -> dict:
    """Median and best-direction peak of every metric across seeds."""
    if not reports:
        raise InvalidInputError("no reports to aggregate")
    median, peak = {}, {}
    for name, higher in HIGHER_IS_BETTER.items():
        values = [getattr(r, name) for r in reports]
        median[name] = float(statistics.median(values))
        peak[name] = float(max(values) if higher else min(values))
    return {"median": median, "peak": peak}


def multi_seed(runner: Callable[[int], MetricReport], seeds: Sequence[int]) -> dict:
    """Run ``runner(seed)`` for every seed and aggregate the reports."""
    if not seeds:
        raise InvalidInputError("at least one seed is required")
    reports = [runner(s) for s in seeds]
    out = aggregate_reports(reports)
    out["reports"] = reports
    return out
