"""End-to-end experiment drivers shared by the CLI and the acceptance suite.

Each driver writes into its own directory and never touches input files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import config as cfgmod
from .data import DatasetSplits, inject_noise, write_split
from .errors import ConfigError
from .metrics import MetricReport, _fmt, noise_separation_auroc, welch_t_test
from .model import PairRegressor, save_checkpoint
from .trainer import RunResult, aggregate_reports, train

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("id", "y", "original_score", "y_bar", "sigma2_bar", "is_noisy")


def write_manifest(out_dir: Path, command: str, config: cfgmod.ExperimentConfig, seeds: Sequence[int],
                   data_paths: dict, **extra) -> Path:
    """Write ``manifest.json`` once; an existing manifest is never overwritten."""
    manifest = {
        "command": command,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfgmod.to_mapping(config).items()},
        "seeds": list(seeds),
        "data": {k: str(v) for k, v in data_paths.items()},
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        **extra,
    }
    path = out_dir / "manifest.json"
    with open(path, "x", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def write_records(path: Path, records: Sequence[dict]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow([
                r["id"], _fmt(float(r["y"])),
                "" if r.get("original_score") is None else _fmt(float(r["original_score"])),
                _fmt(float(r["y_bar"])), _fmt(float(r["sigma2_bar"])), int(bool(r["is_noisy"])),
            ])
    return path


def write_epoch_log(path: Path, history: Sequence[MetricReport]) -> Path:
    cols = ["epoch", "step", "train_loss", "pcc", "scc", "ccc", "rmse", "cal", "shp", "nlpd"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for rep in history:
            d = rep.as_dict()
            fh.write("\t".join(_fmt(d.get(c, math.nan)) for c in cols) + "\n")
    return path


def new_model(config: cfgmod.ExperimentConfig, seed: int) -> PairRegressor:
    return PairRegressor(config.encoder, seed=seed)


def save_run(run_dir: Path, result: RunResult, model: PairRegressor, config: cfgmod.ExperimentConfig,
             bounds: tuple) -> None:
    """Per-seed directory: epoch log, best checkpoint, test report and records."""
    run_dir.mkdir(parents=True, exist_ok=True)
    write_epoch_log(run_dir / "epochs.tsv", result.history)
    meta = {
        "seed": result.seed,
        "T": config.train.T,
        "mc_dropout": config.train.mc_dropout,
        "batch_size": config.train.batch_size,
        "label_min": bounds[0],
        "label_max": bounds[1],
        "best_epoch": result.best_epoch,
        "best_val_ccc": result.best_val_ccc,
    }
    save_checkpoint(run_dir / "checkpoint.npz", model, meta)
    if result.test_report is not None:
        (run_dir / "report.txt").write_text(result.test_report.to_text(), encoding="utf-8")
        write_records(run_dir / "test_records.csv", result.test_records)


def summary_text(summary: dict) -> str:
    lines = ["metric\tmedian\tpeak"]
    for name in summary["median"]:
        lines.append(f"{name}\t{_fmt(summary['median'][name])}\t{_fmt(summary['peak'][name])}")
    return "\n".join(lines) + "\n"


def summary_record(summary: dict) -> str:
    lines = []
    for kind in ("median", "peak"):
        for name, value in summary[kind].items():
            lines.append(f"{kind}_{name}={_fmt(value)}")
    return "\n".join(lines) + "\n"


def train_seeds(splits: DatasetSplits, config: cfgmod.ExperimentConfig, seeds: Sequence[int],
                out_dir: Path | None = None) -> dict:
    """Train once per seed and aggregate the test reports into median/peak."""
    bounds = (splits.label_min, splits.label_max)
    results = []
    for seed in seeds:
        model = new_model(config, seed)
        result = train(splits.train, splits.validation, config.train, model, bounds, seed=seed,
                       test_split=splits.test)
        if out_dir is not None:
            save_run(out_dir / f"seed_{seed}", result, model, config, bounds)
        results.append(result)
    summary = aggregate_reports([r.test_report for r in results])
    if out_dir is not None:
        (out_dir / "summary.txt").write_text(summary_text(summary), encoding="utf-8")
        (out_dir / "report.txt").write_text(summary_record(summary), encoding="utf-8")
    return {"results": results, **summary}


# noise experiment

@dataclass
class NoiseAnalysis:
    auroc: float | None
    mean_sigma2_noisy: float | None
    mean_sigma2_clean: float | None
    n_noisy: int
    n_clean: int
    records: list
    run: RunResult
    welch: dict | None = None
    noisy_train: list = field(default_factory=list)
    model: PairRegressor | None = None

    def to_text(self) -> str:
        rows = {
            "auroc": "n/a" if self.auroc is None else _fmt(self.auroc),
            "mean_sigma2_noisy": "n/a" if self.mean_sigma2_noisy is None else _fmt(self.mean_sigma2_noisy),
            "mean_sigma2_clean": "n/a" if self.mean_sigma2_clean is None else _fmt(self.mean_sigma2_clean),
            "n_noisy": str(self.n_noisy),
            "n_clean": str(self.n_clean),
        }
        if self.welch is not None:
            rows["welch_t"] = _fmt(self.welch["t"])
            rows["welch_p"] = _fmt(self.welch["p"])
        if self.run.test_report is not None:
            for k in ("pcc", "ccc", "scc", "rmse"):
                rows[f"test_{k}"] = _fmt(getattr(self.run.test_report, k))
        return "".join(f"{k}={v}\n" for k, v in rows.items())


def noise_experiment(splits: DatasetSplits, config: cfgmod.ExperimentConfig, fraction: float = 0.30,
                     shift: float = 3.0, seed: int = 0) -> NoiseAnalysis:
    """Corrupt the training labels, train, then score uncertainty on the noisy training set."""
    from .trainer import evaluate_split

    bounds = (splits.label_min, splits.label_max)
    noisy_train = inject_noise(splits.train, fraction, shift, bounds, seed=seed)
    model = new_model(config, seed)
    run = train(noisy_train, splits.validation, config.train, model, bounds, seed=seed, test_split=splits.test)
    _, records = evaluate_split(model, noisy_train, config.train.T, config.train, seed)
    s2 = np.array([r["sigma2_bar"] for r in records])
    flags = np.array([bool(r["is_noisy"]) for r in records])
    n_noisy = int(flags.sum())
    n_clean = len(flags) - n_noisy
    auroc = welch = m_noisy = m_clean = None
    if n_noisy and n_clean:
        auroc = noise_separation_auroc(s2[flags], s2[~flags])
        m_noisy, m_clean = float(s2[flags].mean()), float(s2[~flags].mean())
        if n_noisy >= 2 and n_clean >= 2:
            welch = welch_t_test(s2[flags], s2[~flags])
    return NoiseAnalysis(auroc, m_noisy, m_clean, n_noisy, n_clean, records, run, welch, noisy_train, model)


def write_noise_panels(out_dir: Path, records: Sequence[dict], bins: int = 20) -> dict:
    """CSV data behind the four diagnostic panels."""
    y = np.array([r["y"] for r in records])
    yb = np.array([r["y_bar"] for r in records])
    s2 = np.array([r["sigma2_bar"] for r in records])
    flag = np.array([int(bool(r["is_noisy"])) for r in records])
    ids = [r["id"] for r in records]
    paths = {}

    def _write(name, header, rows):
        path = out_dir / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths[name] = path

    _write("panel_error_vs_uncertainty", ["id", "abs_error", "sigma2_bar", "is_noisy"],
           [(i, _fmt(abs(a - b)), _fmt(s), f) for i, a, b, s, f in zip(ids, y, yb, s2, flag)])
    _write("panel_prediction_scatter", ["id", "y", "y_bar", "is_noisy"],
           [(i, _fmt(a), _fmt(b), f) for i, a, b, f in zip(ids, y, yb, flag)])
    edges = np.histogram_bin_edges(s2, bins=bins)
    hist_rows = []
    for subset, mask in (("noisy", flag == 1), ("clean", flag == 0)):
        counts, _ = np.histogram(s2[mask], bins=edges)
        hist_rows += [(subset, _fmt(lo), _fmt(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    _write("panel_uncertainty_hist", ["subset", "bin_lo", "bin_hi", "count"], hist_rows)
    _write("panel_uncertainty_by_flag", ["id", "is_noisy", "sigma2_bar"],
           [(i, f, _fmt(s)) for i, f, s in zip(ids, flag, s2)])
    return paths


def render_svg_panels(out_dir: Path, records: Sequence[dict]) -> Path | None:
    """Best-effort 2x2 SVG of the panels; returns None when matplotlib is unavailable."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping SVG panels")
        return None
    y = np.array([r["y"] for r in records])
    yb = np.array([r["y_bar"] for r in records])
    s2 = np.array([r["sigma2_bar"] for r in records])
    flag = np.array([bool(r["is_noisy"]) for r in records])
    fig, ax = plt.subplots(2, 2, figsize=(9, 7))
    ax[0, 0].scatter(np.abs(y - yb), s2, c=np.where(flag, "tab:red", "tab:blue"), s=6)
    ax[0, 0].set(xlabel="|y - y_bar|", ylabel="sigma2_bar")
    ax[0, 1].scatter(y, yb, c=np.where(flag, "tab:red", "tab:blue"), s=6)
    ax[0, 1].set(xlabel="label", ylabel="prediction")
    edges = np.histogram_bin_edges(s2, bins=20)
    ax[1, 0].hist([s2[flag], s2[~flag]], bins=edges, label=["noisy", "clean"])
    ax[1, 0].legend()
    ax[1, 0].set(xlabel="sigma2_bar")
    ax[1, 1].boxplot([s2[~flag], s2[flag]])
    ax[1, 1].set_xticks([1, 2], ["clean", "noisy"])
    ax[1, 1].set(ylabel="sigma2_bar")
    fig.tight_layout()
    path = out_dir / "panels.svg"
    fig.savefig(path)
    plt.close(fig)
    return path


def write_noise_analysis(out_dir: Path, analysis: NoiseAnalysis, svg: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_records(out_dir / "records.csv", analysis.records)
    write_split(out_dir / "noisy_train.tsv", analysis.noisy_train, with_noise=True)
    write_noise_panels(out_dir, analysis.records)
    (out_dir / "analysis.txt").write_text(analysis.to_text(), encoding="utf-8")
    write_epoch_log(out_dir / "epochs.tsv", analysis.run.history)
    if svg:
        render_svg_panels(out_dir, analysis.records)


# hyperparameter sweep

@dataclass(frozen=True)
class SearchSpace:
    alpha_choices: tuple = (1.0, 1.5)
    lambda1: tuple = (0.0, 50.0)
    lambda2: tuple = (0.0, 50.0)

    def validate(self) -> None:
        if not self.alpha_choices:
            raise ConfigError("search space has no alpha choices")
        if any(a <= 0 for a in self.alpha_choices):
            raise ConfigError("alpha choices must be > 0")
        for name in ("lambda1", "lambda2"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"empty or negative {name} range [{lo}, {hi}]")

    def sample(self, rng: np.random.Generator) -> dict:
        return {
            "alpha": float(self.alpha_choices[int(rng.integers(len(self.alpha_choices)))]),
            "lambda1": float(rng.uniform(*self.lambda1)),
            "lambda2": float(rng.uniform(*self.lambda2)),
        }


@dataclass
class SweepResult:
    trials: list = field(default_factory=list)
    best: dict | None = None
    best_config: cfgmod.ExperimentConfig | None = None


def random_sweep(splits: DatasetSplits, config: cfgmod.ExperimentConfig, space: SearchSpace | None = None,
                 trials: int = 100, seed: int = 0, prune: bool = False, prune_epoch: int = 5,
                 out_dir: Path | None = None) -> SweepResult:
    """Seeded uniform random search over (alpha, lambda1, lambda2) by best validation CCC.

    With ``prune`` a trial stops when its validation CCC at ``prune_epoch``
    falls below the median of completed trials at that epoch.
    """
    space = space or SearchSpace()
    space.validate()
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    bounds = (splits.label_min, splits.label_max)
    train_seed = config.train.seeds[0]
    result = SweepResult()
    at_prune_epoch: list[float] = []
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "trials.tsv", "w", encoding="utf-8")
        log_fh.write("trial\talpha\tlambda1\tlambda2\tval_ccc\tbest_epoch\tpruned\n")
    try:
        for k in range(trials):
            params = space.sample(rng)
            weights = dataclasses.replace(config.weights, **params)
            trial_cfg = dataclasses.replace(config, train=dataclasses.replace(config.train, weights=weights))

            def hook(epoch, report, _done=list(at_prune_epoch)):
                if not prune or epoch != prune_epoch or not _done:
                    return False
                return report.ccc < statistics.median(_done)

            model = new_model(trial_cfg, train_seed)
            run = train(splits.train, splits.validation, trial_cfg.train, model, bounds, seed=train_seed,
                        prune_hook=hook)
            if not run.pruned and len(run.history) >= prune_epoch:
                ccc_at = run.history[prune_epoch - 1].ccc
                if math.isfinite(ccc_at):
                    at_prune_epoch.append(ccc_at)
            trial = {"trial": k, **params, "val_ccc": run.best_val_ccc, "best_epoch": run.best_epoch,
                     "pruned": run.pruned}
            result.trials.append(trial)
            if log_fh is not None:
                log_fh.write("\t".join(_fmt(trial[c]) for c in
                                       ("trial", "alpha", "lambda1", "lambda2", "val_ccc", "best_epoch", "pruned")) + "\n")
                log_fh.flush()
            if not run.pruned and (result.best is None or trial["val_ccc"] > result.best["val_ccc"]):
                result.best, result.best_config = trial, trial_cfg
    finally:
        if log_fh is not None:
            log_fh.close()
    if result.best is None:
        # every trial pruned: fall back to the best pruned one
        result.best = max(result.trials, key=lambda t: t["val_ccc"])
        best_weights = dataclasses.replace(config.weights, alpha=result.best["alpha"],
                                           lambda1=result.best["lambda1"], lambda2=result.best["lambda2"])
        result.best_config = dataclasses.replace(config, train=dataclasses.replace(config.train, weights=best_weights))
    if out_dir is not None:
        (out_dir / "best_config.txt").write_text(cfgmod.dumps(result.best_config), encoding="utf-8")
    return result
