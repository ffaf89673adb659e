"""Command-line entry point: ``uplme {train,eval,noise-demo,sweep,make-synthetic}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .data import DatasetSchema, find_split_files, load_dataset, load_split, make_synthetic_splits, write_dataset
from .errors import CheckpointError, ConfigError, DatasetError, InvalidInputError, NonFiniteLossError
from .experiments import (
    SearchSpace,
    noise_experiment,
    random_sweep,
    train_seeds,
    write_manifest,
    write_noise_analysis,
    write_records,
)
from .model import load_checkpoint
from .trainer import TrainConfig, evaluate_split

log = logging.getLogger("uplme")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4, 5


def _seeds(raw: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad seed list {raw!r}") from None
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def _floats(raw: str) -> tuple:
    try:
        return tuple(float(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad number list {raw!r}") from None


def resolve_config(args) -> cfgmod.ExperimentConfig:
    """Config file (if any) overlaid with command-line flags."""
    config = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    overrides = {}
    if getattr(args, "T", None) is not None:
        overrides["T"] = args.T
    if getattr(args, "no_mc_dropout", False):
        overrides["mc_dropout"] = False
    if getattr(args, "mean_reduce_nll", False):
        overrides["reduction"] = "mean"
    if getattr(args, "seeds", None):
        overrides["seeds"] = _seeds(args.seeds)
    if overrides:
        config = cfgmod.from_mapping(overrides, config)
    return config


def _load_data(args, config: cfgmod.ExperimentConfig):
    schema = DatasetSchema(config.label_min, config.label_max)
    return load_dataset(args.data_dir, schema)


def _prepare_out_dir(path) -> Path:
    out = Path(path)
    if out.exists() and (out / "manifest.json").exists():
        raise ConfigError(f"{out} already holds a run; choose a fresh --out-dir")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> Path:
    config = resolve_config(args)
    files = find_split_files(args.data_dir)
    splits = _load_data(args, config)
    out = _prepare_out_dir(args.out_dir)
    write_manifest(out, "train", config, config.train.seeds, files)
    (out / "config.txt").write_text(cfgmod.dumps(config), encoding="utf-8")
    train_seeds(splits, config, config.train.seeds, out)
    print((out / "summary.txt").read_text(), end="")
    return out


def cmd_eval(args) -> Path:
    model, meta = load_checkpoint(args.checkpoint)
    bounds = (meta.get("label_min"), meta.get("label_max"))
    split = load_split(args.split, *bounds)
    T = args.T if args.T is not None else meta.get("T", 4)
    seed = args.seed if args.seed is not None else meta.get("seed", 0)
    mc = (not args.no_mc_dropout) and meta.get("mc_dropout", True)
    tcfg = TrainConfig(batch_size=meta.get("batch_size", 16), T=T, mc_dropout=mc)
    report, records = evaluate_split(model, split, T, tcfg, seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    write_records(out / "records.csv", records)
    print(report.to_text(), end="")
    return out


def cmd_noise_demo(args) -> Path:
    config = resolve_config(args)
    files = find_split_files(args.data_dir)
    splits = _load_data(args, config)
    out = _prepare_out_dir(args.out_dir)
    seed = args.seed if args.seed is not None else config.train.seeds[0]
    write_manifest(out, "noise-demo", config, [seed], files,
                   noise_fraction=args.noise_fraction, noise_shift=args.noise_shift)
    (out / "config.txt").write_text(cfgmod.dumps(config), encoding="utf-8")
    analysis = noise_experiment(splits, config, args.noise_fraction, args.noise_shift, seed)
    write_noise_analysis(out, analysis, svg=args.svg)
    print(analysis.to_text(), end="")
    return out


def cmd_sweep(args) -> Path:
    config = resolve_config(args)
    space = SearchSpace(_floats(args.alpha_choices), _floats(args.lambda1_range), _floats(args.lambda2_range))
    space.validate()
    files = find_split_files(args.data_dir)
    splits = _load_data(args, config)
    out = _prepare_out_dir(args.out_dir)
    write_manifest(out, "sweep", config, config.train.seeds[:1], files, trials=args.trials,
                   sweep_seed=args.seed, search_space=dataclasses.asdict(space), prune=args.prune)
    result = random_sweep(splits, config, space, args.trials, args.seed, prune=args.prune, out_dir=out)
    print(f"best trial {result.best['trial']}: alpha={result.best['alpha']} "
          f"lambda1={result.best['lambda1']:.6g} lambda2={result.best['lambda2']:.6g} "
          f"val_ccc={result.best['val_ccc']:.6g}")
    return out


def cmd_make_synthetic(args) -> Path:
    splits = make_synthetic_splits(args.n_train, args.n_val, args.n_test, seed=args.seed)
    write_dataset(args.out_dir, splits)
    print(f"wrote synthetic dataset to {args.out_dir}")
    return Path(args.out_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uplme", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="flat key=value config file")
        if data:
            p.add_argument("--data-dir", required=True, help="directory with *train/validation/test.tsv")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--T", type=int, help="stochastic passes per ensemble")
        p.add_argument("--no-mc-dropout", action="store_true", help="deterministic evaluation (baseline mode)")
        p.add_argument("--mean-reduce-nll", action="store_true", help="mean instead of sum reduction for the NLL")

    p = sub.add_parser("train", help="train one model per seed and aggregate median/peak")
    common(p)
    p.add_argument("--seeds", help="comma-separated seeds (default 0,42,100)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--T", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-mc-dropout", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-demo", help="label-noise injection and uncertainty separation")
    common(p)
    p.add_argument("--noise-fraction", type=float, default=0.30)
    p.add_argument("--noise-shift", type=float, default=3.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--svg", action="store_true", help="also render panels.svg")
    p.set_defaults(func=cmd_noise_demo)

    p = sub.add_parser("sweep", help="seeded random search over alpha, lambda1, lambda2")
    common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", help="training seed (first entry used)")
    p.add_argument("--alpha-choices", default="1.0,1.5")
    p.add_argument("--lambda1-range", default="0,50")
    p.add_argument("--lambda2-range", default="0,50")
    p.add_argument("--prune", action="store_true", help="median pruning at epoch 5")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("make-synthetic", help="write the synthetic pair-regression benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-val", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
