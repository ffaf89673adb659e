"""Pair datasets: TSV I/O, tokenization, label-noise injection and augmentation."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DatasetError, InvalidInputError
from .model import CLS_ID, N_RESERVED, PAD_ID, SEP_ID, TokenizedPair, assemble_pair

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "text_a", "text_b", "score")
SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class ExamplePair:
    id: str
    text_a: str
    text_b: str
    score: float
    is_noisy: bool = False
    original_score: float | None = None


@dataclass
class DatasetSplits:
    train: list
    validation: list
    test: list
    label_min: float
    label_max: float

    def __iter__(self):
        return iter((self.train, self.validation, self.test))


@dataclass(frozen=True)
class DatasetSchema:
    """Label bounds; ``None`` means infer from the data."""

    label_min: float | None = None
    label_max: float | None = None


# tokenization

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class HashTokenizer:
    """Lowercased word/punctuation split hashed into ``vocab_size`` buckets.

    Ids 0-2 are reserved for PAD, CLS and SEP.  Hashing is keyed BLAKE2b so
    ids are stable across processes.
    """

    vocab_size: int = 4096
    hash_seed: int = 0
    cls_id: int = CLS_ID
    sep_id: int = SEP_ID
    pad_id: int = PAD_ID

    def words(self, text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def token_id(self, word: str) -> int:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8,
                                 key=self.hash_seed.to_bytes(8, "little")).digest()
        return N_RESERVED + int.from_bytes(digest, "little") % (self.vocab_size - N_RESERVED)

    def encode(self, text: str) -> list[int]:
        return [self.token_id(w) for w in self.words(text)]


def tokenize_pair(pair: ExamplePair, tokenizer=None, max_len: int = 256) -> TokenizedPair:
    """Encode both texts and lay them out as ``[CLS, a, SEP, SEP, b, SEP]``."""
    tokenizer = tokenizer or HashTokenizer()
    a, b = tokenizer.encode(pair.text_a), tokenizer.encode(pair.text_b)
    if not a or not b:
        raise InvalidInputError(f"pair {pair.id!r} has an empty text after tokenization")
    return assemble_pair(a, b, max_len, pair.id, tokenizer.cls_id, tokenizer.sep_id)


# file I/O

def _parse_bool(raw: str) -> bool:
    if raw.strip().lower() in ("1", "true", "yes"):
        return True
    if raw.strip().lower() in ("", "0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _read_rows(path: Path, problems: list) -> list[ExamplePair]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DatasetError(path, [(1, f"missing column(s): {', '.join(missing)}")])
        rows, seen = [], {}
        for lineno, rec in enumerate(reader, start=2):
            uid = rec["id"]
            try:
                score = float(rec["score"])
                if not math.isfinite(score):
                    raise ValueError
            except (TypeError, ValueError):
                problems.append((lineno, f"non-numeric score {rec['score']!r}"))
                continue
            if uid in seen:
                problems.append((lineno, f"duplicate id {uid!r} (first at row {seen[uid]})"))
                continue
            seen[uid] = lineno
            try:
                noisy = _parse_bool(rec.get("is_noisy") or "")
                raw_orig = rec.get("original_score") or ""
                orig = float(raw_orig) if raw_orig.strip() else None
            except ValueError as exc:
                problems.append((lineno, str(exc)))
                continue
            if rec["text_a"] is None or rec["text_b"] is None:
                problems.append((lineno, "too few fields"))
                continue
            rows.append(ExamplePair(uid, rec["text_a"], rec["text_b"], score, noisy, orig))
    return rows


def load_split(path, label_min: float | None = None, label_max: float | None = None) -> list[ExamplePair]:
    """Read one TSV split, rejecting the whole file if any row is malformed."""
    path = Path(path)
    problems: list = []
    rows = _read_rows(path, problems)
    if label_min is not None and label_max is not None:
        problems += _range_problems(rows, label_min, label_max)
    if problems:
        raise DatasetError(path, problems)
    return rows


def _range_problems(rows, lo, hi):
    # data rows start on line 2
    return [(i + 2, f"score {r.score} of {r.id!r} outside [{lo}, {hi}]")
            for i, r in enumerate(rows) if not lo <= r.score <= hi]


def find_split_files(data_dir) -> dict:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {data_dir}")
    found = {}
    for name in SPLIT_NAMES:
        matches = sorted(data_dir.glob(f"*{name}.tsv"))
        if len(matches) != 1:
            raise FileNotFoundError(f"expected exactly one *{name}.tsv in {data_dir}, found {len(matches)}")
        found[name] = matches[0]
    return found


def load_dataset(data_dir, schema: DatasetSchema | None = None) -> DatasetSplits:
    """Load ``*train.tsv``, ``*validation.tsv`` and ``*test.tsv`` from a directory."""
    schema = schema or DatasetSchema()
    files = find_split_files(data_dir)
    splits = {name: load_split(path) for name, path in files.items()}
    all_scores = [r.score for rows in splits.values() for r in rows]
    if not all_scores:
        raise DatasetError(data_dir, [(0, "no rows")])
    lo = schema.label_min if schema.label_min is not None else min(all_scores)
    hi = schema.label_max if schema.label_max is not None else max(all_scores)
    if not hi > lo:
        raise DatasetError(data_dir, [(0, f"degenerate label bounds [{lo}, {hi}]")])
    for name, rows in splits.items():
        problems = _range_problems(rows, lo, hi)
        if problems:
            raise DatasetError(files[name], problems)
    owner: dict = {}
    for name, rows in splits.items():
        for r in rows:
            if r.id in owner:
                raise DatasetError(files[name], [(0, f"id {r.id!r} also appears in split {owner[r.id]!r}")])
            owner[r.id] = name
    return DatasetSplits(splits["train"], splits["validation"], splits["test"], float(lo), float(hi))


def write_split(path, rows: Iterable[ExamplePair], with_noise: bool | None = None) -> Path:
    """Write rows as TSV; noise columns are added when any row carries them."""
    rows = list(rows)
    path = Path(path)
    if with_noise is None:
        with_noise = any(r.is_noisy or r.original_score is not None for r in rows)
    cols = list(REQUIRED_COLUMNS) + (["is_noisy", "original_score"] if with_noise else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(cols)
        for r in rows:
            rec = [r.id, r.text_a, r.text_b, repr(float(r.score))]
            if with_noise:
                rec += [str(r.is_noisy).lower(), "" if r.original_score is None else repr(float(r.original_score))]
            writer.writerow(rec)
    return path


def write_dataset(data_dir, splits: DatasetSplits, prefix: str = "") -> dict:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    return {name: write_split(data_dir / f"{prefix}{name}.tsv", rows)
            for name, rows in zip(SPLIT_NAMES, splits)}


# label noise

def inject_noise(split: Sequence[ExamplePair], fraction: float = 0.30, shift: float = 3.0,
                 bounds: tuple = (1.0, 7.0), seed: int = 0) -> list[ExamplePair]:
    """Shift the labels of a seeded random ``floor(fraction * N)`` subset.

    Each chosen label moves up by ``shift`` when that stays within bounds and
    down otherwise.
    """
    lo, hi = bounds
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"fraction must lie in [0, 1], got {fraction}")
    if not shift > 0:
        raise InvalidInputError(f"shift must be > 0, got {shift}")
    if shift > hi - lo:
        raise InvalidInputError(f"shift {shift} exceeds the label span [{lo}, {hi}]")
    out = list(split)
    k = math.floor(fraction * len(out))
    if k == 0:
        return out
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(out), size=k, replace=False)
    for i in sorted(int(j) for j in chosen):
        pair = out[i]
        if pair.score + shift <= hi:
            new = pair.score + shift
        elif pair.score - shift >= lo:
            new = pair.score - shift
        else:
            raise InvalidInputError(f"no in-range shifted label for {pair.id!r} (score {pair.score})")
        out[i] = replace(pair, score=new, is_noisy=True, original_score=pair.score)
    return out


# augmentation

Augmenter = Callable[[str, float, np.random.Generator], str]


def dropout_swap_augmenter(text: str, rate: float, rng: np.random.Generator) -> str:
    """Perturb roughly ``rate`` of the words: each hit is dropped or swapped with a neighbour."""
    words = text.split()
    if len(words) < 2 or rate <= 0:
        return text
    n_hits = max(1, int(round(rate * len(words))))
    hits = rng.choice(len(words), size=min(n_hits, len(words)), replace=False)
    drop = set()
    for i in sorted(int(h) for h in hits):
        if rng.random() < 0.5 and len(words) - len(drop) > 1:
            drop.add(i)
        else:
            j = i + 1 if i + 1 < len(words) else i - 1
            words[i], words[j] = words[j], words[i]
    return " ".join(w for i, w in enumerate(words) if i not in drop)


def augment(split: Sequence[ExamplePair], augmenter: Augmenter | None = None, rate: float = 0.10,
            seed: int = 0) -> list[ExamplePair]:
    """Append one augmented copy of every sample, labels unchanged."""
    augmenter = augmenter or dropout_swap_augmenter
    out = list(split)
    for i, pair in enumerate(split):
        rng = np.random.default_rng([seed, i])
        try:
            a = augmenter(pair.text_a, rate, rng)
            b = augmenter(pair.text_b, rate, rng)
        except Exception as exc:
            raise InvalidInputError(f"augmenter failed on {pair.id!r}: {exc}") from exc
        out.append(replace(pair, id=f"{pair.id}#aug", text_a=a, text_b=b))
    return out


# synthetic benchmark

def make_synthetic_pairs(n: int, seed: int, prefix: str, n_topics: int = 2, per_topic: int = 3,
                         len_a: int = 6, len_b: int = 6, n_filler: int = 200, filler_a: int = 3,
                         filler_b: int = 3, noise_sd: float = 0.2,
                         bounds: tuple = (1.0, 7.0)) -> list[ExamplePair]:
    """Pairs whose label is an affine function of topical agreement plus noise.

    ``text_a`` draws ``len_a`` words from one topic. ``text_b`` draws ``k``
    of its ``len_b`` topical words from the same topic and the rest from
    other topics, with ``k`` uniform on ``0..len_b``. Both texts also carry
    distinct filler words. The latent similarity is ``k / len_b``.
    """
    if n_topics < 2:
        raise InvalidInputError("need at least two topics")
    lo, hi = bounds
    rng = np.random.default_rng(seed)
    topics = [[f"t{t}w{j}" for j in range(per_topic)] for t in range(n_topics)]
    filler = [f"f{i:03d}" for i in range(n_filler)]
    rows = []
    for i in range(n):
        home = int(rng.integers(n_topics))
        others = [t for t in range(n_topics) if t != home]
        a = list(rng.choice(topics[home], len_a)) + list(rng.choice(filler, filler_a, replace=False))
        k = int(rng.integers(0, len_b + 1))
        b = list(rng.choice(topics[home], k))
        b += [rng.choice(topics[int(rng.choice(others))]) for _ in range(len_b - k)]
        b += list(rng.choice(filler, filler_b, replace=False))
        a, b = rng.permutation(a), rng.permutation(b)
        sim = k / len_b
        score = lo + 0.5 + (hi - lo - 1.0) * sim + rng.normal(0.0, noise_sd)
        score = float(np.clip(score, lo, hi))
        rows.append(ExamplePair(f"{prefix}-{i:05d}", " ".join(a), " ".join(b), score))
    return rows


def make_synthetic_splits(n_train: int = 1000, n_val: int = 200, n_test: int = 200,
                          seed: int = 0, **kwargs) -> DatasetSplits:
    bounds = kwargs.get("bounds", (1.0, 7.0))
    return DatasetSplits(
        train=make_synthetic_pairs(n_train, seed * 3 + 1, "train", **kwargs),
        validation=make_synthetic_pairs(n_val, seed * 3 + 2, "validation", **kwargs),
        test=make_synthetic_pairs(n_test, seed * 3 + 3, "test", **kwargs),
        label_min=float(bounds[0]),
        label_max=float(bounds[1]),
    )
