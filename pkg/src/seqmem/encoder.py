"""Item vocabulary and column-set (SDR) encoding.

Every item is a fixed random set of ``b`` columns out of ``M``. A reserved
start item marks the beginning of each sequence.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

START_TOKEN = "<start>"

log = logging.getLogger(__name__)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class ConfigurationError(ValueError):
    """Raised for invalid sizes, empty inputs and other bad settings."""


@dataclass(frozen=True)
class Sdr:
    active_columns: tuple[int, ...]
    width: int

    def __post_init__(self):
        cols = tuple(sorted(set(int(c) for c in self.active_columns)))
        if cols and (cols[0] < 0 or cols[-1] >= self.width):
            raise ValueError(f"column index out of range [0, {self.width})")
        object.__setattr__(self, "active_columns", cols)

    def __len__(self) -> int:
        return len(self.active_columns)

    def __iter__(self):
        return iter(self.active_columns)

    def as_set(self) -> frozenset[int]:
        return frozenset(self.active_columns)


@dataclass(frozen=True)
class Vocabulary:
    entries: dict[str, int]
    column_assignment: dict[int, tuple[int, ...]]
    start_item: int
    n_columns: int
    columns_per_item: int
    seed: int | None = None
    tokens: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tokens:
            object.__setattr__(self, "tokens", {c: t for t, c in self.entries.items()})

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def code(self, token: str) -> int:
        try:
            return self.entries[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def token(self, item: int) -> str:
        return self.tokens[item]

    @property
    def word_items(self) -> list[int]:
        """Item codes of real words (the start item excluded)."""
        return [c for c in sorted(self.tokens) if c != self.start_item]

    def digest(self) -> str:
        payload = json.dumps(
            {
                "M": self.n_columns,
                "items": [[t, list(self.column_assignment[c])] for t, c in sorted(self.entries.items())],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "n_columns": self.n_columns,
            "columns_per_item": self.columns_per_item,
            "seed": self.seed,
            "start_item": self.start_item,
            "entries": self.entries,
            "columns": {str(c): list(cols) for c, cols in self.column_assignment.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            entries={str(k): int(v) for k, v in d["entries"].items()},
            column_assignment={int(k): tuple(v) for k, v in d["columns"].items()},
            start_item=int(d["start_item"]),
            n_columns=int(d["n_columns"]),
            columns_per_item=int(d["columns_per_item"]),
            seed=d.get("seed"),
        )


def _random_columns(rng: np.random.Generator, n_columns: int, k: int) -> tuple[int, ...]:
    return tuple(sorted(int(c) for c in rng.choice(n_columns, size=k, replace=False)))


def build_vocabulary(tokens: Iterable[str], n_columns: int = 1024,
                     columns_per_item: int = 6, seed: int = 0) -> Vocabulary:
    """Assign every distinct token (plus the start item) a random column set.

    Codes are dense: the start item is 0, tokens follow in first-seen order.
    Identical column sets are re-drawn, so distinct items always differ,
    unless fewer than one distinct set per item exists (e.g. ``b == M``);
    then sharing is unavoidable and only logged.
    """
    tokens = list(tokens)
    if columns_per_item > n_columns:
        raise ConfigurationError(f"b={columns_per_item} exceeds M={n_columns}")
    if columns_per_item < 1:
        raise ConfigurationError("b must be at least 1")
    if not tokens:
        raise ConfigurationError("empty token list")

    ordered = [START_TOKEN]
    seen = {START_TOKEN}
    for tok in tokens:
        if tok not in seen:
            seen.add(tok)
            ordered.append(tok)

    distinct = math.comb(n_columns, columns_per_item) >= len(ordered)
    if not distinct:
        log.warning("only %d column sets for %d items; some items will share columns",
                    math.comb(n_columns, columns_per_item), len(ordered))
    rng = np.random.default_rng(seed)
    entries: dict[str, int] = {}
    assignment: dict[int, tuple[int, ...]] = {}
    used: set[tuple[int, ...]] = set()
    for code, tok in enumerate(ordered):
        cols = _random_columns(rng, n_columns, columns_per_item)
        tries = 0
        while distinct and cols in used:
            tries += 1
            if tries > 100_000:
                raise ConfigurationError("cannot draw distinct column sets; M too small")
            cols = _random_columns(rng, n_columns, columns_per_item)
        used.add(cols)
        entries[tok] = code
        assignment[code] = cols
    return Vocabulary(entries, assignment, entries[START_TOKEN], n_columns,
                      columns_per_item, seed)


def encode(vocab: Vocabulary, item: int) -> Sdr:
    try:
        cols = vocab.column_assignment[item]
    except KeyError:
        raise KeyError(f"unknown item code {item}") from None
    return Sdr(cols, vocab.n_columns)


def make_noise_word(n_columns: int, noise_b: int, rng: np.random.Generator) -> Sdr:
    if noise_b > n_columns:
        raise ConfigurationError(f"noise width {noise_b} exceeds M={n_columns}")
    return Sdr(_random_columns(rng, n_columns, noise_b), n_columns)


def normalize_token(tok: str) -> str:
    return tok.translate(_PUNCT_TABLE).lower().strip()


def tokenize_and_filter(text: str, stopwords: Iterable[str] = ()) -> list[str]:
    """Whitespace split, strip ASCII punctuation, lowercase, drop stopwords."""
    stop = set(stopwords)
    out = []
    for raw in text.split():
        tok = normalize_token(raw)
        if tok and tok not in stop:
            out.append(tok)
    return out


def read_token_file(path: str | Path) -> list[str]:
    """One token per line; blank lines and ``#`` comments ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return _parse_token_lines(lines)


def _parse_token_lines(lines):
    out = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line.lower())
    return out


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("seqmem.data").joinpath("stopwords.txt").read_text(encoding="utf-8")
        return frozenset(_parse_token_lines(text.splitlines()))
    return frozenset(read_token_file(path))


def read_corpus_lines(path: str | Path | None = None, name: str = "poems.txt") -> list[str]:
    """Corpus file: one sequence per line, ``#`` comment lines skipped."""
    if path is None:
        text = resources.files("seqmem.data").joinpath(name).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
