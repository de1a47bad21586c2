"""Long-term-memory weights from word-association norms.

Two input layouts are accepted, detected from the header row:

* raw SWOW-style responses: one row per participant and cue, columns
  ``cue, R1, R2, R3`` (other columns ignored);
* an aggregated edge list: ``cue, response, strength``.

Edges become binary item-level links, which expand to column-level
connections: every column of the cue item feeds the D2 head of every
column of the response item.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .encoder import ConfigurationError, Vocabulary, normalize_token

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MISSING = {"", "na", "nan", "no more responses", "unknown word", "x"}


class LtmLoadError(RuntimeError):
    pass


@dataclass(frozen=True)
class LtmGraph:
    edges: dict[tuple[str, str], float]
    mode: str = "R123"
    skipped_rows: int = 0

    @property
    def nodes(self) -> set[str]:
        return {t for e in self.edges for t in e}

    def out_strength(self, cue: str) -> float:
        return sum(s for (c, _), s in self.edges.items() if c == cue)

    def __len__(self):
        return len(self.edges)

    def above(self, min_strength: float) -> "LtmGraph":
        """The same graph with edges weaker than ``min_strength`` removed."""
        kept = {e: s for e, s in self.edges.items() if s >= min_strength}
        return LtmGraph(kept, self.mode, self.skipped_rows)


@dataclass(frozen=True)
class D2WeightMap:
    """Binary item-level links and their column-level expansion."""
    item_edges: frozenset  # of (cue_item, response_item)
    n_columns: int
    vocab_digest: str = ""
    dropped_edges: int = 0
    targets: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_items(cls, item_edges: Iterable[tuple[int, int]], vocab: Vocabulary,
                   dropped_edges: int = 0) -> "D2WeightMap":
        edges = frozenset((int(x), int(y)) for x, y in item_edges)
        targets: dict[int, set[int]] = defaultdict(set)
        for x, y in edges:
            ycols = vocab.column_assignment[y]
            for j in vocab.column_assignment[x]:
                targets[j].update(ycols)
        return cls(edges, vocab.n_columns, vocab.digest(), dropped_edges,
                   {j: frozenset(ks) for j, ks in targets.items()})

    @property
    def m(self) -> int:
        """Item-level edge count."""
        return len(self.item_edges)

    @property
    def n_connections(self) -> int:
        """Column-level connection count."""
        return sum(len(ks) for ks in self.targets.values())

    def column_pairs(self) -> set[tuple[int, int]]:
        return {(j, k) for j, ks in self.targets.items() for k in ks}

    def source_counts(self, prev_columns: Iterable[int], columns: Iterable[int]) -> dict[int, int]:
        """For each column in ``columns``: how many of ``prev_columns`` link to its D2 head."""
        cols = set(columns)
        counts: dict[int, int] = {}
        for j in prev_columns:
            ks = self.targets.get(j)
            if not ks:
                continue
            for k in ks & cols if len(ks) > len(cols) else (k for k in ks if k in cols):
                counts[k] = counts.get(k, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "format": "seqmem.d2map",
            "version": FORMAT_VERSION,
            "n_columns": self.n_columns,
            "vocab_digest": self.vocab_digest,
            "dropped_edges": self.dropped_edges,
            "edges": sorted([list(e) for e in self.item_edges]),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary) -> "D2WeightMap":
        d = json.loads(Path(path).read_text())
        if d.get("format") != "seqmem.d2map" or d.get("version") != FORMAT_VERSION:
            raise LtmLoadError("not a D2 weight map checkpoint (or wrong version)")
        if d["vocab_digest"] != vocab.digest():
            raise LtmLoadError("checkpoint was built for a different vocabulary")
        return cls.from_items([tuple(e) for e in d["edges"]], vocab, d.get("dropped_edges", 0))


def empty_map(vocab: Vocabulary) -> D2WeightMap:
    return D2WeightMap.from_items((), vocab)


def _sniff(header: list[str]) -> str:
    h = [c.strip().lower() for c in header]
    if "cue" in h and {"r1", "r2", "r3"} <= set(h):
        return "raw"
    if "cue" in h and "response" in h and "strength" in h:
        return "edges"
    raise LtmLoadError(f"unrecognised header: {header}")


def _clean(tok: str) -> str | None:
    t = normalize_token(tok)
    if t in _MISSING or " " in t:
        return None
    return t


def load_swow(path: str | Path | None = None, mode: str = "R123",
              min_strength: float = 0.01) -> LtmGraph:
    """Read a WAN file into a normalised directed graph.

    Raw files are aggregated per cue: strength = response count / all
    responses of that cue (R1 only, or R1-R3 pooled). Edge lists are
    renormalised if a cue's out-strengths exceed 1. Self-loops are dropped
    and edges below ``min_strength`` removed.
    """
    mode = mode.upper()
    if mode not in ("R1", "R123"):
        raise ConfigurationError(f"mode must be R1 or R123, not {mode}")
    if path is None:
        text = resources.files("seqmem.data").joinpath("mini_wan.csv").read_text(encoding="utf-8")
        src = "mini_wan.csv"
        lines = text.splitlines()
    else:
        p = Path(path)
        if not p.exists():
            raise LtmLoadError(f"no such file: {p}")
        src = str(p)
        lines = p.read_text(encoding="utf-8").splitlines()
    rows = csv.reader(ln for ln in lines if not ln.lstrip().startswith("#"))
    try:
        header = next(rows)
    except StopIteration:
        raise LtmLoadError(f"{src}: empty file") from None
    kind = _sniff(header)
    idx = {c.strip().lower(): i for i, c in enumerate(header)}
    skipped = 0
    raw: dict[str, dict[str, float]] = defaultdict(dict)

    if kind == "raw":
        cols = ["r1"] if mode == "R1" else ["r1", "r2", "r3"]
        counts: dict[str, Counter] = defaultdict(Counter)
        totals: Counter = Counter()
        for row in rows:
            if len(row) < len(header):
                skipped += 1
                continue
            cue = _clean(row[idx["cue"]])
            if cue is None:
                skipped += 1
                continue
            for c in cols:
                r = _clean(row[idx[c]])
                if r is None:
                    continue
                totals[cue] += 1
                counts[cue][r] += 1
        for cue, cnt in counts.items():
            for r, k in cnt.items():
                raw[cue][r] = k / totals[cue]
    else:
        for row in rows:
            try:
                cue = _clean(row[idx["cue"]])
                r = _clean(row[idx["response"]])
                s = float(row[idx["strength"]])
            except (IndexError, ValueError):
                skipped += 1
                continue
            if cue is None or r is None or not s > 0:
                skipped += 1
                continue
            raw[cue][r] = raw[cue].get(r, 0.0) + s
        for cue, outs in raw.items():
            tot = sum(outs.values())
            if tot > 1.0:
                for r in outs:
                    outs[r] /= tot

    if skipped:
        log.warning("%s: skipped %d malformed rows", src, skipped)
    edges = {}
    for cue, outs in raw.items():
        for r, s in outs.items():
            if r != cue and s >= min_strength:
                edges[(cue, r)] = s
    if not edges:
        raise LtmLoadError(f"{src}: no edges at min_strength={min_strength}")
    return LtmGraph(edges, mode, skipped)


SENSITIVITY_THRESHOLDS = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2)


def threshold_sensitivity(graph: LtmGraph, vocab: Vocabulary,
                          thresholds: Iterable[float] = SENSITIVITY_THRESHOLDS) -> dict[str, int]:
    """In-vocabulary binary edge count at each binarisation threshold."""
    out = {}
    for t in sorted(set(thresholds)):
        out[f"{t:g}"] = len({(c, r) for (c, r), s in graph.edges.items()
                             if s >= t and c in vocab and r in vocab})
    return out


def binarize(graph: LtmGraph, vocab: Vocabulary) -> D2WeightMap:
    """Keep edges whose both ends are vocabulary words; duplicates collapse."""
    items = set()
    dropped = 0
    for cue, resp in graph.edges:
        if cue in vocab and resp in vocab:
            items.add((vocab.code(cue), vocab.code(resp)))
        else:
            dropped += 1
    if not items:
        log.warning("no LTM edge lies inside the vocabulary")
    return D2WeightMap.from_items(items, vocab, dropped)


def make_random_control(m: int, vocab: Vocabulary, seed: int = 0) -> D2WeightMap:
    """``m`` distinct random ordered word pairs (x != y), expanded like real LTM edges."""
    words = vocab.word_items
    n = len(words)
    possible = n * (n - 1)
    if m > possible:
        raise ConfigurationError(f"m={m} exceeds the {possible} possible ordered pairs")
    rng = np.random.default_rng(seed)
    flat = rng.choice(possible, size=m, replace=False) if m else np.empty(0, dtype=int)
    pairs = []
    for f in sorted(int(v) for v in flat):
        i, r = divmod(f, n - 1)
        j = r if r < i else r + 1
        pairs.append((words[i], words[j]))
    return D2WeightMap.from_items(pairs, vocab)
