"""Save and reload a trained layer: segments, vocabulary, LTM map, RNG state.

The file is plain JSON. Permanences are stored as the store keeps them
(anchor values plus the shared decay clock), so a reload is bit-exact.
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import Vocabulary
from .ltm import D2WeightMap
from .temporal_memory import LearningParams, Segment, SegmentStore, TemporalMemory

FORMAT = "seqmem.checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    tm: TemporalMemory
    vocab: Vocabulary | None = None
    d2map: D2WeightMap | None = None
    meta: dict = field(default_factory=dict)


def store_to_dict(store: SegmentStore) -> dict:
    segs = sorted(store.segments.values(), key=lambda s: s.uid)
    return {
        "clock": store.clock,
        "next_uid": store.next_uid,
        "removed_synapses": store.removed_synapses,
        # [uid, cell, [[presyn, anchor], ...]]
        "segments": [[s.uid, s.cell, [[c, a] for c, a in sorted(s.synapses.items())]] for s in segs],
    }


def store_from_dict(d: dict, params: LearningParams) -> SegmentStore:
    store = SegmentStore(params)
    for uid, cell, syns in d["segments"]:
        if not 0 <= cell < store.n_cells:
            raise CheckpointError(f"segment {uid}: cell {cell} out of range")
        seg = Segment(int(uid), int(cell))
        store.segments[seg.uid] = seg
        store.cell_segments[seg.cell].append(seg)
        for c, a in syns:
            seg.synapses[int(c)] = float(a)
            store.presyn.setdefault(int(c), {})[seg.uid] = seg
    store.clock = float(d["clock"])
    store.next_uid = int(d["next_uid"])
    store.removed_synapses = int(d.get("removed_synapses", 0))
    return store


def to_dict(tm: TemporalMemory, vocab: Vocabulary | None = None,
            d2map: D2WeightMap | None = None, meta: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "params": tm.params.to_dict(),
        "gating": tm.gating,
        "rng": tm.rng.bit_generator.state,
        "store": store_to_dict(tm.store),
        "vocab": vocab.to_dict() if vocab is not None else None,
        "d2map": d2map.to_dict() if d2map is not None else None,
        "meta": meta or {},
    }


def from_dict(d: dict) -> Checkpoint:
    try:
        return _from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint: {type(e).__name__}: {e}") from None


def _from_dict(d: dict) -> Checkpoint:
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise CheckpointError("not a seqmem checkpoint")
    if d.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
    params = LearningParams(**d["params"])
    store = store_from_dict(d["store"], params)
    tm = TemporalMemory(params, store=store, gating=d.get("gating", True))
    rng = np.random.default_rng()
    rng.bit_generator.state = d["rng"]
    tm.rng = rng
    vocab = Vocabulary.from_dict(d["vocab"]) if d.get("vocab") else None
    d2 = None
    if d.get("d2map"):
        if vocab is None:
            raise CheckpointError("an LTM map needs the vocabulary it was built on")
        dm = d["d2map"]
        if dm["vocab_digest"] != vocab.digest():
            raise CheckpointError("LTM map was built for a different vocabulary")
        d2 = D2WeightMap.from_items([tuple(e) for e in dm["edges"]], vocab, dm.get("dropped_edges", 0))
    return Checkpoint(tm, vocab, d2, d.get("meta", {}))


def save(path: str | Path, tm: TemporalMemory, vocab: Vocabulary | None = None,
         d2map: D2WeightMap | None = None, meta: dict | None = None) -> Path:
    """Write a checkpoint; a ``.gz`` suffix compresses it."""
    return write_dict(path, to_dict(tm, vocab, d2map, meta))


def write_dict(path: str | Path, data: dict) -> Path:
    p = Path(path)
    text = json.dumps(data, separators=(",", ":"))
    if p.suffix == ".gz":
        # no name and mtime=0 keep the bytes independent of where and when it was written
        with open(p, "wb") as fh, gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(text.encode())
    else:
        p.write_text(text)
    return p


def read_dict(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"no such checkpoint: {p}")
    raw = p.read_bytes()
    try:
        if raw[:2] == b"\x1f\x8b":
            raw = gzip.decompress(raw)
        return json.loads(raw)
    except (OSError, EOFError, ValueError) as e:
        raise CheckpointError(f"{p}: unreadable checkpoint: {e}") from None


def load(path: str | Path) -> Checkpoint:
    return from_dict(read_dict(path))


def describe(data: dict) -> dict:
    """Summary statistics of a checkpoint dict, without rebuilding the layer."""
    try:
        return _describe(data)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint: {type(e).__name__}: {e}") from None


def _describe(data: dict) -> dict:
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise CheckpointError("not a seqmem checkpoint")
    st = data["store"]
    params = data["params"]
    clock = st["clock"]
    thr = params["perm_connected"]
    perms = np.array([a - clock for _, _, syns in st["segments"] for _, a in syns], dtype=float)
    perms = perms[perms > 0]
    hist, edges = np.histogram(perms, bins=10, range=(0.0, 1.0))
    cells = {cell for _, cell, _ in st["segments"]}
    vocab = data.get("vocab")
    d2 = data.get("d2map")
    return {
        "version": data["version"],
        "params": params,
        "gating": data.get("gating", True),
        "segments": len(st["segments"]),
        "cells_with_segments": len(cells),
        "synapses": int(perms.size),
        "connected_synapses": int((perms >= thr - 1e-9).sum()),
        "mean_permanence": float(perms.mean()) if perms.size else None,
        "permanence_histogram": {"edges": [round(float(e), 2) for e in edges],
                                 "counts": [int(c) for c in hist]},
        "decay_clock": clock,
        "vocabulary_items": len(vocab["entries"]) if vocab else None,
        "ltm_edges": len(d2["edges"]) if d2 else None,
        "meta": data.get("meta", {}),
    }
