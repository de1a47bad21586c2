"""Learning phase, rehearsal with repetition and fatigue, noise and decay.

A backend turns one presented column set into activity and learning. Two
backends share the same temporal-memory store: :class:`DiscreteBackend`
below and the spiking one in :mod:`seqmem.spiking`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .encoder import ConfigurationError, Vocabulary, make_noise_word
from .ltm import D2WeightMap
from .metrics import UNDEFINED, accuracy, mean_defined
from .temporal_memory import SegmentStore, TemporalMemory

NOISE_ID = "NOISE"


@dataclass(frozen=True)
class SequenceCorpus:
    names: tuple[str, ...]
    sequences: tuple[tuple[int, ...], ...]  # item codes, start item first
    vocab: Vocabulary

    def __post_init__(self):
        if len(self.names) != len(self.sequences):
            raise ConfigurationError("names and sequences differ in length")

    def __len__(self):
        return len(self.sequences)

    def columns(self, i: int) -> list[frozenset]:
        cols = self.vocab.column_assignment
        return [frozenset(cols[item]) for item in self.sequences[i]]

    def tokens(self, i: int) -> list[str]:
        return [self.vocab.token(c) for c in self.sequences[i]]


@dataclass
class ProtocolParams:
    learn_epochs: int = 5
    rehearsal_epochs: int = 20
    q: float = 0.7
    tau_rehearsal: float | None = None  # None: the connected threshold
    i_fatigue: int = 3
    rho: float = 1e-7
    noise_prob: float = 0.0
    seconds_per_step: float = 1.0
    noise_b: int = 6
    noise_min_len: int = 7
    noise_max_len: int = 13
    max_repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.q <= 1:
            raise ConfigurationError("q must lie in [0, 1]")
        if not 0 <= self.noise_prob < 1:
            raise ConfigurationError("noise_prob must lie in [0, 1)")
        if self.rho < 0 or self.seconds_per_step < 0:
            raise ConfigurationError("rho and seconds_per_step must be >= 0")
        if self.i_fatigue < 1:
            raise ConfigurationError("i_fatigue must be >= 1")
        if self.learn_epochs < 0 or self.rehearsal_epochs < 0:
            raise ConfigurationError("epoch counts must be >= 0")
        if not 1 <= self.noise_min_len <= self.noise_max_len:
            raise ConfigurationError("bad noise length range")
        if self.max_repeats < 0:
            raise ConfigurationError("max_repeats must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Presentation:
    active_cells: frozenset
    predicted_columns: frozenset  # columns predicted before this pattern
    l_gate: bool


class Backend(Protocol):
    tm: TemporalMemory

    def reset(self) -> None: ...

    def present(self, columns: frozenset, learn: bool = True) -> Presentation: ...

    def snapshot(self): ...

    def restore(self, snap) -> None: ...


class DiscreteBackend:
    """Step-wise temporal memory with an LTM-driven l-gate.

    The gate opens when some presented column receives LTM input from at
    least ``d2_min_sources`` of the previously presented columns.
    """

    def __init__(self, tm: TemporalMemory, d2map: D2WeightMap | None = None,
                 d2_min_sources: int = 3):
        if d2_min_sources < 1:
            raise ConfigurationError("d2_min_sources must be >= 1")
        self.tm = tm
        self.d2map = d2map
        self.d2_min_sources = d2_min_sources
        self.prev_columns: frozenset = frozenset()

    @property
    def store(self) -> SegmentStore:
        return self.tm.store

    def reset(self) -> None:
        self.tm.reset()
        self.prev_columns = frozenset()

    def l_gate(self, columns: frozenset) -> bool:
        if self.d2map is None or not self.prev_columns:
            return False
        counts = self.d2map.source_counts(self.prev_columns, columns)
        return any(k >= self.d2_min_sources for k in counts.values())

    def present(self, columns: frozenset, learn: bool = True) -> Presentation:
        gate = self.l_gate(columns)
        res = self.tm.step(columns, learn=learn, l_gate=gate)
        self.prev_columns = frozenset(columns)
        return Presentation(res.state.active_cells, res.predicted_columns_prev, gate)

    def snapshot(self):
        return (self.tm.snapshot(), self.prev_columns)

    def restore(self, snap) -> None:
        tm_snap, self.prev_columns = snap
        self.tm.restore(tm_snap)


def apply_decay(store: SegmentStore, elapsed: float, rho: float) -> None:
    """Linear decay of every permanence by ``rho * elapsed``."""
    if rho < 0:
        raise ConfigurationError("rho must be >= 0")
    store.decay(rho * elapsed)


def measure_p_c_learned(store: SegmentStore, prev_cells, cur_columns) -> float:
    """How well the transition into ``cur_columns`` is stored, in context.

    ``prev_cells`` are the cells active on the previous step, so a repeated
    word is judged by the link from its current context, not from any
    context. For each current column: the largest permanence of any synapse
    from those cells onto a segment of that column. The pair value is the
    minimum over current columns (0 when nothing links them).
    """
    n = store.params.cells_per_column
    prev = set(prev_cells)
    clk = store.clock
    worst = math.inf
    for col in cur_columns:
        best = 0.0
        for cell in range(col * n, col * n + n):
            for seg in store.cell_segments[cell]:
                for c, a in seg.synapses.items():
                    if a - clk > best and c in prev:
                        best = a - clk
        worst = min(worst, best)
        if worst <= 0:
            return 0.0
    return 0.0 if worst is math.inf else min(worst, 1.0)


@dataclass
class TrainingRecord:
    index: int
    epoch: int
    phase: str
    seq_id: str
    step: int
    accuracy: float
    l_gate: bool
    repeat: bool = False
    decayed_synapses: int = 0


LOG_FIELDS = ["index", "epoch", "phase", "seq_id", "step", "accuracy", "l_gate", "repeat",
              "decayed_synapses"]


@dataclass
class TrainingLog:
    records: list[TrainingRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def scored(self) -> list[TrainingRecord]:
        """Records that count towards accuracy: real sequences, first presentations."""
        return [r for r in self.records
                if r.seq_id != NOISE_ID and not r.repeat and not math.isnan(r.accuracy)]

    def epoch_accuracy(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for r in self.scored():
            by_epoch.setdefault(r.epoch, []).append(r.accuracy)
        if not by_epoch:
            return []
        return [mean_defined(by_epoch.get(e, [])) for e in range(max(by_epoch) + 1)]

    def count_by(self, phase: str | None = None):
        """Counter of (seq_id, step) presentations, repeats included."""
        out: dict[tuple[str, int], int] = {}
        for r in self.records:
            if phase is None or r.phase == phase:
                key = (r.seq_id, r.step)
                out[key] = out.get(key, 0) + 1
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for r in self.records:
                w.writerow([r.index, r.epoch, r.phase, r.seq_id, r.step, repr(r.accuracy),
                            int(r.l_gate), int(r.repeat), r.decayed_synapses])


class Trainer:
    """Runs the presentation schedule on one backend and logs every pattern."""

    def __init__(self, backend: Backend, corpus: SequenceCorpus, params: ProtocolParams | None = None):
        if len(corpus) == 0:
            raise ConfigurationError("empty corpus")
        self.backend = backend
        self.corpus = corpus
        self.params = params or ProtocolParams()
        ss = np.random.SeedSequence(self.params.seed)
        order_ss, noise_ss, rep_ss = ss.spawn(3)
        self.order_rng = np.random.default_rng(order_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.repeat_rng = np.random.default_rng(rep_ss)
        self.log = TrainingLog()
        self.epoch = 0
        self.noise_draws = 0
        self.last_active: frozenset = frozenset()
        self.sequence_draws = 0
        self._removed_seen = backend.tm.store.removed_synapses
        self._seq_columns = [corpus.columns(i) for i in range(len(corpus))]

    @property
    def store(self) -> SegmentStore:
        return self.backend.tm.store

    @property
    def tau(self) -> float:
        p = self.params.tau_rehearsal
        return self.store.params.perm_connected if p is None else p

    # -- single presentations --------------------------------------------
    def _present(self, columns, phase, seq_id, step, repeat=False, learn=True, score=True):
        out = self.backend.present(columns, learn=learn)
        apply_decay(self.store, self.params.seconds_per_step, self.params.rho)
        acc = accuracy(columns, out.predicted_columns) if score and step > 0 else UNDEFINED
        removed = self.store.removed_synapses
        rec = TrainingRecord(len(self.log), self.epoch, phase, seq_id, step, acc, out.l_gate,
                             repeat, removed - self._removed_seen)
        self._removed_seen = removed
        self.log.records.append(rec)
        self.last_active = out.active_cells
        return rec

    def present_noise(self, phase: str) -> None:
        p = self.params
        rng = self.noise_rng
        length = int(rng.integers(p.noise_min_len, p.noise_max_len + 1))
        self.backend.reset()
        m = self.store.params.n_columns
        for k in range(length):
            sdr = make_noise_word(m, p.noise_b, rng)
            self._present(sdr.as_set(), phase, NOISE_ID, k)
        self.noise_draws += 1

    def _maybe_noise(self, phase: str) -> None:
        n = self.params.noise_prob
        if n <= 0:
            return
        while self.noise_rng.random() < n:
            self.present_noise(phase)

    def present_sequence(self, i: int, phase: str, rehearse: bool = False,
                         learn: bool = True, reset: bool = True) -> None:
        """Present sequence ``i`` once; in rehearsal, weak pairs may be repeated."""
        cols = self._seq_columns[i]
        name = self.corpus.names[i]
        if reset:
            self.backend.reset()
        self.sequence_draws += 1
        p = self.params
        for k, c in enumerate(cols):
            snap = self.backend.snapshot() if rehearse and k > 0 and p.q > 0 else None
            context = self.last_active
            self._present(c, phase, name, k, learn=learn)
            if snap is None:
                continue
            reps = 0
            while (reps < p.max_repeats
                   and measure_p_c_learned(self.store, context, c) < self.tau
                   and self.repeat_rng.random() < p.q):
                self.backend.restore(snap)
                self._present(c, phase, name, k, repeat=True, learn=learn)
                reps += 1

    # -- phases ------------------------------------------------------------
    def _order(self) -> list[int]:
        return [int(i) for i in self.order_rng.permutation(len(self.corpus))]

    def run_learning_phase(self, epochs: int | None = None) -> TrainingLog:
        epochs = self.params.learn_epochs if epochs is None else epochs
        for _ in range(epochs):
            for i in self._order():
                self._maybe_noise("learn")
                self.present_sequence(i, "learn")
            self.epoch += 1
        return self.log

    def run_rehearsal_phase(self, epochs: int | None = None) -> TrainingLog:
        epochs = self.params.rehearsal_epochs if epochs is None else epochs
        for _ in range(epochs):
            for i in self._order():
                for _it in range(self.params.i_fatigue):
                    self._maybe_noise("rehearse")
                    self.present_sequence(i, "rehearse", rehearse=True)
            self.epoch += 1
        return self.log

    def run(self) -> TrainingLog:
        self.run_learning_phase()
        self.run_rehearsal_phase()
        return self.log


def epochs_to_threshold(values: Sequence[float], threshold: float = 0.9) -> float | None:
    """Epochs needed to reach ``threshold``, interpolated between epoch means.

    Epoch ``e`` (0-based) counts as ``e + 1`` epochs of training. Between the
    last epoch below and the first at or above the threshold the crossing is
    placed by linear interpolation, which keeps ties between curves rare.
    """
    prev = None
    for e, v in enumerate(values):
        if math.isnan(v):
            continue
        if v >= threshold:
            if prev is None or e == 0:
                return float(e + 1)
            pe, pv = prev
            frac = (threshold - pv) / (v - pv)
            return float(pe + 1 + frac * (e - pe))
        prev = (e, v)
    return None
