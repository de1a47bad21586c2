"""Discrete-step HTM sequence memory.

Cells are addressed by a flat id ``column * N + i``. Activity and prediction
are kept as sets of cell ids; :class:`LayerState` exposes them as M x N
binary matrices when needed.

Permanence decay is lazy: the store keeps a global decay clock and every
synapse stores ``anchor = permanence + clock_at_write``. The effective
permanence is ``anchor - clock``; anything at or below zero is dead and is
pruned when next touched.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from .encoder import ConfigurationError

EPS = 1e-9


@dataclass
class LearningParams:
    n_columns: int = 1024
    cells_per_column: int = 8
    theta: int = 3
    perm_connected: float = 0.5
    p_plus_high: float = 0.3
    p_plus_low: float = 0.05
    p_minus: float = 0.01
    p_punish: float = 0.005
    perm_init: float = 0.25
    min_match: int | None = None
    max_new_synapses: int = 20
    max_segments_per_cell: int = 32
    max_synapses_per_segment: int = 64

    def __post_init__(self):
        if self.min_match is None:
            self.min_match = math.ceil(self.theta / 2)
        self.validate()

    def validate(self) -> None:
        if self.n_columns < 1 or self.cells_per_column < 1:
            raise ConfigurationError("n_columns and cells_per_column must be positive")
        if not 0 < self.p_minus < self.p_plus_low <= self.p_plus_high <= 1:
            raise ConfigurationError("need 0 < p_minus < p_plus_low <= p_plus_high <= 1")
        if self.p_punish <= 0:
            raise ConfigurationError("p_punish must be positive")
        if not 0 < self.perm_connected < 1:
            raise ConfigurationError("perm_connected must lie in (0, 1)")
        if not 0 < self.perm_init <= 1:
            raise ConfigurationError("perm_init must lie in (0, 1]")
        if self.theta < 0:
            raise ConfigurationError("theta must be >= 0")
        if self.max_segments_per_cell < 1 or self.max_synapses_per_segment < 1:
            raise ConfigurationError("capacity limits must be positive")

    @property
    def n_cells(self) -> int:
        return self.n_columns * self.cells_per_column

    def to_dict(self) -> dict:
        return asdict(self)


class Segment:
    __slots__ = ("uid", "cell", "synapses")

    def __init__(self, uid: int, cell: int):
        self.uid = uid
        self.cell = cell
        self.synapses: dict[int, float] = {}  # presynaptic cell -> anchor

    def __repr__(self):
        return f"Segment(uid={self.uid}, cell={self.cell}, n={len(self.synapses)})"


class SegmentStore:
    """All distal segments of one layer, with a presynaptic reverse index."""

    def __init__(self, params: LearningParams):
        self.params = params
        self.n_cells = params.n_cells
        self.cell_segments: list[list[Segment]] = [[] for _ in range(self.n_cells)]
        self.segments: dict[int, Segment] = {}
        self.presyn: dict[int, dict[int, Segment]] = {}
        self.next_uid = 0
        self.clock = 0.0
        self.version = 0  # bumped whenever the connected view may have changed
        self.removed_synapses = 0  # running count of synapses that reached zero
        self._decays_since_sweep = 0

    # -- permanence access ------------------------------------------------
    def permanence(self, seg: Segment, presyn: int) -> float:
        a = seg.synapses.get(presyn)
        if a is None:
            return 0.0
        return max(0.0, a - self.clock)

    def permanences(self, seg: Segment) -> dict[int, float]:
        clk = self.clock
        return {c: a - clk for c, a in seg.synapses.items() if a - clk > 0}

    def is_connected(self, perm: float) -> bool:
        return perm >= self.params.perm_connected - EPS

    def connected(self, seg: Segment) -> set[int]:
        """Presynaptic cells of the binary (connected) view of ``seg``."""
        thr = self.params.perm_connected - EPS
        clk = self.clock
        return {c for c, a in seg.synapses.items() if a - clk >= thr}

    def set_permanence(self, seg: Segment, presyn: int, perm: float) -> None:
        perm = min(1.0, perm)
        old = self.permanence(seg, presyn)
        if self.is_connected(old) != self.is_connected(max(perm, 0.0)):
            self.version += 1
        if perm <= 0.0:
            self._remove_synapse(seg, presyn)
        else:
            if presyn not in seg.synapses:
                self.presyn.setdefault(presyn, {})[seg.uid] = seg
            seg.synapses[presyn] = perm + self.clock

    def _remove_synapse(self, seg: Segment, presyn: int) -> None:
        if seg.synapses.pop(presyn, None) is not None:
            self.removed_synapses += 1
            idx = self.presyn.get(presyn)
            if idx is not None:
                idx.pop(seg.uid, None)
                if not idx:
                    del self.presyn[presyn]

    # -- segment lifecycle ------------------------------------------------
    def create_segment(self, cell: int) -> Segment:
        segs = self.cell_segments[cell]
        if len(segs) >= self.params.max_segments_per_cell:
            weakest = min(segs, key=lambda s: (self.total_permanence(s), s.uid))
            self.destroy_segment(weakest)
        seg = Segment(self.next_uid, cell)
        self.next_uid += 1
        self.segments[seg.uid] = seg
        self.cell_segments[cell].append(seg)
        self.version += 1
        return seg

    def destroy_segment(self, seg: Segment) -> None:
        for presyn in list(seg.synapses):
            self._remove_synapse(seg, presyn)
        self.cell_segments[seg.cell].remove(seg)
        del self.segments[seg.uid]
        self.version += 1

    def total_permanence(self, seg: Segment) -> float:
        clk = self.clock
        return sum(max(0.0, a - clk) for a in seg.synapses.values())

    def num_synapses(self) -> int:
        return sum(len(s.synapses) for s in self.segments.values())

    def iter_segments(self) -> Iterable[Segment]:
        return iter(self.segments.values())

    # -- decay ------------------------------------------------------------
    def decay(self, amount: float) -> None:
        """Linear decay of every permanence by ``amount`` (clamped at 0)."""
        if amount <= 0:
            return
        self.clock += amount
        # connectivity can change silently under decay
        self.version += 1
        self._decays_since_sweep += 1
        if self._decays_since_sweep >= 2000:
            self.prune_dead()

    def prune_dead(self) -> int:
        self._decays_since_sweep = 0
        clk = self.clock
        removed = 0
        for seg in list(self.segments.values()):
            dead = [c for c, a in seg.synapses.items() if a - clk <= 0]
            for c in dead:
                self._remove_synapse(seg, c)
            removed += len(dead)
            if not seg.synapses:
                self.destroy_segment(seg)
        return removed

    def rebase(self) -> None:
        """Fold the decay clock into the anchors (clock back to 0)."""
        clk = self.clock
        if clk == 0:
            return
        for seg in self.segments.values():
            for c in list(seg.synapses):
                seg.synapses[c] = max(0.0, seg.synapses[c] - clk)
        self.clock = 0.0
        self.prune_dead()


@dataclass
class SegmentActivity:
    """Per-segment overlaps with one activity set."""
    connected: dict[int, int] = field(default_factory=dict)
    potential: dict[int, int] = field(default_factory=dict)


def segment_activity(active_cells: Iterable[int], store: SegmentStore) -> SegmentActivity:
    thr = store.params.perm_connected - EPS
    clk = store.clock
    conn: dict[int, int] = {}
    pot: dict[int, int] = {}
    for c in active_cells:
        idx = store.presyn.get(c)
        if not idx:
            continue
        for uid, seg in idx.items():
            p = seg.synapses[c] - clk
            if p <= 0:
                continue
            pot[uid] = pot.get(uid, 0) + 1
            if p >= thr:
                conn[uid] = conn.get(uid, 0) + 1
    return SegmentActivity(conn, pot)


@dataclass(frozen=True)
class LayerState:
    n_columns: int
    cells_per_column: int
    active_cells: frozenset = frozenset()
    predictive_cells: frozenset = frozenset()
    winning_columns: frozenset = frozenset()
    winner_cells: frozenset = frozenset()

    def _matrix(self, cells) -> np.ndarray:
        m = np.zeros((self.n_columns, self.cells_per_column), dtype=np.uint8)
        for c in cells:
            m[divmod(c, self.cells_per_column)] = 1
        return m

    @property
    def A(self) -> np.ndarray:
        return self._matrix(self.active_cells)

    @property
    def Pi(self) -> np.ndarray:
        return self._matrix(self.predictive_cells)

    @property
    def Y(self) -> frozenset:
        return self.winning_columns

    def predicted_columns(self) -> frozenset:
        n = self.cells_per_column
        return frozenset(c // n for c in self.predictive_cells)


def compute_active(Y_t: Iterable[int], Pi_prev: Iterable[int], cells_per_column: int) -> frozenset:
    """Winning columns with predicted cells fire only those cells; the rest burst."""
    n = cells_per_column
    predicted_by_col: dict[int, list[int]] = defaultdict(list)
    for c in Pi_prev:
        predicted_by_col[c // n].append(c)
    active: set[int] = set()
    for col in Y_t:
        pred = predicted_by_col.get(col)
        if pred:
            active.update(pred)
        else:
            active.update(range(col * n, col * n + n))
    return frozenset(active)


def compute_predictions(A_t: Iterable[int], store: SegmentStore,
                        params: LearningParams | None = None,
                        activity: SegmentActivity | None = None) -> frozenset:
    """Cells owning at least one segment with more than theta active connected synapses."""
    params = params or store.params
    if activity is None:
        activity = segment_activity(A_t, store)
    theta = params.theta
    segs = store.segments
    return frozenset(segs[uid].cell for uid, n in activity.connected.items() if n > theta and uid in segs)


def _least_used_cell(col: int, store: SegmentStore, rng: np.random.Generator) -> int:
    n = store.params.cells_per_column
    cells = range(col * n, col * n + n)
    counts = [len(store.cell_segments[c]) for c in cells]
    lo = min(counts)
    ties = [c for c, k in zip(cells, counts) if k == lo]
    return ties[0] if len(ties) == 1 else int(ties[int(rng.integers(len(ties)))])


def select_learning_segments(Y_t: Iterable[int], A_t: Iterable[int], prev_activity: SegmentActivity,
                             store: SegmentStore, rng: np.random.Generator,
                             prev_winners: Iterable[int] = (), grow: bool = True):
    """Pick the segments to reinforce this step.

    Columns whose active cells carry a segment that was active on the previous
    activity contribute every such segment (``matched=True``). Bursting
    columns contribute their single best-matching segment, or a fresh one on
    the least-used cell when nothing matches well enough.

    Returns ``(selected, winner_cells)`` with ``selected`` a list of
    ``(segment, matched)`` pairs.
    """
    params = store.params
    n = params.cells_per_column
    theta = params.theta
    A_t = A_t if isinstance(A_t, (set, frozenset)) else set(A_t)

    active_by_col: dict[int, list[Segment]] = defaultdict(list)
    for uid, k in activity_items(prev_activity.connected):
        seg = store.segments.get(uid)
        if k > theta and seg is not None:
            if seg.cell in A_t:
                active_by_col[seg.cell // n].append(seg)

    matching_by_col: dict[int, list[tuple[int, Segment]]] = defaultdict(list)
    for uid, k in activity_items(prev_activity.potential):
        seg = store.segments.get(uid)
        if k >= params.min_match and seg is not None:
            matching_by_col[seg.cell // n].append((k, seg))

    selected: list[tuple[Segment, bool]] = []
    winners: list[int] = []
    has_prev = bool(prev_winners)
    for col in sorted(Y_t):
        segs = active_by_col.get(col)
        if segs:
            segs.sort(key=lambda s: s.uid)
            selected.extend((s, True) for s in segs)
            winners.extend(sorted({s.cell for s in segs}))
            continue
        cands = matching_by_col.get(col)
        if cands:
            _, best = min(cands, key=lambda ks: (-ks[0], ks[1].uid))
            selected.append((best, False))
            winners.append(best.cell)
        else:
            cell = _least_used_cell(col, store, rng)
            winners.append(cell)
            if grow and has_prev:
                selected.append((store.create_segment(cell), False))
    return selected, frozenset(winners)


def activity_items(d: dict[int, int]):
    return sorted(d.items())


def grow_synapses(seg: Segment, candidates: Iterable[int], n_new: int, store: SegmentStore,
                  rng: np.random.Generator) -> int:
    """Add up to ``n_new`` synapses at ``perm_init`` onto cells not yet presynaptic."""
    params = store.params
    clk = store.clock
    for c in [c for c, a in seg.synapses.items() if a - clk <= 0]:
        store._remove_synapse(seg, c)
    pool = sorted(c for c in candidates if c not in seg.synapses and c != seg.cell)
    if n_new <= 0 or not pool:
        return 0
    if len(pool) > n_new:
        idx = rng.choice(len(pool), size=n_new, replace=False)
        pool = [pool[i] for i in sorted(idx)]
    overflow = len(seg.synapses) + len(pool) - params.max_synapses_per_segment
    if overflow > 0:
        perms = store.permanences(seg)
        weakest = sorted(seg.synapses, key=lambda c: (perms.get(c, 0.0), c))[:overflow]
        for c in weakest:
            store._remove_synapse(seg, c)
        store.version += 1
    for c in pool:
        store.set_permanence(seg, c, params.perm_init)
    return len(pool)


def reinforce(seg: Segment, A_prev: Iterable[int], learning_rate: float, store: SegmentStore) -> None:
    """Active presynaptic synapses gain ``learning_rate - p_minus``, the rest lose ``p_minus``."""
    p_minus = store.params.p_minus
    A_prev = A_prev if isinstance(A_prev, (set, frozenset)) else set(A_prev)
    for c, p in list(store.permanences(seg).items()):
        delta = learning_rate - p_minus if c in A_prev else -p_minus
        store.set_permanence(seg, c, p + delta)
    _drop_dead(seg, store)


def punish_mispredictions(A_t: Iterable[int], prev_activity: SegmentActivity, store: SegmentStore) -> int:
    """Decrement segments that were active on the previous step but whose cell stayed silent."""
    theta = store.params.theta
    amount = store.params.p_punish
    A_t = A_t if isinstance(A_t, (set, frozenset)) else set(A_t)
    n = 0
    for uid, k in activity_items(prev_activity.connected):
        if k <= theta:
            continue
        seg = store.segments.get(uid)
        if seg is None or seg.cell in A_t:
            continue
        for c, p in list(store.permanences(seg).items()):
            store.set_permanence(seg, c, p - amount)
        _drop_dead(seg, store)
        n += 1
    return n


def _drop_dead(seg: Segment, store: SegmentStore) -> None:
    clk = store.clock
    for c in [c for c, a in seg.synapses.items() if a - clk <= 0]:
        store._remove_synapse(seg, c)
    if not seg.synapses and seg.uid in store.segments:
        store.destroy_segment(seg)


@dataclass
class StepResult:
    state: LayerState
    predicted_columns_prev: frozenset
    learning_rate: float | None
    selected: int = 0


class TemporalMemory:
    """Stateful wrapper running one layer step by step.

    ``gating=False`` gives plain HTM: every step learns at ``p_plus_high``.
    With gating on, the caller's ``l_gate`` flag picks high or low.
    """

    def __init__(self, params: LearningParams | None = None, seed: int = 0,
                 store: SegmentStore | None = None, gating: bool = True):
        self.params = params or LearningParams()
        self.store = store or SegmentStore(self.params)
        self.rng = np.random.default_rng(seed)
        self.gating = gating
        self.reset()

    def reset(self) -> None:
        p = self.params
        self.state = LayerState(p.n_columns, p.cells_per_column)
        self.activity = SegmentActivity()

    def snapshot(self):
        return (self.state, self.activity)

    def restore(self, snap) -> None:
        """Return to a snapshot's activity, seen through the current weights.

        The store is not rolled back: learning since the snapshot stays, and
        segment activity and predictions are recomputed against it so a
        repeated step reinforces the segments the first attempt grew.
        """
        state, _ = snap
        self.activity = segment_activity(state.active_cells, self.store)
        Pi = compute_predictions(state.active_cells, self.store, self.params, self.activity)
        self.state = replace(state, predictive_cells=Pi)

    def learning_rate(self, l_gate: bool) -> float:
        if not self.gating:
            return self.params.p_plus_high
        return self.params.p_plus_high if l_gate else self.params.p_plus_low

    def step(self, columns: Iterable[int], learn: bool = True, l_gate: bool = False,
             active_cells: Iterable[int] | None = None) -> StepResult:
        """Advance one step.

        ``active_cells`` lets another backend supply the activity it produced;
        otherwise activity follows from the previous predictions.
        """
        Y = frozenset(columns)
        prev = self.state
        if active_cells is None:
            A_t = compute_active(Y, prev.predictive_cells, self.params.cells_per_column)
        else:
            A_t = frozenset(active_cells)
        rate = self.learning_rate(l_gate) if learn else None
        selected, winners = select_learning_segments(
            Y, A_t, self.activity, self.store, self.rng, prev.winner_cells, grow=learn)
        if learn:
            for seg, _matched in selected:
                if seg.uid not in self.store.segments:
                    continue
                n_active = sum(1 for c in self.store.permanences(seg) if c in prev.active_cells)
                grow_synapses(seg, prev.winner_cells, self.params.max_new_synapses - n_active,
                              self.store, self.rng)
                reinforce(seg, prev.active_cells, rate, self.store)
            punish_mispredictions(A_t, self.activity, self.store)
        activity = segment_activity(A_t, self.store)
        Pi = compute_predictions(A_t, self.store, self.params, activity)
        self.activity = activity
        self.state = LayerState(self.params.n_columns, self.params.cells_per_column,
                                A_t, Pi, Y, winners)
        return StepResult(self.state, prev.predicted_columns(), rate, len(selected))

    def predict_columns(self) -> frozenset:
        return self.state.predicted_columns()
