"""Multi-compartment leaky integrate-and-fire realisation of the column layer.

Populations (cells are ``column * N + i`` as in the discrete layer):

* ``P``   one proximal head per column, driven by a brief onset current;
* ``S``   one soma per cell;
* ``I``   one inhibitory relay per cell, silencing the other somas of its column;
* ``D``   one distal integrator per cell;
* ``SEG`` one dendritic-branch unit per distal segment, fed by connected synapses;
* ``D2``  one long-term-memory head per column, fed by LTM column links.

A presented pattern occupies one window of ``presentation_ms + gap_ms``.
Somas that spike in the window are the active cells. Cells whose ``D``
spikes in the window are depolarised for the next one, which gives them the
first-spike advantage. The l-gate is raised when a ``D2`` head of a
presented column spikes within the window.

All dynamics use exponential Euler steps, exact for piecewise-constant
input. The window is simulated by a numba kernel restricted to columns and
segments that carry state or receive input.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .encoder import ConfigurationError
from .ltm import D2WeightMap
from .protocol import Presentation
from .temporal_memory import (EPS, LearningParams, SegmentStore, TemporalMemory, compute_active,
                              compute_predictions)

FLUSH = 1e-9

KIND_P, KIND_S, KIND_I, KIND_D, KIND_SEG, KIND_D2 = range(6)
KIND_NAMES = ("P", "S", "I", "D", "SEG", "D2")


class NumericFault(RuntimeError):
    pass


@dataclass(frozen=True)
class LifParams:
    tau_m: float
    v_rest: float = 0.0
    v_th: float = 1.0
    v_reset: float = 0.0
    v_ref: float = 2.0
    R: float = 1.0

    def validate(self, dt: float) -> None:
        if not self.v_reset <= self.v_rest < self.v_th:
            raise ConfigurationError("need v_reset <= v_rest < v_th")
        if self.tau_m <= 0 or self.v_ref < 0:
            raise ConfigurationError("tau_m must be positive and v_ref non-negative")
        if dt > self.tau_m / 10 + 1e-12:
            raise ConfigurationError(f"dt={dt} too coarse for tau_m={self.tau_m} (need dt <= tau_m/10)")

    def decay(self, dt: float) -> float:
        return math.exp(-dt / self.tau_m)

    def clamped_steps(self, dt: float) -> int:
        """Whole steps after a spike step that are guaranteed to lie inside the refractory window.

        The threshold crossing happens somewhere within the spike step, so the
        window can end up to one step earlier than ``v_ref`` after the step boundary.
        """
        return max(0, int(math.floor(self.v_ref / dt + 1e-9)) - 1)

    def period(self, current: float) -> float:
        """Closed-form inter-spike interval under constant input (inf if subthreshold)."""
        drive = self.v_rest + self.R * current
        if drive <= self.v_th:
            return math.inf
        return self.v_ref + self.tau_m * math.log((drive - self.v_reset) / (drive - self.v_th))


def _default_pools() -> dict[str, LifParams]:
    return {
        "P": LifParams(tau_m=5.0, v_ref=2.0),
        "S": LifParams(tau_m=10.0, v_ref=25.0),
        "I": LifParams(tau_m=1.0, v_ref=2.0),
        "D": LifParams(tau_m=5.0, v_ref=25.0),
        "SEG": LifParams(tau_m=5.0, v_ref=25.0),
        "D2": LifParams(tau_m=5.0, v_ref=2.0),
    }


@dataclass
class SpikingParams:
    dt: float = 0.1
    presentation_ms: float = 20.0
    gap_ms: float = 10.0
    onset_current: float = 20.0
    onset_ms: float = 0.5
    pools: dict[str, LifParams] = field(default_factory=_default_pools)
    tau_fast: float = 5.0      # P->S, P->D2, I->S, SEG->D
    tau_s_seg: float = 10.0    # S->SEG
    tau_s_i: float = 2.0       # S->own I
    tau_slow: float = 20.0     # D->S, D->I, S column->D2
    a_ps: float = 5.0
    a_ds: float = 1.3
    a_is: float = -8.0
    a_di: float = 1.0
    a_si: float = 1.7
    a_segd: float = 5.0
    a_sd: float | None = None  # None: derived from theta
    a_ltm: float = 0.16
    a_pd2: float = 2.4
    # state smaller than this is treated as rest between windows
    quiescence_tol: float = 1e-6

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        for name in KIND_NAMES:
            if name not in self.pools:
                raise ConfigurationError(f"missing LIF parameters for {name}")
            self.pools[name].validate(self.dt)
        if self.presentation_ms < self.dt:
            raise ConfigurationError("presentation shorter than one step")
        if self.a_is > 0:
            raise ConfigurationError("I->S amplitude must be inhibitory (<= 0)")
        if self.gap_ms < 0 or self.onset_ms <= 0:
            raise ConfigurationError("bad gap or onset duration")

    def segment_amplitude(self, theta: int) -> float:
        """S->SEG amplitude: more than ``theta`` coincident inputs cross threshold, ``theta`` do not."""
        if self.a_sd is not None:
            return self.a_sd
        # peak response of a SEG unit to one unit S kernel
        a, b = self.tau_s_seg, self.pools["SEG"].tau_m
        tpk = a * b / (a - b) * math.log(a / b)
        peak = a / (a - b) * (math.exp(-tpk / a) - math.exp(-tpk / b))
        th = self.pools["SEG"].v_th - self.pools["SEG"].v_rest
        return th / ((theta + 0.5) * peak)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pools"] = {k: asdict(v) for k, v in self.pools.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpikingParams":
        d = dict(d)
        pools = _default_pools()
        for k, v in (d.pop("pools", None) or {}).items():
            pools[k] = replace(pools[k], **v) if k in pools else LifParams(**v)
        return cls(pools=pools, **d)


# -- single-pool primitives ------------------------------------------------

@numba.njit(cache=True)
def _lif_update(v, ref, i_in, dt, decay, tau, v_rest, v_th, v_reset, R, v_ref):
    """One exponential-Euler step with exact threshold-crossing times; returns (v, ref, spiked).

    ``ref`` is the refractory time left in ms. A spike starts the refractory
    clock at the crossing instant inside the step rather than at the step
    boundary, and a clock that runs out mid-step hands the remainder of the
    step back to the integrator. Input is held constant across the step.
    """
    if ref >= dt - 1e-9:
        return v_reset, ref - dt, False
    h = dt
    d = decay
    if ref > 1e-9:
        h = dt - ref
        v = v_reset
        d = math.exp(-h / tau)
    v_inf = v_rest + R * i_in
    v_new = v_inf + (v - v_inf) * d
    if v_new > v_th:
        frac = (v_inf - v) / (v_inf - v_th)
        t_c = tau * math.log(frac) if frac > 1.0 else 0.0
        if t_c > h:
            t_c = h
        ref_left = v_ref - (h - t_c)
        if ref_left >= 0.0:
            return v_reset, ref_left, True
        # refractory ended inside this step: integrate the tail from reset
        v_out = v_inf + (v_reset - v_inf) * math.exp(ref_left / tau)
        if v_out > v_th:
            v_out = v_th
        return v_out, 0.0, True
    if abs(v_new - v_rest) < 1e-12:
        v_new = v_rest
    return v_new, 0.0, False


@dataclass
class CompartmentPool:
    kind: str
    size: int
    lif: LifParams
    tau_g: float = 5.0
    V: np.ndarray = None
    refractory: np.ndarray = None  # remaining refractory time, ms
    g: np.ndarray = None
    spikes: np.ndarray = None

    def __post_init__(self):
        if self.V is None:
            self.V = np.full(self.size, self.lif.v_rest)
        if self.refractory is None:
            self.refractory = np.zeros(self.size)
        if self.g is None:
            self.g = np.zeros(self.size)
        if self.spikes is None:
            self.spikes = np.zeros(self.size, dtype=bool)

    def decay_kernels(self, dt: float) -> None:
        """Kernel step: exponential decay, then +1 per spike emitted this step."""
        self.g *= math.exp(-dt / self.tau_g)
        self.g[self.g < FLUSH] = 0.0
        self.g[self.spikes] += 1.0


def integrate_step(pool: CompartmentPool, I_in: np.ndarray, dt: float) -> np.ndarray:
    """Advance every neuron of ``pool`` by ``dt`` under input ``I_in``; returns the spike vector."""
    I_in = np.asarray(I_in, dtype=float)
    if I_in.shape != (pool.size,):
        raise ConfigurationError(f"input has shape {I_in.shape}, pool has {pool.size} neurons")
    lif = pool.lif
    dec = lif.decay(dt)
    for k in range(pool.size):
        v, r, s = _lif_update(pool.V[k], pool.refractory[k], I_in[k], dt, dec, lif.tau_m,
                              lif.v_rest, lif.v_th, lif.v_reset, lif.R, lif.v_ref)
        pool.V[k] = v
        pool.refractory[k] = r
        pool.spikes[k] = s
    if not np.all(np.isfinite(pool.V)):
        bad = np.flatnonzero(~np.isfinite(pool.V))
        raise NumericFault(f"non-finite voltage in pool {pool.kind} at neurons {bad[:10].tolist()}")
    return pool.spikes.copy()


@dataclass
class CouplingMatrix:
    source: str
    target: str
    amplitude: float
    weights: np.ndarray  # target x source

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ConfigurationError("coupling weights must be a 2-d matrix")


def propagate_current(source: CompartmentPool, coupling: CouplingMatrix) -> np.ndarray:
    """``amplitude * W @ g`` for every target neuron."""
    if coupling.weights.shape[1] != source.size:
        raise ConfigurationError(
            f"coupling {coupling.source}->{coupling.target} expects {coupling.weights.shape[1]} "
            f"sources, pool has {source.size}")
    return coupling.amplitude * (coupling.weights @ source.g)


def soma_input(p_cur, d_cur, i_cur):
    """Soma current: proximal + distal + (negative) inhibitory."""
    return np.asarray(p_cur, dtype=float) + np.asarray(d_cur, dtype=float) + np.asarray(i_cur, dtype=float)


# -- the network kernel ----------------------------------------------------

@numba.njit(cache=True)
def _window(n_steps, step0, onset_steps, onset_current, N,
            live_cols, live_mask, n_live_arr, sdr_mask,
            dt, lif, dec, taus, vrefs, amps, kdec,
            vP, rP, gP,
            vS, rS, gSs, gSi, gcol,
            vI, rI, gI,
            vD, rD, gD,
            vD2, rD2,
            seg_live, seg_cell, vG, rG, gG,
            cand_cells, cand_ptr, cand_seg,
            ltm_ptr, ltm_idx,
            outS, outD, outD2, firstS,
            trace, trace_n):
    """Simulate one presentation window over the live columns and segments.

    ``live_cols[:n_live_arr[0]]`` lists the simulated columns; a column joins
    when one of its segments fires. ``lif`` rows are (v_rest, v_th, v_reset, R) per kind; ``dec``, ``taus``
    and ``vrefs`` are per-kind step decay factors, membrane time constants and
    refractory lengths in ms; ``amps`` is
    (a_ps, a_ds, a_is, a_di, a_si, a_segd, a_sd, a_ltm, a_pd2); ``kdec`` is
    (fast, s_seg, s_i, slow) kernel decay factors.
    """
    a_ps, a_ds, a_is, a_di, a_si, a_segd, a_sd, a_ltm, a_pd2 = (
        amps[0], amps[1], amps[2], amps[3], amps[4], amps[5], amps[6], amps[7], amps[8])
    k_fast, k_sseg, k_si, k_slow = kdec[0], kdec[1], kdec[2], kdec[3]
    M = vP.shape[0]
    n_seg = seg_live.shape[0]
    seg_in = np.zeros(vG.shape[0])
    d_in = np.zeros(vD.shape[0])
    ltm_in = np.zeros(M)
    sumI = np.zeros(M)
    spkS = np.zeros(vS.shape[0], dtype=np.bool_)
    spkI = np.zeros(vS.shape[0], dtype=np.bool_)
    spkD = np.zeros(vS.shape[0], dtype=np.bool_)
    spkP = np.zeros(M, dtype=np.bool_)
    spkG = np.zeros(vG.shape[0], dtype=np.bool_)
    cap = trace.shape[0]
    for st in range(n_steps):
        t = step0 + st
        n_live = n_live_arr[0]
        # -- currents from kernel state at the start of the step
        for k in range(n_seg):
            seg_in[seg_live[k]] = 0.0
        for k in range(cand_cells.shape[0]):
            g = gSs[cand_cells[k]]
            if g > 0.0:
                for e in range(cand_ptr[k], cand_ptr[k + 1]):
                    seg_in[cand_seg[e]] += a_sd * g
        for q in range(n_live):
            col = live_cols[q]
            ltm_in[col] = 0.0
            s = 0.0
            for i in range(N):
                s += gI[col * N + i]
                d_in[col * N + i] = 0.0
            sumI[col] = s
        for k in range(n_seg):
            u = seg_live[k]
            if gG[u] > 0.0:
                d_in[seg_cell[u]] += a_segd * gG[u]
        for q in range(n_live):
            src = live_cols[q]
            g = gcol[src]
            if g > 0.0:
                for e in range(ltm_ptr[src], ltm_ptr[src + 1]):
                    ltm_in[ltm_idx[e]] += g
        # -- membrane updates
        for k in range(n_seg):
            u = seg_live[k]
            v, r, s = _lif_update(vG[u], rG[u], seg_in[u], dt, dec[4], taus[4], lif[4, 0],
                                  lif[4, 1], lif[4, 2], lif[4, 3], vrefs[4])
            vG[u] = v
            rG[u] = r
            spkG[u] = s
            if s and not live_mask[seg_cell[u] // N]:
                col = seg_cell[u] // N
                live_mask[col] = True
                live_cols[n_live_arr[0]] = col
                n_live_arr[0] += 1
            if s and trace_n[0] < cap:
                trace[trace_n[0], 0] = t
                trace[trace_n[0], 1] = 4
                trace[trace_n[0], 2] = u
                trace_n[0] += 1
        for q in range(n_live):
            col = live_cols[q]
            ip = onset_current if (sdr_mask[col] and st < onset_steps) else 0.0
            v, r, s = _lif_update(vP[col], rP[col], ip, dt, dec[0], taus[0], lif[0, 0],
                                  lif[0, 1], lif[0, 2], lif[0, 3], vrefs[0])
            vP[col] = v
            rP[col] = r
            spkP[col] = s
            if s:
                if trace_n[0] < cap:
                    trace[trace_n[0], 0] = t
                    trace[trace_n[0], 1] = 0
                    trace[trace_n[0], 2] = col
                    trace_n[0] += 1
            i_d2 = a_pd2 * gP[col] + a_ltm * ltm_in[col]
            v, r, s = _lif_update(vD2[col], rD2[col], i_d2, dt, dec[5], taus[5], lif[5, 0],
                                  lif[5, 1], lif[5, 2], lif[5, 3], vrefs[5])
            vD2[col] = v
            rD2[col] = r
            if s:
                if sdr_mask[col] and st < n_steps:
                    outD2[col] = True
                if trace_n[0] < cap:
                    trace[trace_n[0], 0] = t
                    trace[trace_n[0], 1] = 5
                    trace[trace_n[0], 2] = col
                    trace_n[0] += 1
            for i in range(N):
                c = col * N + i
                i_s = a_ps * gP[col] + a_ds * gD[c] + a_is * (sumI[col] - gI[c])
                v, r, s = _lif_update(vS[c], rS[c], i_s, dt, dec[1], taus[1], lif[1, 0],
                                      lif[1, 1], lif[1, 2], lif[1, 3], vrefs[1])
                vS[c] = v
                rS[c] = r
                spkS[c] = s
                if s:
                    outS[c] = True
                    if firstS[c] < 0:
                        firstS[c] = st
                    if trace_n[0] < cap:
                        trace[trace_n[0], 0] = t
                        trace[trace_n[0], 1] = 1
                        trace[trace_n[0], 2] = c
                        trace_n[0] += 1
                i_i = a_di * gD[c] + a_si * gSi[c]
                v, r, s = _lif_update(vI[c], rI[c], i_i, dt, dec[2], taus[2], lif[2, 0],
                                      lif[2, 1], lif[2, 2], lif[2, 3], vrefs[2])
                vI[c] = v
                rI[c] = r
                spkI[c] = s
                if s and trace_n[0] < cap:
                    trace[trace_n[0], 0] = t
                    trace[trace_n[0], 1] = 2
                    trace[trace_n[0], 2] = c
                    trace_n[0] += 1
                v, r, s = _lif_update(vD[c], rD[c], d_in[c], dt, dec[3], taus[3], lif[3, 0],
                                      lif[3, 1], lif[3, 2], lif[3, 3], vrefs[3])
                vD[c] = v
                rD[c] = r
                spkD[c] = s
                if s:
                    outD[c] = True
                    if trace_n[0] < cap:
                        trace[trace_n[0], 0] = t
                        trace[trace_n[0], 1] = 3
                        trace[trace_n[0], 2] = c
                        trace_n[0] += 1
        # -- kernels: decay, then add this step's spikes
        for k in range(n_seg):
            u = seg_live[k]
            g = gG[u] * k_fast
            gG[u] = (g if g >= 1e-9 else 0.0) + (1.0 if spkG[u] else 0.0)
        for q in range(n_live):
            col = live_cols[q]
            g = gP[col] * k_fast
            gP[col] = (g if g >= 1e-9 else 0.0) + (1.0 if spkP[col] else 0.0)
            g = gcol[col] * k_slow
            gc = g if g >= 1e-9 else 0.0
            for i in range(N):
                c = col * N + i
                s = spkS[c]
                g = gSs[c] * k_sseg
                gSs[c] = (g if g >= 1e-9 else 0.0) + (1.0 if s else 0.0)
                g = gSi[c] * k_si
                gSi[c] = (g if g >= 1e-9 else 0.0) + (1.0 if s else 0.0)
                if s:
                    gc = 1.0
                g = gI[c] * k_fast
                gI[c] = (g if g >= 1e-9 else 0.0) + (1.0 if spkI[c] else 0.0)
                g = gD[c] * k_slow
                gD[c] = (g if g >= 1e-9 else 0.0) + (1.0 if spkD[c] else 0.0)
            gcol[col] = gc
    return step0 + n_steps


@numba.njit(cache=True)
def _settle_columns(N, tol, vP, rP, gP, vS, rS, gSs, gSi, gcol, vI, rI, gI, vD, rD, gD, vD2, rD2,
                    v_rest):
    """Columns still holding state above ``tol``; every other column is reset to rest."""
    M = vP.shape[0]
    out = np.zeros(M, dtype=np.bool_)
    for col in range(M):
        busy = (abs(vP[col] - v_rest[0]) > tol or rP[col] > 0 or gP[col] > tol
                or gcol[col] > tol or abs(vD2[col] - v_rest[5]) > tol or rD2[col] > 0)
        if not busy:
            for i in range(N):
                c = col * N + i
                if (abs(vS[c] - v_rest[1]) > tol or rS[c] > 0 or gSs[c] > tol or gSi[c] > tol
                        or abs(vI[c] - v_rest[2]) > tol or rI[c] > 0 or gI[c] > tol
                        or abs(vD[c] - v_rest[3]) > tol or rD[c] > 0 or gD[c] > tol):
                    busy = True
                    break
        out[col] = busy
        if not busy:
            vP[col] = v_rest[0]
            gP[col] = 0.0
            gcol[col] = 0.0
            vD2[col] = v_rest[5]
            for i in range(N):
                c = col * N + i
                vS[c] = v_rest[1]
                gSs[c] = 0.0
                gSi[c] = 0.0
                vI[c] = v_rest[2]
                gI[c] = 0.0
                vD[c] = v_rest[3]
                gD[c] = 0.0
    return out


@dataclass(frozen=True)
class PresentationOutcome:
    active_cells: frozenset
    predicted_cells_next: frozenset
    l_gate: bool
    first_spike_step: dict = field(default_factory=dict, compare=False)


class SpikingNetwork:
    """Spiking column layer reading its distal weights from a :class:`SegmentStore`."""

    def __init__(self, store: SegmentStore, d2map: D2WeightMap | None = None,
                 params: SpikingParams | None = None, record_trace: bool = False,
                 trace_capacity: int = 200_000):
        self.params = params or SpikingParams()
        self.params.validate()
        self.store = store
        lp: LearningParams = store.params
        self.M = lp.n_columns
        self.N = lp.cells_per_column
        self.theta = lp.theta
        p = self.params
        order = [p.pools[k] for k in KIND_NAMES]
        self._lif = np.array([[q.v_rest, q.v_th, q.v_reset, q.R] for q in order])
        self._dec = np.array([q.decay(p.dt) for q in order])
        self._taus = np.array([q.tau_m for q in order])
        self._vrefs = np.array([q.v_ref for q in order])
        self._v_rest = self._lif[:, 0].copy()
        self._amps = np.array([p.a_ps, p.a_ds, p.a_is, p.a_di, p.a_si, p.a_segd,
                               p.segment_amplitude(self.theta), p.a_ltm, p.a_pd2])
        self._kdec = np.array([math.exp(-p.dt / tau) for tau in
                               (p.tau_fast, p.tau_s_seg, p.tau_s_i, p.tau_slow)])
        self.n_window = int(round((p.presentation_ms + p.gap_ms) / p.dt))
        self.onset_steps = max(1, int(round(p.onset_ms / p.dt)))
        self.set_ltm(d2map)
        self.record_trace = record_trace
        self._trace = np.zeros((trace_capacity if record_trace else 0, 3), dtype=np.int64)
        self._trace_n = np.zeros(1, dtype=np.int64)
        self._seg_cap = 0
        self.reset()

    # -- setup ------------------------------------------------------------
    def set_ltm(self, d2map: D2WeightMap | None) -> None:
        self.d2map = d2map
        ptr = np.zeros(self.M + 1, dtype=np.int64)
        idx: list[int] = []
        targets = d2map.targets if d2map is not None else {}
        for j in range(self.M):
            ks = sorted(targets.get(j, ()))
            idx.extend(ks)
            ptr[j + 1] = len(idx)
        self._ltm_ptr = ptr
        self._ltm_idx = np.array(idx, dtype=np.int64)
        self._ltm_targets = {j: np.array(sorted(ks), dtype=np.int64) for j, ks in targets.items()}

    def reset(self) -> None:
        """Full quiescence: every voltage at rest, kernels and refractory clocks cleared."""
        M, C = self.M, self.M * self.N
        vr = self._v_rest
        self.vP, self.rP, self.gP = np.full(M, vr[0]), np.zeros(M), np.zeros(M)
        self.vS, self.rS = np.full(C, vr[1]), np.zeros(C)
        self.gSs, self.gSi, self.gcol = np.zeros(C), np.zeros(C), np.zeros(M)
        self.vI, self.rI, self.gI = np.full(C, vr[2]), np.zeros(C), np.zeros(C)
        self.vD, self.rD, self.gD = np.full(C, vr[3]), np.zeros(C), np.zeros(C)
        self.vD2, self.rD2 = np.full(M, vr[5]), np.zeros(M)
        self._alloc_segments(max(self._seg_cap, self.store.next_uid, 64), fresh=True)
        self.step = 0
        self.predicted_cells: frozenset = frozenset()

    def _alloc_segments(self, cap: int, fresh: bool = False) -> None:
        cap = int(cap)
        if fresh:
            self.vG = np.full(cap, self._v_rest[4])
            self.rG = np.zeros(cap)
            self.gG = np.zeros(cap)
            self.seg_cell = np.zeros(cap, np.int64)
            self._live_segs: set[int] = set()
        else:
            old = self.vG.shape[0]
            grow = cap - old
            self.vG = np.concatenate([self.vG, np.full(grow, self._v_rest[4])])
            self.rG = np.concatenate([self.rG, np.zeros(grow)])
            self.gG = np.concatenate([self.gG, np.zeros(grow)])
            self.seg_cell = np.concatenate([self.seg_cell, np.zeros(grow, np.int64)])
        self._seg_cap = cap

    _STATE = ("vP", "rP", "gP", "vS", "rS", "gSs", "gSi", "gcol", "vI", "rI", "gI",
              "vD", "rD", "gD", "vD2", "rD2", "vG", "rG", "gG", "seg_cell")

    def snapshot(self):
        return ({k: getattr(self, k).copy() for k in self._STATE},
                set(self._live_segs), self.step, self.predicted_cells, self._seg_cap)

    def restore(self, snap) -> None:
        arrays, live, self.step, self.predicted_cells, cap = snap
        for k, v in arrays.items():
            setattr(self, k, v.copy())
        self._seg_cap = cap
        self._live_segs = set(live)

    def _check_finite(self, when: str) -> None:
        for name in ("vP", "vS", "vI", "vD", "vD2", "vG"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                bad = np.flatnonzero(~np.isfinite(arr))[:10].tolist()
                raise NumericFault(f"non-finite {name[1:]} voltage {when} step {self.step}: {bad}")

    # -- presentation -------------------------------------------------------
    def _candidates(self, sdr_cols) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Presynaptic cells that can drive segments this window, with their connected segments."""
        N = self.N
        cells = set(np.flatnonzero(self.gSs > self.params.quiescence_tol).tolist())
        for col in sdr_cols:
            cells.update(range(col * N, col * N + N))
        store = self.store
        thr = store.params.perm_connected - EPS
        clk = store.clock
        if store.next_uid > self._seg_cap:
            self._alloc_segments(max(store.next_uid, 2 * self._seg_cap))
        cand, ptr, segs = [], [0], []
        for c in sorted(cells):
            idx = store.presyn.get(c)
            if not idx:
                continue
            hit = [uid for uid, seg in idx.items() if seg.synapses[c] - clk >= thr]
            if not hit:
                continue
            hit.sort()
            cand.append(c)
            segs.extend(hit)
            ptr.append(len(segs))
            for uid in hit:
                self.seg_cell[uid] = idx[uid].cell
                self._live_segs.add(uid)
        return (np.array(cand, dtype=np.int64), np.array(ptr, dtype=np.int64),
                np.array(segs, dtype=np.int64))

    def _prune_segments(self) -> None:
        segs = self.store.segments
        tol = self.params.quiescence_tol
        rest = self._v_rest[4]
        keep = set()
        for u in self._live_segs:
            if u in segs and (abs(self.vG[u] - rest) > tol or self.rG[u] > 0 or self.gG[u] > tol):
                keep.add(u)
            else:
                self.vG[u] = rest
                self.rG[u] = 0
                self.gG[u] = 0.0
        self._live_segs = keep

    def present_pattern(self, columns, duration_ms: float | None = None) -> PresentationOutcome:
        """Drive the P heads of ``columns`` for one window and read out the result."""
        p = self.params
        if duration_ms is not None and duration_ms < p.dt:
            raise ConfigurationError("presentation shorter than one integration step")
        n_steps = self.n_window if duration_ms is None else int(round((duration_ms + p.gap_ms) / p.dt))
        cols = sorted(int(c) for c in columns)
        if cols and (cols[0] < 0 or cols[-1] >= self.M):
            raise ConfigurationError("column index out of range")
        sdr = np.zeros(self.M, dtype=np.bool_)
        sdr[cols] = True

        self._check_finite("before")
        live = _settle_columns(self.N, self.params.quiescence_tol, self.vP, self.rP, self.gP,
                               self.vS, self.rS, self.gSs, self.gSi, self.gcol, self.vI, self.rI,
                               self.gI, self.vD, self.rD, self.gD, self.vD2, self.rD2,
                               self._v_rest)
        live[cols] = True
        self._prune_segments()
        cand, ptr, cseg = self._candidates(cols)
        seg_live = np.array(sorted(self._live_segs), dtype=np.int64)
        # D2 targets of columns that are (or may become) LTM sources
        for src in np.flatnonzero(live).tolist():
            t = self._ltm_targets.get(src)
            if t is not None:
                live[t] = True
        live_cols = np.zeros(self.M, dtype=np.int64)
        first = np.flatnonzero(live)
        live_cols[:first.size] = first
        n_live = np.array([first.size], dtype=np.int64)

        C = self.M * self.N
        outS = np.zeros(C, dtype=np.bool_)
        outD = np.zeros(C, dtype=np.bool_)
        outD2 = np.zeros(self.M, dtype=np.bool_)
        firstS = np.full(C, -1, dtype=np.int64)
        self.step = _window(n_steps, self.step, self.onset_steps, p.onset_current, self.N,
                            live_cols, live, n_live, sdr, p.dt, self._lif, self._dec, self._taus, self._vrefs, self._amps,
                            self._kdec, self.vP, self.rP, self.gP, self.vS, self.rS, self.gSs,
                            self.gSi, self.gcol, self.vI, self.rI, self.gI, self.vD, self.rD,
                            self.gD, self.vD2, self.rD2, seg_live, self.seg_cell, self.vG,
                            self.rG, self.gG, cand, ptr, cseg, self._ltm_ptr, self._ltm_idx,
                            outS, outD, outD2, firstS, self._trace, self._trace_n)
        self._check_finite("after")
        active = np.flatnonzero(outS)
        self.predicted_cells = frozenset(np.flatnonzero(outD).tolist())
        gate = bool(outD2[cols].any()) if cols else False
        first_spike = {int(c): int(firstS[c]) for c in active}
        return PresentationOutcome(frozenset(active.tolist()), self.predicted_cells, gate, first_spike)

    # -- diagnostics --------------------------------------------------------
    def spike_trace(self) -> list[tuple[float, str, int]]:
        n = int(self._trace_n[0])
        dt = self.params.dt
        return [(float(t * dt), KIND_NAMES[k], int(i)) for t, k, i in self._trace[:n]]

    def write_spike_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "compartment", "neuron_id"])
            for t, k, i in self.spike_trace():
                w.writerow([f"{t:.1f}", k, i])


class SpikingBackend:
    """Spiking presentation with learning done on the shared store.

    Activity comes from the somas that spiked; the temporal memory then
    applies the same segment selection and permanence updates as the
    discrete backend, at the rate chosen by the spiking l-gate.
    """

    def __init__(self, tm: TemporalMemory, d2map: D2WeightMap | None = None,
                 params: SpikingParams | None = None, record_trace: bool = False):
        self.tm = tm
        self.net = SpikingNetwork(tm.store, d2map, params, record_trace=record_trace)

    @property
    def store(self) -> SegmentStore:
        return self.tm.store

    def reset(self) -> None:
        self.tm.reset()
        self.net.reset()

    def present(self, columns, learn: bool = True) -> Presentation:
        predicted_before = frozenset(c // self.tm.params.cells_per_column
                                     for c in self.net.predicted_cells)
        out = self.net.present_pattern(columns)
        self.tm.step(columns, learn=learn, l_gate=out.l_gate, active_cells=out.active_cells)
        return Presentation(out.active_cells, predicted_before, out.l_gate)

    def snapshot(self):
        return (self.tm.snapshot(), self.net.snapshot())

    def restore(self, snap) -> None:
        tm_snap, net_snap = snap
        self.tm.restore(tm_snap)
        self.net.restore(net_snap)


@dataclass
class EquivalenceReport:
    steps: int
    mismatches: list[tuple[int, frozenset, frozenset]]  # (step, discrete, spiking)

    @property
    def equivalent(self) -> bool:
        return not self.mismatches

    @property
    def first_divergence(self) -> int | None:
        return self.mismatches[0][0] if self.mismatches else None


def spiking_discrete_equivalence_probe(net: SpikingNetwork, sequence, reset_first: bool = True,
                                       resets: set[int] | None = None) -> EquivalenceReport:
    """Present ``sequence`` (column sets) to both backends with learning off.

    The discrete reference reads the same store as ``net``. ``resets`` lists
    positions before which both are returned to quiescence.
    """
    store = net.store
    n = store.params.cells_per_column
    if reset_first:
        net.reset()
    predicted: frozenset = frozenset()
    mismatches = []
    resets = resets or set()
    k = -1
    for k, cols in enumerate(sequence):
        if k in resets:
            net.reset()
            predicted = frozenset()
        cols = frozenset(cols)
        want = compute_active(cols, predicted, n)
        got = net.present_pattern(cols).active_cells
        if want != got:
            mismatches.append((k, want, got))
        # follow the discrete trajectory so one divergence is reported once
        predicted = compute_predictions(want, store)
    return EquivalenceReport(k + 1, mismatches)
