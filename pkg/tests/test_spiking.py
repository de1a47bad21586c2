import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqmem.encoder import ConfigurationError, build_vocabulary
from seqmem.experiments import build_e1_dataset
from seqmem.ltm import D2WeightMap
from seqmem.spiking import (CompartmentPool, CouplingMatrix, LifParams, NumericFault, SpikingNetwork,
                            SpikingParams, integrate_step, propagate_current, soma_input,
                            spiking_discrete_equivalence_probe)
from seqmem.temporal_memory import LearningParams, TemporalMemory

DT = 0.1


# -- single neurons -----------------------------------------------------------

def test_rest_is_a_fixed_point():
    pool = CompartmentPool("S", 5, LifParams(tau_m=10.0, v_rest=-0.2, v_reset=-0.5))
    for _ in range(1000):
        assert not integrate_step(pool, np.zeros(5), DT).any()
    assert np.all(pool.V == -0.2)


@pytest.mark.parametrize("tau,ref,current", [(10.0, 2.0, 1.5), (5.0, 25.0, 3.0), (20.0, 0.0, 1.1),
                                             (1.0, 2.0, 5.0), (1.0, 0.0, 3.0)])
def test_firing_period_matches_closed_form(tau, ref, current):
    lif = LifParams(tau_m=tau, v_ref=ref)
    want = ref + tau * math.log(current / (current - 1.0))
    assert lif.period(current) == pytest.approx(want)
    pool = CompartmentPool("S", 1, lif)
    times = []
    for k in range(int(40 * want / DT)):
        if integrate_step(pool, np.array([current]), DT)[0]:
            times.append(k * DT)
    isi = np.diff(times)
    assert len(isi) >= 10
    assert abs(isi.mean() - want) / want < 0.02


def test_subthreshold_input_never_fires():
    lif = LifParams(tau_m=10.0)
    assert lif.period(0.9) == math.inf
    pool = CompartmentPool("S", 1, lif)
    assert not any(integrate_step(pool, np.array([0.9]), DT)[0] for _ in range(5000))
    assert pool.V[0] == pytest.approx(0.9, rel=1e-6)


@pytest.mark.parametrize("tau_g", [2.0, 5.0, 10.0, 20.0])
def test_kernel_matches_exponential(tau_g):
    pool = CompartmentPool("S", 1, LifParams(tau_m=10.0), tau_g=tau_g)
    pool.spikes[0] = True
    pool.decay_kernels(DT)
    pool.spikes[0] = False
    assert pool.g[0] == 1.0
    for k in range(1, 400):
        pool.decay_kernels(DT)
        exact = math.exp(-k * DT / tau_g)
        if exact < 1e-8:
            break
        assert abs(pool.g[0] - exact) <= 1e-6 * exact


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 50), min_size=50, max_size=400), st.floats(0.5, 30), st.floats(0, 10))
def test_refractory_period_holds_under_any_input(currents, tau, ref):
    lif = LifParams(tau_m=max(tau, 10 * DT), v_ref=ref)
    pool = CompartmentPool("S", 1, lif)
    quiet_left = 0
    last = None
    for k, i in enumerate(currents):
        fired = integrate_step(pool, np.array([i]), DT)[0]
        if quiet_left > 0:
            assert not fired and pool.V[0] == lif.v_reset
            quiet_left -= 1
        elif fired:
            quiet_left = lif.clamped_steps(DT)
        if fired:
            # crossings lie inside their steps, so registered spikes can sit one step closer
            assert last is None or (k - last) * DT > ref - DT - 1e-9
            last = k
        if pool.refractory[0] > 0:
            assert pool.V[0] == lif.v_reset
        assert np.isfinite(pool.V[0])


def test_input_shape_checked():
    pool = CompartmentPool("S", 3, LifParams(tau_m=10.0))
    with pytest.raises(ConfigurationError):
        integrate_step(pool, np.zeros(4), DT)


def test_non_finite_voltage_is_a_fault():
    pool = CompartmentPool("S", 2, LifParams(tau_m=10.0))
    with pytest.raises(NumericFault):
        integrate_step(pool, np.array([0.0, np.nan]), DT)


@pytest.mark.parametrize("bad", [dict(tau_m=0.0), dict(tau_m=0.5), dict(tau_m=10.0, v_rest=1.5),
                                 dict(tau_m=10.0, v_reset=0.5), dict(tau_m=10.0, v_ref=-1.0)])
def test_lif_parameter_validation(bad):
    with pytest.raises(ConfigurationError):
        LifParams(**bad).validate(DT)


# -- coupling -----------------------------------------------------------------

def _source(g):
    pool = CompartmentPool("S", len(g), LifParams(tau_m=10.0))
    pool.g[:] = g
    return pool


def test_no_presynaptic_activity_gives_zero_current():
    c = CouplingMatrix("S", "D", 2.0, np.ones((3, 4)))
    assert np.all(propagate_current(_source([0, 0, 0, 0]), c) == 0)


def test_current_is_linear_in_kernels():
    rng = np.random.default_rng(0)
    W = rng.random((3, 4))
    c = CouplingMatrix("S", "D", 1.7, W)
    g1, g2 = rng.random(4), rng.random(4)
    combined = propagate_current(_source(g1 + 2 * g2), c)
    parts = propagate_current(_source(g1), c) + 2 * propagate_current(_source(g2), c)
    assert np.allclose(combined, parts)
    assert np.allclose(propagate_current(_source(g1), c), 1.7 * W @ g1)


def test_coupling_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        propagate_current(_source([1, 1]), CouplingMatrix("S", "D", 1.0, np.ones((2, 3))))
    with pytest.raises(ConfigurationError):
        CouplingMatrix("S", "D", 1.0, np.ones(3))


def test_soma_input_sums_currents():
    assert soma_input([1.0], [0.2], [-0.5])[0] == pytest.approx(0.7)


def test_positive_inhibition_rejected():
    with pytest.raises(ConfigurationError):
        SpikingParams(a_is=1.0).validate()


def test_segment_amplitude_separates_theta_from_theta_plus_one():
    p = SpikingParams()
    for theta in (1, 3, 5):
        a = p.segment_amplitude(theta)
        tau_a, tau_b = p.tau_s_seg, p.pools["SEG"].tau_m
        t = np.linspace(0, 60, 60001)
        peak = (tau_a / (tau_a - tau_b) * (np.exp(-t / tau_a) - np.exp(-t / tau_b))).max()
        assert theta * a * peak < 1.0 < (theta + 1) * a * peak


# -- small networks ------------------------------------------------------------

def _net(n_columns=16, cells=4, theta=2, d2map=None, **sp):
    tm = TemporalMemory(LearningParams(n_columns=n_columns, cells_per_column=cells, theta=theta),
                        seed=0)
    return tm, SpikingNetwork(tm.store, d2map, SpikingParams(**sp))


A, B, C = frozenset({0, 1, 2}), frozenset({5, 6, 7}), frozenset({10, 11, 12})


def test_unpredicted_columns_burst_completely():
    _, net = _net()
    out = net.present_pattern(A)
    assert out.active_cells == frozenset(range(0, 12))
    assert not out.l_gate


def test_predicted_cell_wins_its_column():
    tm, net = _net()
    for _ in range(2):
        tm.reset()
        tm.step(A, l_gate=True)
        tm.step(B, l_gate=True)
    tm.reset()
    tm.step(A, learn=False)
    want = tm.step(B, learn=False).state.active_cells
    assert len(want) == 3
    net.reset()
    net.present_pattern(A)
    out = net.present_pattern(B)
    assert out.active_cells == want
    assert all(c in out.first_spike_step for c in want)


def test_silent_input_stays_silent():
    _, net = _net()
    assert net.present_pattern(frozenset()).active_cells == frozenset()


def test_column_out_of_range():
    _, net = _net()
    with pytest.raises(ConfigurationError):
        net.present_pattern({99})


def test_ltm_edge_raises_gate_only_on_its_target():
    v = build_vocabulary(["a", "b", "c"], 64, 6, seed=0)
    a, b, c = (frozenset(v.column_assignment[v.code(t)]) for t in "abc")
    d2 = D2WeightMap.from_items([(v.code("a"), v.code("b"))], v)
    _, net = _net(n_columns=64, d2map=d2)
    net.present_pattern(a)
    assert net.present_pattern(b).l_gate
    net.reset()
    net.present_pattern(a)
    assert not net.present_pattern(c).l_gate


def test_gate_drives_high_rate_learning():
    """With the gate open the edge reaches the high-rate permanence; without it, the low."""
    v = build_vocabulary(["a", "b", "c"], 64, 6, seed=0)
    a, b, c = (frozenset(v.column_assignment[v.code(t)]) for t in "abc")
    d2 = D2WeightMap.from_items([(v.code("a"), v.code("b"))], v)
    from seqmem.spiking import SpikingBackend
    tm = TemporalMemory(LearningParams(n_columns=64, cells_per_column=4), seed=0)
    be = SpikingBackend(tm, d2)
    for target in (b, c):
        be.reset()
        be.present(a)
        be.present(target)
    p = tm.params
    perms = {}
    for name, cols in (("b", b), ("c", c)):
        vals = [x for seg in tm.store.iter_segments() if seg.cell // 4 in cols
                for x in tm.store.permanences(seg).values()]
        perms[name] = max(vals)
    assert perms["b"] - perms["c"] >= (p.p_plus_high - p.p_plus_low) * 0.9


def test_reset_returns_to_rest():
    _, net = _net()
    net.present_pattern(A)
    net.reset()
    assert np.all(net.vS == net._v_rest[1]) and not net.gSs.any()
    assert net.present_pattern(A).active_cells == frozenset(range(12))


def test_spike_trace_csv(tmp_path):
    tm = TemporalMemory(LearningParams(n_columns=16, cells_per_column=4, theta=2))
    net = SpikingNetwork(tm.store, None, SpikingParams(), record_trace=True)
    net.present_pattern(A)
    path = tmp_path / "trace.csv"
    net.write_spike_trace(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["time_ms", "compartment", "neuron_id"]
    kinds = {r[1] for r in rows[1:]}
    assert {"P", "S"} <= kinds
    s_cells = {int(r[2]) for r in rows[1:] if r[1] == "S"}
    assert s_cells == set(range(12))
    times = [float(r[0]) for r in rows[1:]]
    assert times == sorted(times) and times[-1] < 30.0


def test_non_finite_network_state_is_a_fault():
    _, net = _net()
    net.vS[3] = np.nan
    with pytest.raises(NumericFault):
        net.present_pattern(A)


# -- equivalence with the discrete layer ---------------------------------------------

def _trained_on_e1(seed):
    corpus, _ = build_e1_dataset(seed)
    lp = LearningParams(n_columns=corpus.vocab.n_columns, cells_per_column=8)
    tm = TemporalMemory(lp, seed=seed)
    for _ in range(3):
        for i in range(len(corpus)):
            tm.reset()
            for cols in corpus.columns(i):
                tm.step(cols, l_gate=True)
    seq, resets = [], set()
    for i in range(len(corpus)):
        resets.add(len(seq))
        seq.extend(corpus.columns(i))
    return tm, seq, resets


def test_spiking_matches_discrete_on_trained_layer():
    tm, seq, resets = _trained_on_e1(0)
    report = spiking_discrete_equivalence_probe(SpikingNetwork(tm.store), seq, resets=resets)
    assert report.steps == len(seq)
    assert report.equivalent, report.mismatches[:1]


def test_probe_detects_broken_inhibition():
    tm, seq, resets = _trained_on_e1(0)
    net = SpikingNetwork(tm.store, None, SpikingParams(a_is=0.0))
    report = spiking_discrete_equivalence_probe(net, seq, resets=resets)
    assert not report.equivalent
    step, want, got = report.mismatches[0]
    assert step == report.first_divergence and got > want
