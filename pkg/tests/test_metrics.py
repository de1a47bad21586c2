import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqmem.metrics import (accuracy, curve, first_crossing, mean_defined, moving_average,
                            sequence_accuracy, write_curve_csv)

cols = st.frozensets(st.integers(0, 200), max_size=30)


def test_all_predicted():
    assert accuracy({1, 2, 3}, {1, 2, 3, 9}) == 1.0


def test_half_predicted():
    assert accuracy({1, 2}, {1}) == 0.5


def test_nothing_predicted():
    assert accuracy({1}, set()) == 0.0


def test_empty_active_is_undefined_and_skipped():
    assert math.isnan(accuracy(set(), {1}))
    assert mean_defined([1.0, accuracy(set(), {1}), 0.0]) == 0.5
    assert math.isnan(mean_defined([]))


def test_sequence_accuracy_learned_sequence():
    trace = [({k}, {k}) for k in range(5)]
    assert sequence_accuracy(trace, 4) == [1.0, 1.0]


def test_sequence_accuracy_untrained():
    trace = [({k}, set()) for k in range(5)]
    assert sequence_accuracy(trace, 4) == [0.0, 0.0]


def test_sequence_accuracy_only_last_transition_learned():
    # XABCDE after the start pattern: only D -> E has converged
    trace = [({k}, set()) for k in range(5)]
    trace[-1] = ({4}, {4})
    assert sequence_accuracy(trace, 4) == [0.0, 1.0]


def test_sequence_accuracy_short_trace():
    assert sequence_accuracy([({1}, {1})], 4) == []


def test_window_one_is_identity():
    x = [0.1, 0.7, 0.3]
    assert moving_average(x, 1).tolist() == x


def test_constant_series_unchanged():
    assert moving_average([0.9] * 200, 20).tolist() == [0.9] * 200


def test_step_series_ramps_over_window():
    out = moving_average([0.0] * 10 + [1.0] * 10, 5)
    assert out[9] == 0.0
    assert out[10:15].tolist() == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0])
    assert out[14:].tolist() == [1.0] * 6


def test_moving_average_bad_window():
    with pytest.raises(ValueError):
        moving_average([1.0], 0)


def test_curve_drops_undefined_and_writes_csv(tmp_path):
    series = curve([0.0, float("nan"), 1.0], 2)
    assert series == [(0, 0.0, 0.0), (1, 1.0, 0.5)]
    p = tmp_path / "c.csv"
    write_curve_csv(p, series)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["presentation_index", "raw", "smoothed"]
    assert [float(v) for v in rows[2][1:]] == [1.0, 0.5]


def test_first_crossing():
    assert first_crossing([0.1, float("nan"), 0.95, 0.99], 0.9) == 2
    assert first_crossing([0.1], 0.9) is None


@given(st.frozensets(st.integers(0, 200), min_size=1, max_size=30), cols)
def test_accuracy_in_unit_interval(active, predicted):
    a = accuracy(active, predicted)
    assert 0.0 <= a <= 1.0
    assert (a == 1.0) == (active <= predicted)


@given(st.frozensets(st.integers(0, 200), min_size=1, max_size=30), cols, st.randoms())
def test_accuracy_invariant_under_relabelling(active, predicted, rnd):
    perm = list(range(201))
    rnd.shuffle(perm)
    assert accuracy({perm[c] for c in active}, {perm[c] for c in predicted}) == accuracy(active, predicted)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.randoms())
def test_mean_is_order_independent(values, rnd):
    shuffled = values[:]
    rnd.shuffle(shuffled)
    assert mean_defined(shuffled) == mean_defined(values)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 25))
def test_moving_average_bounded(values, window):
    out = moving_average(values, window)
    assert np.all(out >= min(values) - 1e-12) and np.all(out <= max(values) + 1e-12)
