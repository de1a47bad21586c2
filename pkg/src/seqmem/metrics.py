"""Prediction accuracy and learning-curve helpers."""
from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNDEFINED = float("nan")


@dataclass(frozen=True)
class AccuracySample:
    active_columns: frozenset
    predicted_columns: frozenset
    value: float


def accuracy(active: Iterable[int], predicted: Iterable[int]) -> float:
    """Fraction of active columns that were predicted one step earlier.

    Returns NaN for an empty active set; callers drop NaN before averaging.
    """
    active = set(active)
    if not active:
        return UNDEFINED
    return len(active & set(predicted)) / len(active)


def is_defined(x: float) -> bool:
    return not math.isnan(x)


def mean_defined(values: Iterable[float]) -> float:
    """Mean of the defined values; exact summation makes it order independent."""
    vals = [v for v in values if is_defined(v)]
    return math.fsum(vals) / len(vals) if vals else UNDEFINED


def sequence_accuracy(trace: Sequence[tuple[Iterable[int], Iterable[int]]],
                      measure_from_element: int = 4) -> list[float]:
    """Per-step accuracy over a presented sequence.

    ``trace[k]`` holds (active columns, columns predicted before it) for the
    element at 1-based position ``k + 1`` after the start pattern. Only
    positions ``>= measure_from_element`` are sampled.
    """
    out = []
    for k, (active, predicted) in enumerate(trace):
        if k + 1 >= measure_from_element:
            v = accuracy(active, predicted)
            if is_defined(v):
                out.append(v)
    return out


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = [Fraction(float(v)) for v in values]
    # exact rational window sums, rounded once: no drift, constants stay constant
    out = np.empty(len(x))
    acc = Fraction(0)
    for i, v in enumerate(x):
        acc += v
        if i >= window:
            acc -= x[i - window]
        out[i] = float(acc / min(i + 1, window))
    return out


def curve(values: Sequence[float], smoothing_window: int = 20) -> list[tuple[int, float, float]]:
    vals = [v for v in values if is_defined(v)]
    smooth = moving_average(vals, smoothing_window)
    return [(i, float(v), float(s)) for i, (v, s) in enumerate(zip(vals, smooth))]


def write_curve_csv(path: str | Path, series: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["presentation_index", "raw", "smoothed"])
        for i, raw, sm in series:
            w.writerow([i, repr(raw), repr(sm)])


def first_crossing(values: Sequence[float], threshold: float) -> int | None:
    """Index of the first value ``>= threshold`` (None if never reached)."""
    for i, v in enumerate(values):
        if is_defined(v) and v >= threshold:
            return i
    return None
