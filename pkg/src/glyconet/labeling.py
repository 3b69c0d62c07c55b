"""Lead-time class assignment.

Every reading at or below 70 mg/dL is an event (class 0). Any other reading is
labeled by how many minutes forward the next event lies, bucketed by the
chosen class set; beyond 120 minutes (or with no future event in reach) the
point is no-risk. Distance is only counted inside a contiguous run of
observations: left-open holes break the series into segments and lead time is
never measured across them.

Two independent routes produce the labels. `assign_classes` computes the
forward distance per point directly; `assign_classes_by_sweep` walks class
bins outward from every event and marks not-yet-assigned points. They are
equivalent by construction and the test suite holds them to exact agreement
on randomized series.
"""

from __future__ import annotations

import csv
from collections import Counter

import numpy as np

from .domain import (
    EVENT_CLASS,
    HORIZON_MINUTES,
    HYPO_THRESHOLD_MGDL,
    NO_RISK,
    UNLABELED,
    ClassSet,
    GlucoseSeries,
)
from .errors import UsageError

RISK = 1
BINARY_NO_RISK = 0


def segment_bounds(series: GlucoseSeries) -> list[tuple[int, int]]:
    """Half-open index ranges of maximal contiguous observed runs.

    Contiguous means consecutive grid offsets (one rate step apart) with
    observed values; a stored NaN or an offset jump ends the run.
    """
    n = len(series)
    if n == 0:
        return []
    observed = series.observed_mask
    breaks = np.zeros(n, dtype=bool)
    breaks[0] = True
    step = np.diff(series.offsets) != series.rate
    breaks[1:] = step
    bounds: list[tuple[int, int]] = []
    start = None
    for i in range(n):
        if not observed[i]:
            if start is not None:
                bounds.append((start, i))
                start = None
            continue
        if breaks[i] and start is not None:
            bounds.append((start, i))
            start = None
        if start is None:
            start = i
    if start is not None:
        bounds.append((start, n))
    return bounds


def _check_gridded(series: GlucoseSeries) -> None:
    if not series.is_gridded:
        raise UsageError(f"subject {series.subject_id}: label input must be on the grid")


def _delta_lut(class_set: ClassSet, rate: int) -> np.ndarray:
    """Class index per forward distance in grid steps (index 0 unused)."""
    steps = HORIZON_MINUTES // rate
    lut = np.full(steps + 1, NO_RISK, dtype=np.int64)
    for b in class_set.bins:
        lut[b.lo // rate: b.hi // rate + 1] = b.index
    return lut


def assign_classes(series: GlucoseSeries, class_set: ClassSet) -> np.ndarray:
    """Labels aligned with series.values, via forward distance to the next event."""
    _check_gridded(series)
    n = len(series)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    rate = series.rate
    lut = _delta_lut(class_set, rate)
    max_steps = HORIZON_MINUTES // rate
    for lo, hi in segment_bounds(series):
        vals = series.values[lo:hi]
        m = hi - lo
        ev = vals <= HYPO_THRESHOLD_MGDL
        pos = np.where(ev, np.arange(m), m)
        nxt = np.minimum.accumulate(pos[::-1])[::-1]
        steps = nxt - np.arange(m)
        seg = np.full(m, NO_RISK, dtype=np.int64)
        reachable = (nxt < m) & ~ev & (steps <= max_steps)
        seg[reachable] = lut[steps[reachable]]
        seg[ev] = EVENT_CLASS
        labels[lo:hi] = seg
    return labels


def assign_classes_by_sweep(series: GlucoseSeries, class_set: ClassSet) -> np.ndarray:
    """Labels via the event-centered sweep: class 0 first, then each bin
    outward, never reassigning a point that already has a class."""
    _check_gridded(series)
    n = len(series)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    rate = series.rate
    for lo, hi in segment_bounds(series):
        vals = series.values[lo:hi]
        m = hi - lo
        seg = np.full(m, UNLABELED, dtype=np.int64)
        events = np.flatnonzero(vals <= HYPO_THRESHOLD_MGDL)
        seg[events] = EVENT_CLASS
        for b in class_set.bins:
            lo_steps = b.lo // rate
            hi_steps = b.hi // rate
            ends = events - lo_steps
            keep = ends >= 0
            if not keep.any():
                continue
            marks = np.zeros(m + 1, dtype=np.int64)
            starts = np.maximum(events[keep] - hi_steps, 0)
            np.add.at(marks, starts, 1)
            np.add.at(marks, ends[keep] + 1, -1)
            covered = np.cumsum(marks[:m]) > 0
            seg[covered & (seg == UNLABELED)] = b.index
        seg[seg == UNLABELED] = NO_RISK
        labels[lo:hi] = seg
    return labels


def assign_binary_risk(series: GlucoseSeries) -> np.ndarray:
    """Binary labels: 1 when an event lies within the 120-minute horizon (or
    the point is itself an event), 0 otherwise. Encoded as proper class
    indices so the same training path handles the two-class case."""
    _check_gridded(series)
    n = len(series)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    rate = series.rate
    max_steps = HORIZON_MINUTES // rate
    for lo, hi in segment_bounds(series):
        vals = series.values[lo:hi]
        m = hi - lo
        ev = vals <= HYPO_THRESHOLD_MGDL
        pos = np.where(ev, np.arange(m), m)
        nxt = np.minimum.accumulate(pos[::-1])[::-1]
        steps = nxt - np.arange(m)
        seg = np.where((nxt < m) & (steps <= max_steps), RISK, BINARY_NO_RISK)
        labels[lo:hi] = seg
    return labels


def class_distribution(label_arrays) -> dict[int, int]:
    """Counts per label over a collection of labeled series (UNLABELED excluded)."""
    counts: Counter[int] = Counter()
    for labels in label_arrays:
        values, freqs = np.unique(np.asarray(labels), return_counts=True)
        for v, f in zip(values.tolist(), freqs.tolist()):
            if v != UNLABELED:
                counts[int(v)] += int(f)
    return dict(sorted(counts.items()))


def write_class_distribution_csv(path, distribution: dict[int, int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "count"])
        for label, count in sorted(distribution.items()):
            writer.writerow([label, count])
