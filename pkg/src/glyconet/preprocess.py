"""Series cleaning: grid resampling, outlier screening, and gap repair.

The cleaning order is fixed: snap to the grid, screen per-subject outliers by
the IQR rule, clamp to the physiologic band, then classify and fill gaps.
Outlier screening and clamping both turn values into missing readings in
place; only gap filling writes new values, and only for gaps short enough to
repair (linear up to 25 minutes, shape-preserving rational interpolation for
30 to 115 minutes). Holes of 120 minutes and longer stay open and later act
as hard boundaries for labeling and windowing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .domain import (
    GRID_MINUTES,
    PHYSIO_MAX_MGDL,
    PHYSIO_MIN_MGDL,
    GlucoseSeries,
)
from .errors import UsageError

logger = logging.getLogger(__name__)

SUPPORTED_RATES = (5, 15)

LINEAR_MAX_MINUTES = 25
STINEMAN_MIN_MINUTES = 30
STINEMAN_MAX_MINUTES = 115
OPEN_MIN_MINUTES = 120

LINEAR = "linear"
STINEMAN = "stineman"
LEFT_OPEN = "left_open"

MIN_VALUES_FOR_IQR = 4


@dataclass(frozen=True)
class Gap:
    """A maximal run of missing grid slots between two observations.

    ``start_offset`` is the offset (relative to the series t0) of the first
    missing slot. ``length_minutes`` is the time between the bounding
    observations minus one grid step, i.e. rate * number_of_missing_slots.
    Leading and trailing runs have no bounding observation on one side and are
    always left open.
    """

    start_offset: int
    length_minutes: int
    treatment: str


@dataclass
class GapReport:
    subject_id: str
    rate: int
    gaps: list[Gap]

    def count(self, treatment: str) -> int:
        return sum(1 for g in self.gaps if g.treatment == treatment)


def resample_to_grid(series: GlucoseSeries, rate: int = GRID_MINUTES) -> GlucoseSeries:
    """Snap a series onto the sampling grid.

    Each absolute timestamp moves to the nearest multiple of 5 minutes
    (round-half-to-even in grid units, so a hypothetical tie lands on the even
    multiple). For the coarse 15-minute rate, the 5-minute snap runs first and
    only points sitting on 15-minute multiples are kept. Points that collide
    on one grid slot collapse to the mean of their observed values.
    """
    if rate not in SUPPORTED_RATES:
        raise UsageError(f"unsupported sampling rate {rate}; expected one of {SUPPORTED_RATES}")
    if len(series) == 0:
        return GlucoseSeries(series.subject_id, series.t0 - series.t0 % rate,
                             np.empty(0, np.int64), np.empty(0, np.float64), rate)

    abs_t = series.abs_times.astype(np.float64)
    snapped = (np.rint(abs_t / GRID_MINUTES) * GRID_MINUTES).astype(np.int64)
    values = series.values
    if rate != GRID_MINUTES:
        keep = snapped % rate == 0
        snapped = snapped[keep]
        values = values[keep]
        if snapped.size == 0:
            return GlucoseSeries(series.subject_id, series.t0 - series.t0 % rate,
                                 np.empty(0, np.int64), np.empty(0, np.float64), rate)

    slots, inverse = np.unique(snapped, return_inverse=True)
    finite = ~np.isnan(values)
    sums = np.zeros(slots.size)
    counts = np.zeros(slots.size)
    np.add.at(sums, inverse[finite], values[finite])
    np.add.at(counts, inverse[finite], 1.0)
    merged = np.full(slots.size, np.nan)
    has_obs = counts > 0
    merged[has_obs] = sums[has_obs] / counts[has_obs]

    t0 = int(slots[0])
    return GlucoseSeries(series.subject_id, t0, slots - t0, merged, rate)


def remove_outliers_iqr(series: GlucoseSeries) -> GlucoseSeries:
    """Mark statistical outliers missing using per-subject Tukey fences.

    Quartiles use linear interpolation (numpy's default, the type-7 estimator);
    values strictly outside [Q1 - 1.5*IQR, Q3 + 1.5*IQR] become missing.
    With fewer than four observed values the screen is skipped with a warning,
    since quartiles of that little data are noise.
    """
    values = series.values
    obs = ~np.isnan(values)
    n_obs = int(obs.sum())
    if n_obs < MIN_VALUES_FOR_IQR:
        logger.warning("subject %s: only %d observed values, outlier screen skipped",
                       series.subject_id, n_obs)
        return series
    q1, q3 = np.percentile(values[obs], [25.0, 75.0])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    out = values.copy()
    out[obs & ((values < lo) | (values > hi))] = np.nan
    return series.with_values(out)


def clamp_physiologic(series: GlucoseSeries) -> GlucoseSeries:
    """Mark readings outside [40, 500] mg/dL missing. Values exactly on a bound stay."""
    values = series.values
    out = values.copy()
    bad = ~np.isnan(values) & ((values < PHYSIO_MIN_MGDL) | (values > PHYSIO_MAX_MGDL))
    out[bad] = np.nan
    return series.with_values(out)


def _treatment_for(length_minutes: int) -> str:
    if length_minutes <= LINEAR_MAX_MINUTES:
        return LINEAR
    if length_minutes <= STINEMAN_MAX_MINUTES:
        return STINEMAN
    return LEFT_OPEN


def classify_gaps(series: GlucoseSeries) -> GapReport:
    """Find every hole in a gridded series and decide its repair.

    A hole is a maximal run of missing grid slots, whether stored as NaN or
    simply absent between two offsets. Interior holes are classified by
    length: repairable by a line (<= 25 min), by shape-preserving
    interpolation (30 to 115 min), or left open (>= 120 min). Leading and
    trailing runs are always left open regardless of length.
    """
    if not series.is_gridded:
        raise UsageError(f"subject {series.subject_id}: series is not on the grid; resample first")
    gaps: list[Gap] = []
    offsets = series.offsets
    if len(series) == 0:
        return GapReport(series.subject_id, series.rate, gaps)

    obs_idx = np.flatnonzero(series.observed_mask)
    rate = series.rate
    if obs_idx.size == 0:
        length = int(offsets[-1] - offsets[0]) + rate
        gaps.append(Gap(int(offsets[0]), length, LEFT_OPEN))
        return GapReport(series.subject_id, rate, gaps)

    first, last = obs_idx[0], obs_idx[-1]
    if offsets[first] > offsets[0]:
        gaps.append(Gap(int(offsets[0]), int(offsets[first] - offsets[0]), LEFT_OPEN))
    for i, j in zip(obs_idx[:-1], obs_idx[1:]):
        span = int(offsets[j] - offsets[i])
        if span > rate:
            gaps.append(Gap(int(offsets[i]) + rate, span - rate, _treatment_for(span - rate)))
    if offsets[last] < offsets[-1]:
        gaps.append(Gap(int(offsets[last]) + rate, int(offsets[-1] - offsets[last]), LEFT_OPEN))
    return GapReport(series.subject_id, rate, gaps)


def _circle_slope(s_near: float, s_far: float, w_near: float, w_far: float) -> float:
    # Tangent slope of the circle through three points, evaluated at the middle
    # one: adjacent secants weighted by the opposite squared chord lengths.
    return (s_near * w_far + s_far * w_near) / (w_near + w_far)


def _capped(slope: float, secant: float) -> float:
    # Monotone guard: keep the anchor slope between 0 and three times the gap
    # secant (inclusive). Outside that interval the rational interpolant can
    # put a hump strictly inside the gap.
    lo, hi = sorted((0.0, 3.0 * secant))
    return float(min(max(slope, lo), hi))


def _stineman_values(x: np.ndarray,
                     xa: float, ya: float, xb: float, yb: float,
                     prev_pt: tuple[float, float] | None,
                     next_pt: tuple[float, float] | None) -> np.ndarray:
    """Rational shape-preserving interpolation between anchors (xa,ya)-(xb,yb).

    Anchor slopes come from the circle construction over the neighboring
    observed points; a missing neighbor degrades to the one-sided secant.
    """
    secant = (yb - ya) / (xb - xa)
    if prev_pt is None:
        slope_a = secant
    else:
        xp, yp = prev_pt
        s_prev = (ya - yp) / (xa - xp)
        w_prev = (xa - xp) ** 2 + (ya - yp) ** 2
        w_gap = (xb - xa) ** 2 + (yb - ya) ** 2
        slope_a = _circle_slope(s_prev, secant, w_prev, w_gap)
    if next_pt is None:
        slope_b = secant
    else:
        xn, yn = next_pt
        s_next = (yn - yb) / (xn - xb)
        w_next = (xn - xb) ** 2 + (yn - yb) ** 2
        w_gap = (xb - xa) ** 2 + (yb - ya) ** 2
        slope_b = _circle_slope(s_next, secant, w_next, w_gap)

    slope_a = _capped(slope_a, secant)
    slope_b = _capped(slope_b, secant)

    base = ya + secant * (x - xa)
    d1 = (slope_a - secant) * (x - xa)
    d2 = (slope_b - secant) * (x - xb)
    prod = d1 * d2
    out = base.copy()
    pos = prod > 0
    neg = prod < 0
    if pos.any():
        out[pos] += prod[pos] / (d1[pos] + d2[pos])
    if neg.any():
        out[neg] += (prod[neg] * (2.0 * x[neg] - xa - xb)
                     / ((d1[neg] - d2[neg]) * (xb - xa)))
    return out


def interpolate_linear(fill_offsets: np.ndarray,
                       xa: float, ya: float, xb: float, yb: float) -> np.ndarray:
    """Straight line through the gap's bounding observations."""
    return ya + (yb - ya) * (fill_offsets - xa) / (xb - xa)


def interpolate_stineman(fill_offsets: np.ndarray,
                         xa: float, ya: float, xb: float, yb: float,
                         prev_pt: tuple[float, float] | None = None,
                         next_pt: tuple[float, float] | None = None) -> np.ndarray:
    """Shape-preserving fill, clamped into the physiologic band."""
    raw = _stineman_values(np.asarray(fill_offsets, dtype=np.float64),
                           xa, ya, xb, yb, prev_pt, next_pt)
    return np.clip(raw, PHYSIO_MIN_MGDL, PHYSIO_MAX_MGDL)


def impute_series(series: GlucoseSeries) -> tuple[GlucoseSeries, GapReport]:
    """Fill repairable gaps and drop the rest of the missing slots.

    Returns the repaired series (observed and filled readings only, so
    remaining holes appear as offset jumps) together with the gap report.
    Idempotent: a second pass finds only left-open gaps and changes nothing.
    """
    report = classify_gaps(series)
    offsets = series.offsets
    values = series.values
    obs_idx = np.flatnonzero(series.observed_mask)
    if obs_idx.size == 0:
        empty = GlucoseSeries(series.subject_id, series.t0, np.empty(0, np.int64),
                              np.empty(0, np.float64), series.rate)
        return empty, report

    obs_off = offsets[obs_idx].astype(np.float64)
    obs_val = values[obs_idx]
    rate = series.rate

    pieces_off = [offsets[obs_idx]]
    pieces_val = [obs_val.copy()]
    for gap in report.gaps:
        if gap.treatment == LEFT_OPEN:
            continue
        xa = gap.start_offset - rate
        xb = gap.start_offset + gap.length_minutes
        a = int(np.searchsorted(obs_off, xa))
        b = int(np.searchsorted(obs_off, xb))
        fill = np.arange(gap.start_offset, xb, rate, dtype=np.int64)
        ya, yb = float(obs_val[a]), float(obs_val[b])
        if gap.treatment == LINEAR:
            filled = interpolate_linear(fill.astype(np.float64), xa, ya, xb, yb)
        else:
            prev_pt = (float(obs_off[a - 1]), float(obs_val[a - 1])) if a > 0 else None
            next_pt = (float(obs_off[b + 1]), float(obs_val[b + 1])) if b + 1 < obs_off.size else None
            filled = interpolate_stineman(fill.astype(np.float64), xa, ya, xb, yb,
                                          prev_pt, next_pt)
        pieces_off.append(fill)
        pieces_val.append(filled)

    all_off = np.concatenate(pieces_off)
    all_val = np.concatenate(pieces_val)
    order = np.argsort(all_off, kind="stable")
    all_off = all_off[order]
    all_val = all_val[order]
    t0 = int(series.t0 + all_off[0])
    repaired = GlucoseSeries(series.subject_id, t0, all_off - all_off[0], all_val, rate)
    return repaired, report


def clean_series(series: GlucoseSeries, rate: int = GRID_MINUTES) -> tuple[GlucoseSeries, GapReport]:
    """Full cleaning chain: resample, IQR screen, clamp, classify and fill gaps."""
    gridded = resample_to_grid(series, rate)
    screened = remove_outliers_iqr(gridded)
    clamped = clamp_physiologic(screened)
    return impute_series(clamped)


def write_gap_reports_csv(path, reports: list[GapReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "start_offset", "length_minutes", "treatment"])
        for report in reports:
            for gap in report.gaps:
                writer.writerow([report.subject_id, gap.start_offset,
                                 gap.length_minutes, gap.treatment])
