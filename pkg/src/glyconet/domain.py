"""Core value types: glucose series, subjects, age groups, and lead-time class sets.

Conventions used everywhere downstream:

* time is integer minutes since the epoch; a series lives on a fixed grid
  (5-minute canonical, 15-minute coarse variant),
* glucose is mg/dL as float64; a missing reading is ``math.nan`` (always written
  and tested through :data:`MISSING` / :func:`is_missing`, never an accidental NaN),
* a reading at or below 70 mg/dL is a hypoglycemic event (class 0),
* lead-time classes count minutes forward to the next event; anything beyond
  120 minutes is no-risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DataError

GRID_MINUTES = 5
COARSE_GRID_MINUTES = 15
HYPO_THRESHOLD_MGDL = 70.0
PHYSIO_MIN_MGDL = 40.0
PHYSIO_MAX_MGDL = 500.0
HORIZON_MINUTES = 120

EVENT_CLASS = 0
NO_RISK = -1
UNLABELED = -2

MISSING = math.nan


def is_missing(values) -> np.ndarray | bool:
    """True where a glucose value is the missing sentinel."""
    return np.isnan(values)


class AgeGroup(Enum):
    G0_13 = "0-13"
    G14_20 = "14-20"
    G21_44 = "21-44"
    G45_PLUS = "45+"
    UNKNOWN = "unknown"


def age_group_of(age_years: int | None) -> AgeGroup:
    """Map an age in whole years onto its cohort group.

    ``None`` (age not recorded) maps to UNKNOWN. Negative ages are a caller bug.
    """
    if age_years is None:
        return AgeGroup.UNKNOWN
    if age_years < 0:
        raise ValueError(f"age must be non-negative, got {age_years}")
    if age_years <= 13:
        return AgeGroup.G0_13
    if age_years <= 20:
        return AgeGroup.G14_20
    if age_years <= 44:
        return AgeGroup.G21_44
    return AgeGroup.G45_PLUS


@dataclass(frozen=True)
class Subject:
    subject_id: str
    age_years: int | None = None
    sex: str = ""

    @property
    def age_group(self) -> AgeGroup:
        return age_group_of(self.age_years)


@dataclass(frozen=True)
class GlucoseSeries:
    """One subject's glucose track.

    ``offsets`` are minutes relative to ``t0`` (absolute minutes since epoch),
    strictly increasing, int64. ``values`` is float64 with NaN marking missing
    readings. Grid slots may also simply be absent from ``offsets``; consumers
    treat a jump in offsets and a stored NaN the same way (a hole).

    Arrays are frozen (non-writeable) on construction; derive new series with
    :meth:`with_values` or by constructing fresh.
    """

    subject_id: str
    t0: int
    offsets: np.ndarray
    values: np.ndarray
    rate: int = GRID_MINUTES

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if offsets.ndim != 1 or values.ndim != 1 or offsets.shape != values.shape:
            raise ValueError("offsets and values must be 1-D arrays of equal length")
        if offsets.size and offsets[0] < 0:
            raise ValueError("offsets must be non-negative")
        if offsets.size > 1 and not (np.diff(offsets) > 0).all():
            raise ValueError("offsets must be strictly increasing")
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        offsets.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.offsets.size)

    @property
    def abs_times(self) -> np.ndarray:
        return self.t0 + self.offsets

    @property
    def observed_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def n_observed(self) -> int:
        return int(self.observed_mask.sum())

    @property
    def is_gridded(self) -> bool:
        """True when t0 and every offset sit on multiples of the sampling rate."""
        if self.t0 % self.rate != 0:
            return False
        return bool((self.offsets % self.rate == 0).all())

    def with_values(self, values: np.ndarray) -> "GlucoseSeries":
        """Same grid, new values."""
        return GlucoseSeries(self.subject_id, self.t0, self.offsets.copy(), values, self.rate)

    def trimmed(self) -> "GlucoseSeries":
        """Drop leading/trailing missing readings and re-anchor t0.

        A series canonically starts and ends with an observation; leading and
        trailing holes carry no information and are never imputed.
        """
        obs = np.flatnonzero(self.observed_mask)
        if obs.size == 0:
            return GlucoseSeries(self.subject_id, self.t0, np.empty(0, np.int64),
                                 np.empty(0, np.float64), self.rate)
        lo, hi = obs[0], obs[-1] + 1
        offsets = self.offsets[lo:hi]
        return GlucoseSeries(self.subject_id, int(self.t0 + offsets[0]),
                             offsets - offsets[0], self.values[lo:hi].copy(), self.rate)


@dataclass(frozen=True)
class ClassBin:
    """One lead-time class: minutes-to-event in [lo, hi], inclusive both ends."""

    index: int
    lo: int
    hi: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("bin index 0 is reserved for the event class")
        if not (0 < self.lo <= self.hi <= HORIZON_MINUTES):
            raise ValueError(f"bin [{self.lo}, {self.hi}] outside (0, {HORIZON_MINUTES}]")


@dataclass(frozen=True)
class ClassSet:
    """A lead-time bin layout. Class 0 is the event itself; bins are classes 1..C-1.

    Construction checks that the bins tile every grid point in [5, 120] exactly
    once, so `class_of_delta` is total on the grid.
    """

    key: str
    bins: tuple[ClassBin, ...]
    rate: int = GRID_MINUTES

    def __post_init__(self):
        expected = list(range(1, len(self.bins) + 1))
        if [b.index for b in self.bins] != expected:
            raise ValueError("bins must be consecutive classes 1..C-1 in order")
        covered = {}
        for b in self.bins:
            for m in range(b.lo, b.hi + 1, self.rate):
                if m in covered:
                    raise ValueError(f"minute {m} covered by bins {covered[m]} and {b.index}")
                covered[m] = b.index
        grid = set(range(self.rate, HORIZON_MINUTES + 1, self.rate))
        missing = grid - set(covered)
        if missing:
            raise ValueError(f"bins leave grid minutes uncovered: {sorted(missing)}")

    @property
    def n_classes(self) -> int:
        """Total classes including the event class."""
        return len(self.bins) + 1

    def class_of_delta(self, delta_minutes: int) -> int:
        """Class index for a point `delta_minutes` before the next event.

        Delta must be a positive multiple of the grid rate; values beyond the
        horizon answer NO_RISK. Non-positive delta is a caller bug (the event
        point itself is class 0 by the threshold rule, not by distance).
        """
        if delta_minutes <= 0:
            raise ValueError(f"delta must be positive, got {delta_minutes}")
        if delta_minutes > HORIZON_MINUTES:
            return NO_RISK
        if delta_minutes % self.rate != 0:
            raise ValueError(f"delta {delta_minutes} is not on the {self.rate}-minute grid")
        for b in self.bins:
            if b.lo <= delta_minutes <= b.hi:
                return b.index
        raise AssertionError("unreachable: bins tile the grid")  # pragma: no cover


def _bins(*spans: tuple[int, int]) -> tuple[ClassBin, ...]:
    return tuple(ClassBin(i, lo, hi) for i, (lo, hi) in enumerate(spans, start=1))


#: The three supported bin layouts, finest lead-time resolution first.
CLASS_SETS: dict[str, ClassSet] = {
    "I": ClassSet("I", _bins((5, 10), (15, 25), (30, 55), (60, 120))),
    "II": ClassSet("II", _bins((5, 15), (20, 45), (50, 120))),
    "III": ClassSet("III", _bins((5, 20), (25, 60), (65, 120))),
}


def get_class_set(key: str) -> ClassSet:
    try:
        return CLASS_SETS[key]
    except KeyError:
        raise DataError(f"unknown class set {key!r}; expected one of {sorted(CLASS_SETS)}") from None


@dataclass(frozen=True)
class WindowSample:
    """A single model input: L normalized readings ending at end_time."""

    subject_id: str
    end_time: int
    features: np.ndarray
    label: int
    age_group: AgeGroup = AgeGroup.UNKNOWN

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
