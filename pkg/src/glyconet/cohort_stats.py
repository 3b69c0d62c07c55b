"""Cohort descriptive statistics and the age-split significance test.

`tukey_hsd` runs Tukey's honestly-significant-difference test over glucose
observations pooled per group. Critical values of the studentized range
(alpha = 0.05) come from an embedded table for k = 2..10 groups and
df in {10, 20, 30, 60, 120, inf}; rows in between are interpolated in log(df),
and beyond the last finite row the value blends toward the asymptotic row with
weight 120/df. Every table cell was generated from an independent numerical
quantile routine and is re-checked against it in the test suite.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .domain import GlucoseSeries, Subject
from .errors import DataError, UsageError

logger = logging.getLogger(__name__)

SUPPORTED_ALPHA = 0.05

_Q_KS = tuple(range(2, 11))
_Q_DFS = (10.0, 20.0, 30.0, 60.0, 120.0, math.inf)
# Upper 5% studentized range quantiles, rows indexed by df, columns by k=2..10.
_Q_TABLE: dict[float, tuple[float, ...]] = {
    10.0: (3.151064, 3.876777, 4.326582, 4.654293, 4.912016, 5.124166, 5.304238, 5.460499, 5.598386),
    20.0: (2.949998, 3.577935, 3.958294, 4.231857, 4.445237, 4.619908, 4.767584, 4.895365, 5.007883),
    30.0: (2.888209, 3.486420, 3.845401, 4.102079, 4.301464, 4.464177, 4.601415, 4.719938, 4.824141),
    60.0: (2.828848, 3.398661, 3.737089, 3.977418, 4.163161, 4.314143, 4.441079, 4.550414, 4.646324),
    120.0: (2.800044, 3.356138, 3.684589, 3.916938, 4.095986, 4.241182, 4.363013, 4.467775, 4.559538),
    math.inf: (2.771808, 3.314493, 3.633160, 3.857656, 4.030092, 4.169554, 4.286309, 4.386509, 4.474124),
}


def q_critical(n_groups: int, df: float, alpha: float = SUPPORTED_ALPHA) -> float:
    """Studentized range critical value q(alpha; k, df) from the embedded table."""
    if alpha != SUPPORTED_ALPHA:
        raise UsageError(f"only alpha={SUPPORTED_ALPHA} is supported, got {alpha}")
    if n_groups not in _Q_KS:
        raise UsageError(f"group count {n_groups} outside supported range {_Q_KS[0]}..{_Q_KS[-1]}")
    if df < _Q_DFS[0]:
        raise UsageError(f"df={df} below table support (>= {_Q_DFS[0]} required)")
    col = n_groups - 2
    for grid_df in _Q_DFS:
        if df == grid_df:
            return _Q_TABLE[grid_df][col]
    if df > 120.0:
        q_last = _Q_TABLE[120.0][col]
        q_inf = _Q_TABLE[math.inf][col]
        w = 120.0 / df
        return q_inf + (q_last - q_inf) * w
    finite = [d for d in _Q_DFS if not math.isinf(d)]
    hi_pos = next(i for i, d in enumerate(finite) if d > df)
    d0, d1 = finite[hi_pos - 1], finite[hi_pos]
    q0, q1 = _Q_TABLE[d0][col], _Q_TABLE[d1][col]
    w = (math.log(df) - math.log(d0)) / (math.log(d1) - math.log(d0))
    return q0 + (q1 - q0) * w


@dataclass(frozen=True)
class TukeyPair:
    group_a: str
    group_b: str
    mean_diff: float  # mean(b) - mean(a)
    ci_lo: float
    ci_hi: float
    reject: bool


@dataclass(frozen=True)
class TukeyResult:
    pairs: tuple[TukeyPair, ...]
    mse: float
    df: int
    q: float
    alpha: float = SUPPORTED_ALPHA

    @property
    def all_significant(self) -> bool:
        return all(p.reject for p in self.pairs)


def tukey_hsd(groups: Mapping[str, Sequence[float]], alpha: float = SUPPORTED_ALPHA) -> TukeyResult:
    """All-pairs mean comparison with simultaneous 1-alpha confidence intervals.

    Each interval is mean_diff +- (q / sqrt(2)) * sqrt(MSE * (1/n_a + 1/n_b))
    with MSE the pooled within-group variance on N - k degrees of freedom.
    A pair is significant when its interval excludes zero. Pairs are emitted
    in the iteration order of `groups`.
    """
    if len(groups) < 2:
        raise UsageError(f"need at least 2 groups, got {len(groups)}")
    arrays: dict[str, np.ndarray] = {}
    for name, vals in groups.items():
        arr = np.asarray(vals, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise DataError(f"group {name!r} needs at least 2 values, got {arr.size}")
        if np.isnan(arr).any():
            raise DataError(f"group {name!r} contains missing values")
        arrays[name] = arr

    n_total = sum(a.size for a in arrays.values())
    k = len(arrays)
    df = n_total - k
    means = {name: float(a.mean()) for name, a in arrays.items()}
    ss_within = sum(float(((a - means[name]) ** 2).sum()) for name, a in arrays.items())
    mse = ss_within / df
    q = q_critical(k, float(df), alpha)

    pairs = []
    for a, b in combinations(arrays, 2):
        na, nb = arrays[a].size, arrays[b].size
        diff = means[b] - means[a]
        half = (q / math.sqrt(2.0)) * math.sqrt(mse * (1.0 / na + 1.0 / nb))
        lo, hi = diff - half, diff + half
        pairs.append(TukeyPair(a, b, diff, lo, hi, reject=(lo > 0.0 or hi < 0.0)))
    return TukeyResult(tuple(pairs), mse, df, q, alpha)


@dataclass(frozen=True)
class AgeSummaryRow:
    age_years: int
    n_subjects: int
    n_values: int
    mean: float
    std: float
    vmin: float
    vmax: float


def summary_per_age(series_by_id: Mapping[str, GlucoseSeries],
                    subjects: Mapping[str, Subject]) -> list[AgeSummaryRow]:
    """Observed-glucose summary pooled per whole-year age. Population std (ddof=0)."""
    pools: dict[int, list[np.ndarray]] = {}
    counts: dict[int, int] = {}
    for sid, series in series_by_id.items():
        subject = subjects.get(sid)
        if subject is None or subject.age_years is None:
            logger.warning("subject %s has no recorded age, skipped in per-age summary", sid)
            continue
        vals = series.values[series.observed_mask]
        if vals.size == 0:
            continue
        pools.setdefault(subject.age_years, []).append(vals)
        counts[subject.age_years] = counts.get(subject.age_years, 0) + 1
    rows = []
    for age in sorted(pools):
        vals = np.concatenate(pools[age])
        rows.append(AgeSummaryRow(age, counts[age], int(vals.size), float(vals.mean()),
                                  float(vals.std()), float(vals.min()), float(vals.max())))
    return rows


@dataclass
class SplitEvaluation:
    edges: tuple[int, ...]
    feasible: bool
    all_pairs_significant: bool
    result: TukeyResult | None
    group_sizes: dict[str, int]
    notes: list[str] = field(default_factory=list)


def _bin_labels(edges: Sequence[int]) -> list[str]:
    labels = []
    lo = 0
    for edge in edges:
        labels.append(f"{lo}-{edge - 1}")
        lo = edge
    labels.append(f"{lo}+")
    return labels


def evaluate_split(series_by_id: Mapping[str, GlucoseSeries],
                   subjects: Mapping[str, Subject],
                   edges: Sequence[int]) -> SplitEvaluation:
    """Score a candidate set of age bin edges by all-pairs separability.

    Observations are pooled per candidate bin across subjects. A bin that
    captures no subjects makes the split infeasible (reported, not raised).
    """
    edges = tuple(int(e) for e in edges)
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] <= 0:
        raise UsageError(f"edges must be strictly increasing positive ages, got {edges}")
    labels = _bin_labels(edges)
    pools: dict[str, list[np.ndarray]] = {name: [] for name in labels}
    sizes: dict[str, int] = {name: 0 for name in labels}
    notes: list[str] = []
    for sid, series in series_by_id.items():
        subject = subjects.get(sid)
        if subject is None or subject.age_years is None:
            notes.append(f"subject {sid} has no recorded age, excluded")
            continue
        pos = int(np.searchsorted(np.asarray(edges), subject.age_years, side="right"))
        name = labels[pos]
        vals = series.values[series.observed_mask]
        pools[name].append(vals)
        sizes[name] += 1

    empty = [name for name, n in sizes.items() if n == 0]
    if empty:
        notes.append(f"bins with no subjects: {empty}")
        return SplitEvaluation(edges, False, False, None, sizes, notes)
    groups = {name: np.concatenate(pools[name]) for name in labels}
    thin = [name for name, vals in groups.items() if vals.size < 2]
    if thin:
        notes.append(f"bins with under 2 observations: {thin}")
        return SplitEvaluation(edges, False, False, None, sizes, notes)
    result = tukey_hsd(groups)
    return SplitEvaluation(edges, True, result.all_significant, result, sizes, notes)
