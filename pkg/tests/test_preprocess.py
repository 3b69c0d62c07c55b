import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glyconet.domain import GlucoseSeries, PHYSIO_MAX_MGDL, PHYSIO_MIN_MGDL
from glyconet.errors import UsageError
from glyconet.preprocess import (LEFT_OPEN, LINEAR, STINEMAN, classify_gaps,
                                 clamp_physiologic, clean_series,
                                 impute_series, interpolate_linear,
                                 interpolate_stineman, remove_outliers_iqr,
                                 resample_to_grid)


def series_at(abs_minutes, values, sid="s1", rate=5):
    abs_minutes = np.asarray(abs_minutes, dtype=np.int64)
    return GlucoseSeries(sid, int(abs_minutes[0]),
                         abs_minutes - abs_minutes[0],
                         np.asarray(values, dtype=np.float64), rate)


# --- resampling -------------------------------------------------------------

def test_resample_snaps_to_nearest_multiple_of_five():
    # 7 -> 5 (remainder 2 rounds down), 8 -> 10 (remainder 3 rounds up)
    s = series_at([7, 18], [100.0, 110.0])
    g = resample_to_grid(s)
    assert g.abs_times.tolist() == [5, 20]
    assert g.values.tolist() == [100.0, 110.0]
    assert g.is_gridded


def test_resample_collision_takes_mean_of_observed():
    # 4 and 6 both snap to slot 5
    s = series_at([4, 6, 14], [100.0, 104.0, 120.0])
    g = resample_to_grid(s)
    assert g.abs_times.tolist() == [5, 15]
    assert g.values.tolist() == [102.0, 120.0]


def test_resample_collision_with_missing_keeps_observed_value():
    s = GlucoseSeries("s1", 4, np.array([0, 2]), np.array([math.nan, 104.0]))
    g = resample_to_grid(s)
    assert g.abs_times.tolist() == [5]
    assert g.values.tolist() == [104.0]


def test_resample_to_coarse_grid_keeps_quarter_hour_slots_only():
    s = series_at([0, 5, 10, 15, 30], [1.0, 2.0, 3.0, 4.0, 5.0])
    g = resample_to_grid(s, rate=15)
    assert g.rate == 15
    assert g.abs_times.tolist() == [0, 15, 30]
    assert g.values.tolist() == [1.0, 4.0, 5.0]


def test_resample_rejects_unsupported_rate():
    s = series_at([0, 5], [1.0, 2.0])
    with pytest.raises(UsageError):
        resample_to_grid(s, rate=7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=5000), min_size=1,
                max_size=40, unique=True))
def test_resample_output_is_always_gridded_and_sorted(minutes):
    minutes = sorted(minutes)
    s = series_at(minutes, np.linspace(80, 120, len(minutes)))
    g = resample_to_grid(s)
    assert g.is_gridded
    assert (np.diff(g.offsets) > 0).all()
    # every observation lands somewhere: totals are preserved under merging
    assert g.n_observed <= len(s)
    assert g.n_observed >= 1


# --- outlier screen and clamp ----------------------------------------------

def test_iqr_fences_hand_computed():
    # sorted obs [50, 60, 70, 80, 90, 500]; type-7 quartiles:
    # Q1 at rank 1.25 -> 62.5, Q3 at rank 3.75 -> 87.5, IQR 25
    # fences [25.0, 125.0]: only 500 is outside
    s = series_at([0, 5, 10, 15, 20, 25], [50, 60, 70, 80, 90, 500])
    out = remove_outliers_iqr(s)
    assert math.isnan(out.values[5])
    assert out.values[:5].tolist() == [50, 60, 70, 80, 90]


def test_iqr_fences_are_strict_boundaries_survive():
    # constant data: IQR 0, fences collapse to the value itself; equality stays
    s = series_at([0, 5, 10, 15], [100.0, 100.0, 100.0, 100.0])
    out = remove_outliers_iqr(s)
    assert out.values.tolist() == [100.0] * 4


def test_iqr_skipped_below_four_observed_values(caplog):
    s = series_at([0, 5, 10], [100.0, 100.0, 100000.0])
    with caplog.at_level("WARNING"):
        out = remove_outliers_iqr(s)
    assert out.values.tolist() == [100.0, 100.0, 100000.0]
    assert any("outlier screen skipped" in r.message for r in caplog.records)


def test_clamp_marks_out_of_band_missing_and_keeps_bounds():
    s = series_at([0, 5, 10, 15, 20], [39.9, 40.0, 250.0, 500.0, 500.1])
    out = clamp_physiologic(s)
    assert math.isnan(out.values[0])
    assert math.isnan(out.values[4])
    assert out.values[1] == 40.0
    assert out.values[3] == 500.0


def test_screen_runs_before_clamp_in_full_chain():
    # one absurd value (1e6) inflates the upper fence enough that a merely
    # unphysiologic 495 passes the IQR screen; the clamp must still not
    # remove it (495 is in band) while 1e6 must be gone either way
    vals = [100, 102, 98, 101, 99, 100, 495, 1e6]
    s = series_at(list(range(0, 40, 5)), vals)
    cleaned, _ = clean_series(s)
    assert 1e6 not in cleaned.values
    assert 495 not in cleaned.values  # IQR fence catches it before the clamp


# --- gap classification ------------------------------------------------------

def test_gap_lengths_route_to_documented_treatments():
    # holes of 5..25 -> linear, 30..115 -> stineman, >= 120 -> left open
    for missing_slots, expected in [(1, LINEAR), (5, LINEAR), (6, STINEMAN),
                                    (23, STINEMAN), (24, LEFT_OPEN), (40, LEFT_OPEN)]:
        offsets = [0, 5] + [10 + 5 * missing_slots, 15 + 5 * missing_slots]
        s = series_at(offsets, [100.0, 100.0, 100.0, 100.0])
        report = classify_gaps(s)
        assert len(report.gaps) == 1
        gap = report.gaps[0]
        assert gap.length_minutes == 5 * missing_slots
        assert gap.treatment == expected, f"{missing_slots} slots"


def test_gap_found_whether_stored_as_nan_or_absent_offset():
    stored = series_at([0, 5, 10, 15], [100.0, math.nan, math.nan, 100.0])
    absent = series_at([0, 15], [100.0, 100.0])
    for s in (stored, absent):
        report = classify_gaps(s)
        assert [(g.start_offset, g.length_minutes, g.treatment) for g in report.gaps] \
            == [(5, 10, LINEAR)]


def test_leading_and_trailing_runs_always_left_open():
    s = series_at([0, 5, 10, 15], [math.nan, 100.0, 110.0, math.nan])
    report = classify_gaps(s)
    assert [(g.start_offset, g.treatment) for g in report.gaps] \
        == [(0, LEFT_OPEN), (15, LEFT_OPEN)]


def test_classify_gaps_requires_gridded_series():
    s = GlucoseSeries("s1", 0, np.array([0, 7]), np.array([1.0, 2.0]))
    with pytest.raises(UsageError):
        classify_gaps(s)


# --- interpolation ------------------------------------------------------------

def test_linear_fill_matches_closed_form():
    fill = np.array([5.0, 10.0, 15.0])
    got = interpolate_linear(fill, 0.0, 100.0, 20.0, 140.0)
    assert np.allclose(got, 100.0 + 2.0 * fill, atol=0, rtol=0)


def test_stineman_is_exact_at_the_anchors():
    at_anchors = np.array([0.0, 60.0])
    got = interpolate_stineman(at_anchors, 0.0, 100.0, 60.0, 150.0,
                               prev_pt=(-5.0, 90.0), next_pt=(65.0, 160.0))
    assert got[0] == pytest.approx(100.0, abs=1e-12)
    assert got[1] == pytest.approx(150.0, abs=1e-12)


def test_stineman_fill_is_clamped_to_physiologic_band():
    got = interpolate_stineman(np.array([30.0]), 0.0, 41.0, 60.0, 40.0,
                               prev_pt=(-5.0, 400.0))
    assert got.min() >= PHYSIO_MIN_MGDL
    assert got.max() <= PHYSIO_MAX_MGDL


@settings(max_examples=150, deadline=None)
@given(
    ya=st.floats(min_value=45, max_value=300),
    yb=st.floats(min_value=45, max_value=300),
    prev_y=st.floats(min_value=45, max_value=300),
    next_y=st.floats(min_value=45, max_value=300),
    slots=st.integers(min_value=6, max_value=23),
)
def test_stineman_never_puts_an_extremum_inside_the_gap(ya, yb, prev_y, next_y, slots):
    # the anchor-slope cap keeps the rational interpolant monotone between
    # the bounding observations regardless of the neighbors outside
    xa, xb = 0.0, 5.0 * (slots + 1)
    fill = np.arange(5.0, xb, 5.0)
    got = interpolate_stineman(fill, xa, ya, xb, yb,
                               prev_pt=(xa - 5.0, prev_y), next_pt=(xb + 5.0, next_y))
    lo, hi = min(ya, yb), max(ya, yb)
    assert got.min() >= lo - 1e-9
    assert got.max() <= hi + 1e-9
    walk = np.diff(np.concatenate([[ya], got, [yb]]))
    if yb > ya:
        assert (walk >= -1e-9).all()
    elif yb < ya:
        assert (walk <= 1e-9).all()


# --- imputation --------------------------------------------------------------

def test_impute_fills_short_gap_and_leaves_long_hole_open():
    offsets = list(range(0, 30, 5)) + list(range(150, 180, 5))
    vals = [100, 102, 104, 106, 108, 110] + [90, 92, 94, 96, 98, 100]
    s = series_at(offsets, vals)
    # poke a 10-minute hole into the first block
    poked = s.with_values(np.where(np.isin(s.offsets, [10, 15]), math.nan, s.values))
    repaired, report = impute_series(poked)
    assert report.count(LINEAR) == 1
    assert report.count(LEFT_OPEN) == 1
    # the 120-minute hole survives as an offset jump
    gaps = np.diff(repaired.offsets)
    assert gaps.max() == 125
    # linear fill restored the straight ramp exactly
    first_block = repaired.values[repaired.offsets <= 25]
    assert np.allclose(first_block, [100, 102, 104, 106, 108, 110], atol=1e-12)


def test_impute_output_contains_no_missing_values():
    offsets = [0, 5, 40, 45, 50]
    s = series_at(offsets, [100.0, 101.0, 112.0, 113.0, 114.0])
    repaired, report = impute_series(s)
    assert not np.isnan(repaired.values).any()
    assert report.count(STINEMAN) == 1
    assert len(repaired) == 11  # 0..50 fully populated


def test_impute_is_idempotent():
    offsets = [0, 5, 40, 45, 175, 180]
    s = series_at(offsets, [100.0, 101.0, 112.0, 113.0, 90.0, 91.0])
    once, _ = impute_series(s)
    twice, report = impute_series(once)
    assert report.count(LINEAR) == 0 and report.count(STINEMAN) == 0
    assert np.array_equal(once.offsets, twice.offsets)
    assert np.array_equal(once.values, twice.values)


def test_clean_series_full_chain_trims_and_fills():
    abs_minutes = [3, 8, 12, 27, 33, 38]          # snaps to 5,10,10?,25,35,40
    vals = [100.0, 102.0, 104.0, 9999.0, 108.0, 110.0]
    s = series_at(abs_minutes, vals)
    cleaned, report = clean_series(s)
    assert cleaned.is_gridded
    assert not np.isnan(cleaned.values).any()
    assert 9999.0 not in cleaned.values
