import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glyconet.domain import (CLASS_SETS, EVENT_CLASS, GRID_MINUTES,
                             HORIZON_MINUTES, HYPO_THRESHOLD_MGDL, NO_RISK,
                             UNLABELED, AgeGroup, ClassBin, ClassSet,
                             GlucoseSeries, age_group_of, get_class_set,
                             is_missing)
from glyconet.errors import DataError


def test_constants_match_contract():
    assert GRID_MINUTES == 5
    assert HYPO_THRESHOLD_MGDL == 70.0
    assert HORIZON_MINUTES == 120
    assert EVENT_CLASS == 0
    assert NO_RISK == -1
    assert UNLABELED == -2


def test_age_group_boundaries():
    assert age_group_of(0) == AgeGroup.G0_13
    assert age_group_of(13) == AgeGroup.G0_13
    assert age_group_of(14) == AgeGroup.G14_20
    assert age_group_of(20) == AgeGroup.G14_20
    assert age_group_of(21) == AgeGroup.G21_44
    assert age_group_of(44) == AgeGroup.G21_44
    assert age_group_of(45) == AgeGroup.G45_PLUS
    assert age_group_of(99) == AgeGroup.G45_PLUS
    assert age_group_of(None) == AgeGroup.UNKNOWN


def test_age_group_rejects_negative():
    with pytest.raises(ValueError):
        age_group_of(-1)


def test_missing_sentinel_is_nan():
    assert is_missing(math.nan)
    assert not is_missing(70.0)
    mask = is_missing(np.array([1.0, math.nan, 70.0]))
    assert mask.tolist() == [False, True, False]


def test_series_validates_offsets(grid_series):
    with pytest.raises(ValueError):
        GlucoseSeries("s", 0, np.array([0, 5, 5]), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        GlucoseSeries("s", 0, np.array([-5, 0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        GlucoseSeries("s", 0, np.array([0, 5]), np.array([1.0]))


def test_series_arrays_are_frozen(grid_series):
    s = grid_series([100, 110, 120])
    with pytest.raises(ValueError):
        s.values[0] = 0.0
    with pytest.raises(ValueError):
        s.offsets[0] = 99


def test_series_gridded_check():
    on_grid = GlucoseSeries("s", 10, np.array([0, 5, 15]), np.full(3, 100.0))
    assert on_grid.is_gridded
    off_grid = GlucoseSeries("s", 10, np.array([0, 3, 15]), np.full(3, 100.0))
    assert not off_grid.is_gridded
    bad_anchor = GlucoseSeries("s", 12, np.array([0, 5]), np.full(2, 100.0))
    assert not bad_anchor.is_gridded


def test_series_trim_drops_leading_and_trailing_holes():
    values = np.array([math.nan, math.nan, 100.0, math.nan, 90.0, math.nan])
    s = GlucoseSeries("s", 100, np.arange(6) * 5, values)
    t = s.trimmed()
    assert t.t0 == 110
    assert t.offsets.tolist() == [0, 5, 10]
    assert t.values[0] == 100.0 and t.values[2] == 90.0
    assert math.isnan(t.values[1])


def test_series_trim_of_all_missing_is_empty():
    s = GlucoseSeries("s", 0, np.arange(3) * 5, np.full(3, math.nan))
    assert len(s.trimmed()) == 0


def test_class_sets_have_expected_shapes():
    assert set(CLASS_SETS) == {"I", "II", "III"}
    assert CLASS_SETS["I"].n_classes == 5
    assert CLASS_SETS["II"].n_classes == 4
    assert CLASS_SETS["III"].n_classes == 4


def test_class_set_boundaries_set_two():
    cs = CLASS_SETS["II"]
    assert cs.class_of_delta(5) == 1
    assert cs.class_of_delta(15) == 1
    assert cs.class_of_delta(20) == 2
    assert cs.class_of_delta(45) == 2
    assert cs.class_of_delta(50) == 3
    assert cs.class_of_delta(120) == 3
    assert cs.class_of_delta(125) == NO_RISK


def test_class_set_rejects_bad_delta():
    cs = CLASS_SETS["I"]
    with pytest.raises(ValueError):
        cs.class_of_delta(0)
    with pytest.raises(ValueError):
        cs.class_of_delta(7)


@given(st.sampled_from(["I", "II", "III"]),
       st.integers(min_value=1, max_value=60))
def test_every_grid_delta_within_horizon_gets_a_positive_class(key, step):
    cs = CLASS_SETS[key]
    delta = step * GRID_MINUTES
    cls = cs.class_of_delta(delta)
    if delta <= HORIZON_MINUTES:
        assert 1 <= cls < cs.n_classes
    else:
        assert cls == NO_RISK


def test_class_set_construction_rejects_gaps_and_overlap():
    with pytest.raises(ValueError):
        ClassSet("bad", (ClassBin(1, 5, 10), ClassBin(2, 20, 120)))  # 15 uncovered
    with pytest.raises(ValueError):
        ClassSet("bad", (ClassBin(1, 5, 20), ClassBin(2, 20, 120)))  # 20 twice


def test_get_class_set_unknown_key_is_data_error():
    with pytest.raises(DataError):
        get_class_set("IV")
