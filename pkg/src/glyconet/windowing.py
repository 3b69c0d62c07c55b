"""Fixed-range scaling, sliding windows, and the subject-level split rules.

A window is L consecutive grid readings; its label is the label of its last
point. Windows never span a hole or a discontinuity, so every emitted window
is a gap-free slice of one contiguous segment. The window length follows from
the input sequence length in minutes: L = isl / rate + 1 (both ends counted).
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .domain import (
    AgeGroup,
    PHYSIO_MAX_MGDL,
    PHYSIO_MIN_MGDL,
    UNLABELED,
    GlucoseSeries,
)
from .errors import DataError, UsageError

logger = logging.getLogger(__name__)

_SCALE_SPAN = PHYSIO_MAX_MGDL - PHYSIO_MIN_MGDL
MIN_WINDOWS_FOR_PERSONAL_SPLIT = 10

TRAIN_FRACTION = 0.6
TRAIN_TRIM_FRACTION = 0.1


def normalize(values: np.ndarray) -> np.ndarray:
    """Map mg/dL from the fixed physiologic band [40, 500] onto [0, 1].

    Values outside the band mean the cleaning contract was violated upstream;
    that is a bug, not data, so it raises.
    """
    arr = np.asarray(values, dtype=np.float64)
    finite = arr[~np.isnan(arr)]
    if finite.size and (finite.min() < PHYSIO_MIN_MGDL or finite.max() > PHYSIO_MAX_MGDL):
        raise ValueError("values outside [40, 500] reached the scaler; clean the series first")
    return (arr - PHYSIO_MIN_MGDL) / _SCALE_SPAN


def denormalize(scaled: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`."""
    return np.asarray(scaled, dtype=np.float64) * _SCALE_SPAN + PHYSIO_MIN_MGDL


def window_length(isl_minutes: int, rate: int) -> int:
    """Points per window for an input sequence length in minutes."""
    if isl_minutes <= 0 or isl_minutes % rate != 0:
        raise UsageError(f"ISL {isl_minutes} must be a positive multiple of the rate {rate}")
    return isl_minutes // rate + 1


@dataclass
class WindowSet:
    """Column store of windows; rows stay in temporal order per subject."""

    features: np.ndarray      # (n, L) normalized float64
    labels: np.ndarray        # (n,) int64
    end_times: np.ndarray     # (n,) int64 absolute minutes of the last point
    subject_ids: np.ndarray   # (n,) str
    isl_minutes: int
    rate: int
    class_set_key: str = ""

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def window_len(self) -> int:
        return int(self.features.shape[1])

    def select(self, mask_or_index) -> "WindowSet":
        return WindowSet(self.features[mask_or_index], self.labels[mask_or_index],
                         self.end_times[mask_or_index], self.subject_ids[mask_or_index],
                         self.isl_minutes, self.rate, self.class_set_key)


def empty_window_set(window_len: int, isl_minutes: int, rate: int,
                     class_set_key: str = "") -> WindowSet:
    return WindowSet(np.empty((0, window_len)), np.empty(0, np.int64),
                     np.empty(0, np.int64), np.empty(0, dtype="<U1"),
                     isl_minutes, rate, class_set_key)


def concat_window_sets(sets: list[WindowSet]) -> WindowSet:
    if not sets:
        raise UsageError("nothing to concatenate")
    first = sets[0]
    for other in sets[1:]:
        if (other.isl_minutes, other.rate, other.class_set_key) != \
                (first.isl_minutes, first.rate, first.class_set_key):
            raise DataError("window sets with mismatched ISL/rate/class set cannot be combined")
    return WindowSet(
        np.concatenate([s.features for s in sets]),
        np.concatenate([s.labels for s in sets]),
        np.concatenate([s.end_times for s in sets]),
        np.concatenate([s.subject_ids for s in sets]),
        first.isl_minutes, first.rate, first.class_set_key)


def make_windows(series: GlucoseSeries, labels: np.ndarray, isl_minutes: int,
                 class_set_key: str = "") -> WindowSet:
    """Slide a stride-1 window over one labeled series.

    A start position is kept when the L points are consecutive on the grid,
    all observed, and the final point carries a label (no-risk counts as a
    label and is kept; training-side filtering happens later).
    """
    L = window_length(isl_minutes, series.rate)
    labels = np.asarray(labels)
    if labels.shape != (len(series),) :
        raise UsageError("labels must align with the series")
    n = len(series)
    if n < L:
        return empty_window_set(L, isl_minutes, series.rate, class_set_key)

    observed = series.observed_mask
    consecutive = np.diff(series.offsets) == series.rate
    obs_ok = sliding_window_view(observed, L).all(axis=1)
    step_ok = sliding_window_view(consecutive, L - 1).all(axis=1) if L > 1 \
        else np.ones(n, dtype=bool)
    labeled_ok = labels[L - 1:] != UNLABELED
    starts = np.flatnonzero(obs_ok & step_ok & labeled_ok)
    if starts.size == 0:
        return empty_window_set(L, isl_minutes, series.rate, class_set_key)

    feats = normalize(sliding_window_view(series.values, L)[starts])
    ends = starts + L - 1
    return WindowSet(
        np.ascontiguousarray(feats),
        labels[ends].astype(np.int64),
        (series.t0 + series.offsets[ends]).astype(np.int64),
        np.full(starts.size, series.subject_id, dtype=f"<U{max(1, len(series.subject_id))}"),
        isl_minutes, series.rate, class_set_key)


@dataclass(frozen=True)
class PersonalSplit:
    """Index boundaries of one subject's personal 60:40 split.

    Windows [0, train_end) train; [train_end, gap_end) are discarded (the
    final tenth of the train slice, a temporal guard band); [test_start, n)
    evaluate. Always: test_start == gap_end == floor(0.6 n).
    """

    n_windows: int
    train_end_index: int
    gap_end_index: int
    test_start_index: int


def finetune_boundaries(n_windows: int) -> PersonalSplit | None:
    """Personal split boundaries for a window count, None when too few windows."""
    if n_windows < MIN_WINDOWS_FOR_PERSONAL_SPLIT:
        logger.warning("only %d windows; personal split needs at least %d, subject skipped",
                       n_windows, MIN_WINDOWS_FOR_PERSONAL_SPLIT)
        return None
    candidate = int(n_windows * TRAIN_FRACTION)
    kept = int(candidate * (1.0 - TRAIN_TRIM_FRACTION))
    return PersonalSplit(n_windows, kept, candidate, candidate)


@dataclass
class SplitPlan:
    """Cohort-level subject split: per-group held-out test subjects, the rest train."""

    test_by_group: dict[AgeGroup, list[str]]
    train_ids: list[str]

    @property
    def test_ids(self) -> list[str]:
        return [sid for ids in self.test_by_group.values() for sid in ids]

    def to_json_dict(self) -> dict:
        return {
            "test_by_group": {g.value: ids for g, ids in self.test_by_group.items()},
            "train_ids": list(self.train_ids),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SplitPlan":
        by_group = {AgeGroup(key): list(ids) for key, ids in doc["test_by_group"].items()}
        return cls(by_group, list(doc["train_ids"]))


def select_test_subjects(groups_by_id: dict[str, AgeGroup],
                         counts_by_id: dict[str, int],
                         n_per_group: int = 10) -> SplitPlan:
    """Hold out the densest subjects per age group for testing.

    Within each known group, subjects rank by observed datapoint count
    descending with lexicographic subject id as the tie-break; the top
    `n_per_group` go to test. Unknown-age subjects never test but stay in the
    train pool. Groups with fewer subjects contribute what they have (warned).
    """
    test_by_group: dict[AgeGroup, list[str]] = {}
    for group in (AgeGroup.G0_13, AgeGroup.G14_20, AgeGroup.G21_44, AgeGroup.G45_PLUS):
        members = [sid for sid, g in groups_by_id.items() if g == group]
        if not members:
            continue
        members.sort(key=lambda sid: (-counts_by_id.get(sid, 0), sid))
        if len(members) < n_per_group:
            logger.warning("group %s has only %d subjects (wanted %d test subjects)",
                           group.value, len(members), n_per_group)
        test_by_group[group] = members[:n_per_group]
    held_out = {sid for ids in test_by_group.values() for sid in ids}
    train_ids = sorted(sid for sid in groups_by_id if sid not in held_out)
    return SplitPlan(test_by_group, train_ids)


def write_windows_csv(path, windows: WindowSet) -> None:
    """Persist windows with a JSON sidecar describing their geometry and scaler."""
    L = windows.window_len
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "end_time", "label"] + [f"f{i}" for i in range(L)])
        for i in range(len(windows)):
            writer.writerow([windows.subject_ids[i], int(windows.end_times[i]),
                             int(windows.labels[i])]
                            + [repr(float(v)) for v in windows.features[i]])
    sidecar = {
        "class_set": windows.class_set_key,
        "isl_minutes": windows.isl_minutes,
        "n_windows": len(windows),
        "rate_minutes": windows.rate,
        "scaler": {"max_mgdl": PHYSIO_MAX_MGDL, "min_mgdl": PHYSIO_MIN_MGDL},
        "window_len": L,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


_SAFE_NAME = re.compile(r"[^A-Za-z0-9._-]")


def write_windows_dir(directory, windows_by_subject: dict[str, WindowSet],
                      groups_by_id: dict[str, AgeGroup],
                      pipeline_version: str) -> Path:
    """Persist per-subject window files plus a directory manifest."""
    directory = Path(directory)
    (directory / "windows").mkdir(parents=True, exist_ok=True)
    roster = []
    geometry: tuple | None = None
    seen: dict[str, str] = {}
    for sid, ws in sorted(windows_by_subject.items()):
        if geometry is None:
            geometry = (ws.class_set_key, ws.isl_minutes, ws.rate, ws.window_len)
        elif geometry != (ws.class_set_key, ws.isl_minutes, ws.rate, ws.window_len):
            raise DataError("window sets in one directory must share geometry")
        fname = _SAFE_NAME.sub("_", sid) + ".csv"
        if fname in seen:
            raise DataError(f"subjects {seen[fname]!r} and {sid!r} collide on file "
                            f"name {fname}")
        seen[fname] = sid
        write_windows_csv(directory / "windows" / fname, ws)
        group = groups_by_id.get(sid, AgeGroup.UNKNOWN)
        roster.append({"age_group": group.value, "file": f"windows/{fname}",
                       "n_windows": len(ws), "subject_id": sid})
    if geometry is None:
        raise UsageError("no window sets to write")
    manifest = {
        "class_set": geometry[0],
        "isl_minutes": geometry[1],
        "pipeline_version": pipeline_version,
        "rate_minutes": geometry[2],
        "subjects": roster,
        "window_len": geometry[3],
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_windows_dir(directory) -> tuple[dict[str, WindowSet], dict[str, AgeGroup], dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{directory} has no manifest.json; not a windows directory")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    windows_by_subject: dict[str, WindowSet] = {}
    groups_by_id: dict[str, AgeGroup] = {}
    for entry in manifest.get("subjects", []):
        sid = entry["subject_id"]
        windows_by_subject[sid] = read_windows_csv(directory / entry["file"])
        groups_by_id[sid] = AgeGroup(entry["age_group"])
    return windows_by_subject, groups_by_id, manifest


def read_windows_csv(path) -> WindowSet:
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    L = int(sidecar["window_len"])
    ids, ends, labels, feats = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["subject_id", "end_time", "label"] + [f"f{i}" for i in range(L)]
        if header != expected:
            raise DataError(f"unexpected windows header in {path}")
        for row in reader:
            ids.append(row[0])
            ends.append(int(row[1]))
            labels.append(int(row[2]))
            feats.append([float(v) for v in row[3:]])
    n = len(ids)
    features = np.asarray(feats, dtype=np.float64).reshape(n, L)
    return WindowSet(features, np.asarray(labels, np.int64), np.asarray(ends, np.int64),
                     np.asarray(ids), int(sidecar["isl_minutes"]),
                     int(sidecar["rate_minutes"]), str(sidecar["class_set"]))
