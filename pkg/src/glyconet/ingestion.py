"""Reading raw CGM exports and the on-disk cohort layout.

A cohort directory holds one manifest plus one CSV per subject:

    cohort/
      manifest.json                 subject roster, rate, span summaries
      subjects/<subject_id>.csv     subject_id,timestamp,glucose_mgdl[,label]

Timestamps are absolute minutes (integers) everywhere after ingest; raw
files may carry either integer minutes or ISO-8601 datetimes. The manifest
is the only artifact in the pipeline that records a wall-clock creation
time; everything downstream must be byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import PIPELINE_VERSION
from .domain import AgeGroup, GlucoseSeries, Subject, UNLABELED
from .errors import DataError

logger = logging.getLogger(__name__)

MALFORMED_ROW_TOLERANCE = 0.01
MINUTES_PER_DAY = 1440


def parse_timestamp_minutes(text: str) -> int:
    """Accept integer epoch minutes or an ISO-8601 datetime (naive means UTC)."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    # Python 3.10 fromisoformat rejects a literal Z suffix.
    iso = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() / 60.0)


def _series_from_rows(subject_id: str, rows: list[tuple[int, float]],
                      rate: int) -> GlucoseSeries:
    rows.sort(key=lambda r: r[0])
    times = np.asarray([r[0] for r in rows], dtype=np.int64)
    values = np.asarray([r[1] for r in rows], dtype=np.float64)
    # Readings stamped on the same minute collapse to their mean so offsets
    # stay strictly increasing.
    uniq, inverse, counts = np.unique(times, return_inverse=True, return_counts=True)
    if uniq.size != times.size:
        summed = np.zeros(uniq.size)
        np.add.at(summed, inverse, values)
        values = summed / counts
        times = uniq
    t0 = int(times[0])
    return GlucoseSeries(subject_id=subject_id, t0=t0, offsets=times - t0,
                         values=values, rate=rate)


def ingest_glucose_csv(path, rate: int = 5) -> dict[str, GlucoseSeries]:
    """Parse a long-format readings file into one raw series per subject.

    Rows that cannot be parsed are tolerated up to 1% of the file (warned);
    beyond that the file is considered corrupt and ingestion fails.
    """
    rows_by_subject: dict[str, list[tuple[int, float]]] = {}
    bad: list[str] = []
    total = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != \
                ["subject_id", "timestamp", "glucose_mgdl"]:
            raise DataError(f"{path} must start with header subject_id,timestamp,glucose_mgdl")
        for lineno, row in enumerate(reader, start=2):
            total += 1
            try:
                if len(row) < 3 or not row[0].strip():
                    raise ValueError("short row")
                sid = row[0].strip()
                minute = parse_timestamp_minutes(row[1])
                value = float(row[2])
                if not np.isfinite(value):
                    raise ValueError("non-finite glucose")
            except (ValueError, OverflowError) as exc:
                bad.append(f"line {lineno}: {exc}")
                continue
            rows_by_subject.setdefault(sid, []).append((minute, value))
    if total == 0:
        raise DataError(f"{path} holds no data rows")
    if len(bad) / total > MALFORMED_ROW_TOLERANCE:
        examples = "; ".join(bad[:5])
        raise DataError(f"{len(bad)}/{total} rows of {path} are malformed ({examples})")
    if bad:
        logger.warning("skipped %d/%d malformed rows in %s (first: %s)",
                       len(bad), total, path, bad[0])
    return {sid: _series_from_rows(sid, rows, rate)
            for sid, rows in sorted(rows_by_subject.items())}


def ingest_subjects_csv(path) -> dict[str, Subject]:
    """Parse the roster file (subject_id,age_years[,sex]); bad ages become unknown."""
    subjects: dict[str, Subject] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "subject_id" not in reader.fieldnames:
            raise DataError(f"{path} needs at least a subject_id column")
        for row in reader:
            sid = (row.get("subject_id") or "").strip()
            if not sid:
                continue
            age_text = (row.get("age_years") or "").strip()
            age: int | None = None
            if age_text:
                try:
                    age = int(age_text)
                    if age < 0:
                        raise ValueError
                except ValueError:
                    logger.warning("subject %s has unusable age %r; treating as unknown",
                                   sid, age_text)
                    age = None
            sex = (row.get("sex") or "").strip() or None
            subject = Subject(subject_id=sid, age_years=age, sex=sex)
            if sid in subjects and subjects[sid] != subject:
                raise DataError(f"conflicting roster rows for subject {sid}")
            subjects[sid] = subject
    if not subjects:
        raise DataError(f"{path} lists no subjects")
    return subjects


def span_days(series: GlucoseSeries) -> int:
    """Whole days covered between the first and last reading."""
    if len(series) == 0:
        return 0
    return int((series.offsets[-1] - series.offsets[0]) // MINUTES_PER_DAY)


def cohort_summary(series_by_id: dict[str, GlucoseSeries],
                   subjects_by_id: dict[str, Subject]) -> dict:
    """Per-age-group subject, datapoint and day-span counts for reporting."""
    groups: dict[str, dict] = {}
    for sid, series in sorted(series_by_id.items()):
        subject = subjects_by_id.get(sid, Subject(sid, None, None))
        key = subject.age_group.value
        entry = groups.setdefault(key, {"n_subjects": 0, "n_values": 0, "days": []})
        entry["n_subjects"] += 1
        entry["n_values"] += series.n_observed
        entry["days"].append(span_days(series))
    out = {"groups": {}, "n_subjects": len(series_by_id),
           "n_values": int(sum(s.n_observed for s in series_by_id.values()))}
    for key, entry in sorted(groups.items()):
        days = entry.pop("days")
        entry["days_min"] = int(min(days))
        entry["days_max"] = int(max(days))
        entry["days_mean"] = float(np.mean(days))
        out["groups"][key] = entry
    return out


_SAFE_NAME = re.compile(r"[^A-Za-z0-9._-]")


def _subject_filename(sid: str) -> str:
    return _SAFE_NAME.sub("_", sid) + ".csv"


@dataclass
class Cohort:
    series_by_id: dict[str, GlucoseSeries]
    subjects_by_id: dict[str, Subject]
    labels_by_id: dict[str, np.ndarray] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def rate(self) -> int:
        return int(self.manifest.get("rate_minutes", 5))


def write_cohort(directory, series_by_id: dict[str, GlucoseSeries],
                 subjects_by_id: dict[str, Subject],
                 labels_by_id: dict[str, np.ndarray] | None = None) -> Path:
    directory = Path(directory)
    (directory / "subjects").mkdir(parents=True, exist_ok=True)
    labels_by_id = labels_by_id or {}
    rates = {s.rate for s in series_by_id.values()}
    if len(rates) > 1:
        raise DataError(f"cohort mixes sampling rates {sorted(rates)}")
    rate = rates.pop() if rates else 5

    roster = []
    seen_files: dict[str, str] = {}
    for sid, series in sorted(series_by_id.items()):
        fname = _subject_filename(sid)
        if fname in seen_files:
            raise DataError(f"subjects {seen_files[fname]!r} and {sid!r} map to the "
                            f"same file name {fname}")
        seen_files[fname] = sid
        labels = labels_by_id.get(sid)
        if labels is not None and len(labels) != len(series):
            raise DataError(f"labels for {sid} do not align with its series")
        with open(directory / "subjects" / fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["subject_id", "timestamp", "glucose_mgdl"]
            if labels is not None:
                header.append("label")
            writer.writerow(header)
            for i in range(len(series)):
                value = series.values[i]
                row = [sid, int(series.t0 + series.offsets[i]),
                       "" if np.isnan(value) else repr(float(value))]
                if labels is not None:
                    row.append(int(labels[i]))
                writer.writerow(row)
        subject = subjects_by_id.get(sid, Subject(sid, None, None))
        roster.append({
            "age_group": subject.age_group.value,
            "age_years": subject.age_years,
            "days": span_days(series),
            "file": f"subjects/{fname}",
            "first_minute": int(series.t0) if len(series) else None,
            "labeled": labels is not None,
            "last_minute": int(series.t0 + series.offsets[-1]) if len(series) else None,
            "n_values": series.n_observed,
            "sex": subject.sex,
            "subject_id": sid,
        })
    manifest = {
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "pipeline_version": PIPELINE_VERSION,
        "rate_minutes": rate,
        "subjects": roster,
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_cohort(directory) -> Cohort:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{directory} has no manifest.json; not a cohort directory")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    rate = int(manifest.get("rate_minutes", 5))
    series_by_id: dict[str, GlucoseSeries] = {}
    subjects_by_id: dict[str, Subject] = {}
    labels_by_id: dict[str, np.ndarray] = {}
    for entry in manifest.get("subjects", []):
        sid = entry["subject_id"]
        subjects_by_id[sid] = Subject(sid, entry.get("age_years"), entry.get("sex"))
        times: list[int] = []
        values: list[float] = []
        labels: list[int] = []
        with open(directory / entry["file"], newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            has_labels = len(header) > 3 and header[3] == "label"
            for row in reader:
                times.append(int(row[1]))
                values.append(float(row[2]) if row[2] != "" else np.nan)
                if has_labels:
                    labels.append(int(row[3]) if row[3] != "" else UNLABELED)
        t = np.asarray(times, dtype=np.int64)
        t0 = int(t[0]) if t.size else 0
        series_by_id[sid] = GlucoseSeries(subject_id=sid, t0=t0, offsets=t - t0,
                                          values=np.asarray(values), rate=rate)
        if has_labels:
            labels_by_id[sid] = np.asarray(labels, dtype=np.int64)
    return Cohort(series_by_id, subjects_by_id, labels_by_id, manifest)


def age_groups_of_cohort(cohort: Cohort) -> dict[str, AgeGroup]:
    return {sid: subj.age_group for sid, subj in cohort.subjects_by_id.items()}


def datapoint_counts(cohort: Cohort) -> dict[str, int]:
    return {sid: series.n_observed for sid, series in cohort.series_by_id.items()}
