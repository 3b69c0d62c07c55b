"""Synthetic CGM cohorts with scripted hypoglycemic episodes.

Each subject draws from an independent counter-based stream keyed on
(seed, subject index), so any subject regenerates identically regardless of
how many others are built or in what order. Values follow an AR(1) wander
around an age-profile baseline, clipped to stay strictly above the event
threshold outside episodes. An episode is a scripted descent to a nadir
plateau below the threshold followed by a recovery ramp; the emitted episode
log is derived from the values actually written, which makes it an exact
ground truth for the labeling stage.

Device-style dropout removes whole runs of readings (the remaining offsets
jump), but never inside an episode span, so every scripted event survives
into the raw export.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .domain import (
    AgeGroup,
    EVENT_CLASS,
    GRID_MINUTES,
    HORIZON_MINUTES,
    HYPO_THRESHOLD_MGDL,
    NO_RISK,
    ClassSet,
    GlucoseSeries,
    Subject,
)
from .errors import DataError, UsageError

# Values outside episodes never drop below this, keeping them clear of the
# event threshold even after rounding.
BASE_FLOOR_MGDL = 75.0
BASE_CEIL_MGDL = 400.0

AGE_RANGES: dict[AgeGroup, tuple[int, int]] = {
    AgeGroup.G0_13: (4, 13),
    AgeGroup.G14_20: (14, 20),
    AgeGroup.G21_44: (21, 44),
    AgeGroup.G45_PLUS: (45, 79),
}

_GROUP_TAGS = {
    AgeGroup.G0_13: "child",
    AgeGroup.G14_20: "teen",
    AgeGroup.G21_44: "adult",
    AgeGroup.G45_PLUS: "senior",
}


@dataclass(frozen=True)
class GroupProfile:
    """Generator knobs for one age group.

    The wander must be wide (CGM-realistic) or the quartile-fence cleaning
    step would treat every scripted low as an outlier: with a normal wander
    the lower fence sits near baseline - 2.7 * noise_sd, and that has to land
    below the nadir band.
    """

    baseline_mgdl: float
    ar_phi: float = 0.95
    noise_sd: float = 55.0
    episodes_per_day: float = 1.5
    descent_minutes: int = 40
    low_minutes: int = 20
    recovery_minutes: int = 35
    nadir_lo: float = 48.0
    nadir_hi: float = 66.0
    # Optional pre-event hover: after the descent the trace sits just above
    # the threshold for hover_minutes, then drops to the nadir over
    # drop_minutes. Groups that share the hover level but not its duration
    # produce identical-looking windows with different time-to-event.
    hover_level: float | None = None
    hover_minutes: int = 0
    drop_minutes: int = 10


def default_profiles() -> dict[AgeGroup, GroupProfile]:
    return {
        AgeGroup.G0_13: GroupProfile(baseline_mgdl=168.0, noise_sd=58.0,
                                     episodes_per_day=1.8, descent_minutes=35),
        AgeGroup.G14_20: GroupProfile(baseline_mgdl=178.0, noise_sd=62.0,
                                      episodes_per_day=1.6, descent_minutes=40),
        AgeGroup.G21_44: GroupProfile(baseline_mgdl=160.0, noise_sd=54.0,
                                      episodes_per_day=1.3, descent_minutes=45),
        AgeGroup.G45_PLUS: GroupProfile(baseline_mgdl=152.0, noise_sd=50.0,
                                        episodes_per_day=1.2, recovery_minutes=45,
                                        descent_minutes=50),
    }


def learnable_profiles() -> dict[AgeGroup, GroupProfile]:
    """A cohort built to be predictable over the whole 120-minute horizon.

    Every event is preceded by one long deterministic ramp, so the glucose
    level itself encodes the time to onset and a short input window carries
    enough signal for all look-ahead bins. Used by the end-to-end training
    checks; not meant to look physiological.
    """
    profile = GroupProfile(baseline_mgdl=170.0, ar_phi=0.9, noise_sd=15.0,
                           episodes_per_day=2.0, descent_minutes=160,
                           low_minutes=20, recovery_minutes=40,
                           nadir_lo=52.0, nadir_hi=60.0)
    return {group: profile for group in AGE_RANGES}


def conflict_profiles() -> dict[AgeGroup, GroupProfile]:
    """Profiles whose pre-event dynamics disagree across age groups.

    Every group approaches its lows through the same flat hover just above
    the threshold. The youngest group hovers slightly longer than one input
    window and then falls within ten minutes, so each of its episodes yields
    one featureless all-hover window whose event is imminent. The other
    groups hover far longer and then descend through a slow visible ramp, so
    their imminent-event windows are sloped (self-dating) while their
    far-from-event class consists almost entirely of the same featureless
    hover windows. A pooled model therefore reads "all hover" as
    far-from-event and systematically mislabels the youngest group's
    near-onset windows; a model trained on that group alone does not.
    """
    shared = dict(ar_phi=0.9, noise_sd=15.0, descent_minutes=30,
                  low_minutes=20, recovery_minutes=40, hover_level=96.0,
                  nadir_lo=52.0, nadir_hi=62.0)
    out = {group: GroupProfile(baseline_mgdl=165.0, episodes_per_day=1.2,
                               hover_minutes=80, drop_minutes=60, **shared)
           for group in (AgeGroup.G14_20, AgeGroup.G21_44, AgeGroup.G45_PLUS)}
    out[AgeGroup.G0_13] = GroupProfile(baseline_mgdl=165.0, episodes_per_day=2.4,
                                       hover_minutes=35, drop_minutes=10, **shared)
    return out


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 48
    subjects_per_group: int = 10
    n_unknown_age: int = 0
    days: float = 14.0
    rate: int = GRID_MINUTES
    start_minute: int = 26_297_280      # 2020-01-01T00:00Z as epoch minutes
    dropout_gaps_per_day: float = 0.4
    gap_minute_choices: tuple[int, ...] = (5, 10, 15, 25, 35, 60, 90, 130, 180)
    profiles: tuple[tuple[AgeGroup, GroupProfile], ...] = tuple(
        sorted(default_profiles().items(), key=lambda kv: kv[0].value))

    def profile_map(self) -> dict[AgeGroup, GroupProfile]:
        return dict(self.profiles)


def config_with_profiles(cfg: SynthConfig,
                         profiles: dict[AgeGroup, GroupProfile]) -> SynthConfig:
    return replace(cfg, profiles=tuple(sorted(profiles.items(),
                                              key=lambda kv: kv[0].value)))


@dataclass(frozen=True)
class EpisodeRecord:
    """One scripted low, located by the readings that actually crossed."""

    subject_id: str
    onset_minute: int       # absolute minute of the first reading <= threshold
    low_until_minute: int   # absolute minute of the last reading <= threshold
    nadir_minute: int
    nadir_mgdl: float


def _ar1(rng: np.random.Generator, n: int, phi: float, sd: float) -> np.ndarray:
    innovations = rng.standard_normal(n) * (sd * np.sqrt(1.0 - phi * phi))
    out = np.empty(n)
    level = 0.0
    for i in range(n):
        level = phi * level + innovations[i]
        out[i] = level
    return out


def generate_subject(subject_id: str, profile: GroupProfile, cfg: SynthConfig,
                     rng: np.random.Generator) -> tuple[GlucoseSeries, list[EpisodeRecord]]:
    if cfg.days <= 0 or cfg.rate <= 0:
        raise UsageError("days and rate must be positive")
    n = int(cfg.days * 1440 // cfg.rate)
    if n < 3:
        raise UsageError("the requested span is too short to synthesize")
    rate = cfg.rate
    offsets = np.arange(n, dtype=np.int64) * rate
    wander = _ar1(rng, n, profile.ar_phi, profile.noise_sd)
    values = np.clip(profile.baseline_mgdl + wander, BASE_FLOOR_MGDL, BASE_CEIL_MGDL)

    d_steps = max(1, profile.descent_minutes // rate)
    low_steps = max(1, profile.low_minutes // rate)
    r_steps = max(1, profile.recovery_minutes // rate)
    hover_steps = profile.hover_minutes // rate if profile.hover_level is not None else 0
    drop_steps = max(1, profile.drop_minutes // rate) if profile.hover_level is not None else 0
    total_steps = d_steps + hover_steps + drop_steps + low_steps + r_steps

    n_episodes = int(rng.poisson(profile.episodes_per_day * cfg.days))
    spans: list[tuple[int, int]] = []
    if n_episodes > 0 and n > total_steps + 4:
        candidates = np.sort(rng.integers(2, n - total_steps - 2, size=3 * n_episodes))
        min_gap_steps = max(1, (HORIZON_MINUTES * 2) // rate)
        last_end = -min_gap_steps
        for c in candidates.tolist():
            if len(spans) == n_episodes:
                break
            if c >= last_end + min_gap_steps:
                spans.append((c, c + total_steps))
                last_end = c + total_steps

    for start, end in spans:
        nadir = rng.uniform(profile.nadir_lo, profile.nadir_hi)
        plateau = np.clip(nadir + rng.uniform(-1.5, 1.5, size=low_steps),
                          profile.nadir_lo - 5.0, HYPO_THRESHOLD_MGDL - 1.0)
        recovery = np.linspace(nadir, values[end], r_steps + 1)[1:]
        if profile.hover_level is None:
            descent = np.linspace(values[start - 1], nadir, d_steps + 1)[1:]
            scripted = np.concatenate([descent, plateau, recovery])
        else:
            descent = np.linspace(values[start - 1], profile.hover_level,
                                  d_steps + 1)[1:]
            hover = profile.hover_level + rng.uniform(-1.0, 1.0, size=hover_steps)
            drop = np.linspace(profile.hover_level, nadir, drop_steps + 1)[1:]
            scripted = np.concatenate([descent, hover, drop, plateau, recovery])
        values[start:end] = scripted

    values = np.round(values, 1)

    episodes = []
    for start, end in spans:
        low_idx = start + np.flatnonzero(values[start:end] <= HYPO_THRESHOLD_MGDL)
        if low_idx.size == 0:
            raise DataError(f"scripted episode for {subject_id} produced no low reading")
        nadir_idx = start + int(np.argmin(values[start:end]))
        episodes.append(EpisodeRecord(
            subject_id=subject_id,
            onset_minute=int(cfg.start_minute + offsets[low_idx[0]]),
            low_until_minute=int(cfg.start_minute + offsets[low_idx[-1]]),
            nadir_minute=int(cfg.start_minute + offsets[nadir_idx]),
            nadir_mgdl=float(values[nadir_idx])))

    keep = np.ones(n, dtype=bool)
    n_gaps = int(rng.poisson(cfg.dropout_gaps_per_day * cfg.days))
    protected = np.zeros(n, dtype=bool)
    for start, end in spans:
        protected[start:end] = True
    for _ in range(n_gaps):
        gap_minutes = int(rng.choice(np.asarray(cfg.gap_minute_choices)))
        steps = max(1, gap_minutes // rate)
        if n - steps - 1 <= 1:
            continue
        at = int(rng.integers(1, n - steps - 1))
        if protected[at:at + steps].any():
            continue
        keep[at:at + steps] = False

    kept_offsets = offsets[keep]
    series = GlucoseSeries(subject_id=subject_id,
                           t0=int(cfg.start_minute + kept_offsets[0]),
                           offsets=kept_offsets - kept_offsets[0],
                           values=values[keep], rate=rate)
    return series, episodes


# Stream index stride per group: subject k of group g always draws from
# (seed, g * stride + k), so one subject regenerates identically no matter how
# many others exist.
_GROUP_STREAM_STRIDE = 1_000_000


def generate_cohort(cfg: SynthConfig) -> tuple[dict[str, GlucoseSeries],
                                               dict[str, Subject],
                                               list[EpisodeRecord]]:
    """Build the full cohort from per-subject counter-based streams."""
    profiles = cfg.profile_map()
    series_by_id: dict[str, GlucoseSeries] = {}
    subjects_by_id: dict[str, Subject] = {}
    episodes: list[EpisodeRecord] = []
    order = (AgeGroup.G0_13, AgeGroup.G14_20, AgeGroup.G21_44, AgeGroup.G45_PLUS)
    for rank, group in enumerate(order):
        profile = profiles.get(group)
        if profile is None:
            continue
        lo_age, hi_age = AGE_RANGES[group]
        for k in range(cfg.subjects_per_group):
            rng = np.random.Generator(
                np.random.Philox(key=[cfg.seed, rank * _GROUP_STREAM_STRIDE + k]))
            sid = f"sim-{_GROUP_TAGS[group]}-{k:02d}"
            age = int(rng.integers(lo_age, hi_age + 1))
            series, eps = generate_subject(sid, profile, cfg, rng)
            series_by_id[sid] = series
            subjects_by_id[sid] = Subject(sid, age, None)
            episodes.extend(eps)
    adult = profiles.get(AgeGroup.G21_44, GroupProfile(baseline_mgdl=165.0))
    for k in range(cfg.n_unknown_age):
        rng = np.random.Generator(
            np.random.Philox(key=[cfg.seed, len(order) * _GROUP_STREAM_STRIDE + k]))
        sid = f"sim-noage-{k:02d}"
        series, eps = generate_subject(sid, adult, cfg, rng)
        series_by_id[sid] = series
        subjects_by_id[sid] = Subject(sid, None, None)
        episodes.extend(eps)
    return series_by_id, subjects_by_id, episodes


def labels_from_episodes(series: GlucoseSeries, episodes: list[EpisodeRecord],
                         class_set: ClassSet) -> np.ndarray:
    """Reference labels computed straight from the episode log.

    Deliberately naive (per-point forward scan) and independent of the
    production labeler; only valid for gap-free series, where the two must
    agree exactly.
    """
    n = len(series)
    if n and (np.diff(series.offsets) != series.rate).any():
        raise UsageError("the episode-log reference labeler needs a gap-free series")
    abs_t = series.t0 + series.offsets
    event = np.zeros(n, dtype=bool)
    for ep in episodes:
        if ep.subject_id != series.subject_id:
            continue
        event |= (abs_t >= ep.onset_minute) & (abs_t <= ep.low_until_minute)
    labels = np.full(n, NO_RISK, dtype=np.int64)
    for i in range(n):
        if event[i]:
            labels[i] = EVENT_CLASS
            continue
        for j in range(i + 1, n):
            delta = int(abs_t[j] - abs_t[i])
            if delta > HORIZON_MINUTES:
                break
            if event[j]:
                labels[i] = class_set.class_of_delta(delta)
                break
    return labels


def write_episode_log(path, episodes: list[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "onset_minute", "low_until_minute",
                         "nadir_minute", "nadir_mgdl"])
        for ep in sorted(episodes, key=lambda e: (e.subject_id, e.onset_minute)):
            writer.writerow([ep.subject_id, ep.onset_minute, ep.low_until_minute,
                             ep.nadir_minute, repr(ep.nadir_mgdl)])


def read_episode_log(path) -> list[EpisodeRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(EpisodeRecord(
                subject_id=row["subject_id"],
                onset_minute=int(row["onset_minute"]),
                low_until_minute=int(row["low_until_minute"]),
                nadir_minute=int(row["nadir_minute"]),
                nadir_mgdl=float(row["nadir_mgdl"])))
    return out


def write_cohort_with_log(directory, cfg: SynthConfig) -> Path:
    """Generate and persist a cohort directory plus its episode log."""
    from .ingestion import write_cohort

    series_by_id, subjects_by_id, episodes = generate_cohort(cfg)
    directory = Path(directory)
    write_cohort(directory, series_by_id, subjects_by_id)
    write_episode_log(directory / "episodes.csv", episodes)
    return directory
