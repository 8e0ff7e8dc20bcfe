"""Classification of zero-count periods in epoch-level step data.

A zero-count period is a maximal run of vm == 0 epochs, tolerating short
nonzero interruptions, of at least a configurable minimum length.  Periods
are labelled by duration and by the presence of a boundary vm spike:

* inactive      duration in [1 h, 3 h) without a boundary spike
* nonwear       duration in [1 h, 3 h) with a spike, or in [3 h, 5 h)
* sleep         duration in [5 h, 15 h)
* sleep_extra   duration >= 15 h

Only nonwear and sleep_extra periods generate missing data: nonwear spans
become missing intervals outright, sleep_extra spans become missing after
subtracting the participant's average sleep window for the matching scope
(weekday or weekend).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .errors import NoObservedSleep
from .model import (
    DAYS_PER_WEEK,
    EPOCHS_PER_DAY,
    EPOCHS_PER_HOUR,
    EPOCHS_PER_MINUTE,
    EPOCHS_PER_WEEK,
    Arm,
    ClassifiedPeriod,
    EpochSeries,
    MissingInterval,
    PeriodClass,
    Scope,
    SleepWindow,
    StepDataset,
    Timepoint,
    weartime_minutes,
)


@dataclass(frozen=True)
class ClassifierConfig:
    """Thresholds for zero-count period detection and classification."""

    min_zero_run_min: int = 60
    spike_tolerance_min: int = 2
    vm_spike_threshold: float = 600.0
    inactive_range_h: tuple[float, float] = (1.0, 3.0)
    nonwear_range_h: tuple[float, float] = (1.0, 5.0)
    sleep_range_h: tuple[float, float] = (5.0, 15.0)
    sleep_extra_min_h: float = 15.0
    weekend_shift_min: int = 60
    whole_week_weartime_min: float = 300.0
    whole_week_day_count: int = 5

    def __post_init__(self):
        if self.min_zero_run_min <= 0:
            raise ValueError("min_zero_run_min must be positive")
        if self.spike_tolerance_min < 0:
            raise ValueError("spike_tolerance_min must be non-negative")
        ia, nw, sl = self.inactive_range_h, self.nonwear_range_h, self.sleep_range_h
        ordered = (
            ia[0] == nw[0] < ia[1] <= nw[1] == sl[0] < sl[1] == self.sleep_extra_min_h
        )
        if not ordered:
            raise ValueError("class duration ranges must be contiguous and ordered")
        if not 1 <= self.whole_week_day_count <= DAYS_PER_WEEK:
            raise ValueError("whole_week_day_count must be in 1..7")

    @property
    def min_run_epochs(self) -> int:
        return int(self.min_zero_run_min) * EPOCHS_PER_MINUTE

    @property
    def spike_tolerance_epochs(self) -> int:
        return int(self.spike_tolerance_min) * EPOCHS_PER_MINUTE

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ClassifierConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown classifier config keys: {sorted(unknown)}")
        kwargs = dict(mapping)
        for key in ("inactive_range_h", "nonwear_range_h", "sleep_range_h"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def detect_zero_count_periods(
    vm: np.ndarray, config: ClassifierConfig
) -> list[tuple[int, int]]:
    """Find maximal zero-count runs in a vm trace.

    A run is a span of vm == 0 epochs; a maximal run of nonzero epochs
    inside it is tolerated provided that single interruption lasts at most
    ``spike_tolerance_min``.  Runs start and end on zero epochs.  Only runs
    of total span (interruptions included) >= ``min_zero_run_min`` are
    returned, as half-open (start, end) index pairs.
    """
    vm = np.asarray(vm)
    zero = (vm == 0).view(np.int8)
    if not zero.any():
        return []
    pad = np.zeros(1, dtype=np.int8)
    edges = np.diff(np.concatenate([pad, zero, pad]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    gap_max = config.spike_tolerance_epochs
    merged: list[tuple[int, int]] = []
    cur_s, cur_e = int(starts[0]), int(ends[0])
    for s, e in zip(starts[1:], ends[1:]):
        if s - cur_e <= gap_max:
            cur_e = int(e)
        else:
            merged.append((cur_s, cur_e))
            cur_s, cur_e = int(s), int(e)
    merged.append((cur_s, cur_e))
    min_len = config.min_run_epochs
    return [(s, e) for s, e in merged if e - s >= min_len]


def classify_period(
    vm: np.ndarray, span: tuple[int, int], config: ClassifierConfig
) -> ClassifiedPeriod:
    """Assign a class to one detected zero-count span.

    The boundary-spike flag is true when any vm >= ``vm_spike_threshold``
    occurs within ``spike_tolerance_min`` before the start or after the end
    of the span (windows clipped at the ends of the trace).
    """
    start, end = span
    duration_h = (end - start) / EPOCHS_PER_HOUR
    if duration_h < config.nonwear_range_h[0]:
        raise ValueError(
            f"span of {duration_h:.3f} h is below the detection minimum")
    tol = config.spike_tolerance_epochs
    before = vm[max(0, start - tol):start]
    after = vm[end:end + tol]
    spike = bool(
        np.any(before >= config.vm_spike_threshold)
        or np.any(after >= config.vm_spike_threshold)
    )
    if duration_h < config.inactive_range_h[1]:
        cls = PeriodClass.NONWEAR if spike else PeriodClass.INACTIVE
    elif duration_h < config.nonwear_range_h[1]:
        cls = PeriodClass.NONWEAR
    elif duration_h < config.sleep_range_h[1]:
        cls = PeriodClass.SLEEP
    else:
        cls = PeriodClass.SLEEP_EXTRA
    return ClassifiedPeriod(int(start), int(end), cls, spike)


def classify_zero_periods(
    vm: np.ndarray, config: ClassifierConfig
) -> list[ClassifiedPeriod]:
    """Detect and classify all zero-count periods in a vm trace."""
    return [
        classify_period(vm, span, config)
        for span in detect_zero_count_periods(vm, config)
    ]


def needs_whole_week(
    periods: Iterable[ClassifiedPeriod], config: ClassifierConfig
) -> bool:
    """True when too many days have wear time below the whole-week threshold."""
    periods = list(periods)
    low = sum(
        weartime_minutes(day, periods) < config.whole_week_weartime_min
        for day in range(1, DAYS_PER_WEEK + 1)
    )
    return low >= config.whole_week_day_count


def circular_mean_epoch(epochs: Iterable[int]) -> int:
    """Mean clock time on the 24 h circle, rounded to the nearest epoch."""
    values = np.asarray(list(epochs), dtype=float)
    if values.size == 0:
        raise ValueError("cannot average an empty set of clock times")
    ang = values * (2.0 * np.pi / EPOCHS_PER_DAY)
    mean = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())
    return int(round(mean * EPOCHS_PER_DAY / (2.0 * np.pi))) % EPOCHS_PER_DAY


def circular_median_epoch(epochs: Iterable[int]) -> int:
    """Median clock time, taken after unwrapping around the circular mean."""
    values = np.asarray(list(epochs), dtype=float)
    if values.size == 0:
        raise ValueError("cannot take the median of an empty set of clock times")
    center = circular_mean_epoch(values)
    half = EPOCHS_PER_DAY / 2.0
    unwrapped = ((values - center + half) % EPOCHS_PER_DAY) - half + center
    return int(round(float(np.median(unwrapped)))) % EPOCHS_PER_DAY


def fully_observed_days(periods: Iterable[ClassifiedPeriod]) -> set[int]:
    """Days (1..7) not touched by any nonwear or sleep_extra period."""
    days = set(range(1, DAYS_PER_WEEK + 1))
    for p in periods:
        if p.period_class in (PeriodClass.NONWEAR, PeriodClass.SLEEP_EXTRA):
            days -= set(range(p.start_day, p.end_day + 1))
    return days


def _sleep_clock_times(
    series: EpochSeries, periods: Iterable[ClassifiedPeriod]
) -> dict[Scope, tuple[list[int], list[int]]]:
    """Collect bed and wake clock times from sleep periods, per scope.

    A sleep period contributes its start clock time (bed) to the day it
    starts on and its end clock time (wake) to the day it ends on, counting
    only fully observed days.  Periods touching the ends of the week
    timeline are truncated recordings, so the touched endpoint is skipped.
    """
    observed = fully_observed_days(periods)
    out = {Scope.WEEKDAY: ([], []), Scope.WEEKEND: ([], [])}
    for p in periods:
        if p.period_class is not PeriodClass.SLEEP:
            continue
        if p.start > 0 and p.start_day in observed:
            out[series.scope_of_day(p.start_day)][0].append(p.start % EPOCHS_PER_DAY)
        if p.end < EPOCHS_PER_WEEK and p.end_day in observed:
            out[series.scope_of_day(p.end_day)][1].append(p.end % EPOCHS_PER_DAY)
    return out


def estimate_sleep_window(
    series: EpochSeries,
    periods: Iterable[ClassifiedPeriod],
    scope: Scope,
    config: ClassifierConfig,
) -> SleepWindow:
    """Average sleep window for one scope from this participant's own data.

    Weekday windows are circular means of bed and wake times over fully
    observed weekdays.  Weekend windows use fully observed weekend days when
    available and otherwise fall back to the weekday window shifted later by
    ``weekend_shift_min`` at both ends.  Raises :class:`NoObservedSleep`
    when neither scope provides any observed sleep period.
    """
    periods = list(periods)
    times = _sleep_clock_times(series, periods)
    beds, wakes = times[scope]
    if beds and wakes:
        return SleepWindow(circular_mean_epoch(beds), circular_mean_epoch(wakes), scope)
    if scope is Scope.WEEKEND:
        wd_beds, wd_wakes = times[Scope.WEEKDAY]
        if wd_beds and wd_wakes:
            shift = config.weekend_shift_min * EPOCHS_PER_MINUTE
            return SleepWindow(
                (circular_mean_epoch(wd_beds) + shift) % EPOCHS_PER_DAY,
                (circular_mean_epoch(wd_wakes) + shift) % EPOCHS_PER_DAY,
                Scope.WEEKEND,
            )
    raise NoObservedSleep(
        f"{series.participant_id}/{series.timepoint.value}: no fully observed "
        f"{scope.value} sleep period to estimate a window from"
    )


def _split_at_midnight(
    start: int, end: int, source: PeriodClass
) -> list[MissingInterval]:
    """Cut a timeline position span into per-day missing intervals."""
    out = []
    pos = start
    while pos < end:
        day = pos // EPOCHS_PER_DAY
        day_end = (day + 1) * EPOCHS_PER_DAY
        chunk_end = min(end, day_end)
        out.append(
            MissingInterval(day + 1, pos - day * EPOCHS_PER_DAY,
                            chunk_end - day * EPOCHS_PER_DAY, source)
        )
        pos = chunk_end
    return out


def derive_missing_intervals(
    series: EpochSeries,
    periods: Iterable[ClassifiedPeriod],
    windows: dict[Scope, SleepWindow],
    config: ClassifierConfig,
) -> list[MissingInterval]:
    """Turn classified periods into per-day missing intervals.

    Nonwear periods are missing over their whole span.  Sleep_extra periods
    are missing outside the sleep window of the scope each epoch's day
    belongs to.  Intervals are split at midnight and never cross days.
    """
    weekend_day = np.array([d.day_of_week.is_weekend for d in series.days])
    out: list[MissingInterval] = []
    for p in periods:
        if p.period_class is PeriodClass.NONWEAR:
            out.extend(_split_at_midnight(p.start, p.end, PeriodClass.NONWEAR))
        elif p.period_class is PeriodClass.SLEEP_EXTRA:
            pos = np.arange(p.start, p.end)
            day0 = pos // EPOCHS_PER_DAY
            clock = pos - day0 * EPOCHS_PER_DAY
            in_window = np.zeros(pos.size, dtype=bool)
            for scope in (Scope.WEEKDAY, Scope.WEEKEND):
                m = weekend_day[day0] == (scope is Scope.WEEKEND)
                if not m.any():
                    continue
                if scope not in windows:
                    raise NoObservedSleep(
                        f"{series.participant_id}/{series.timepoint.value}: "
                        f"no {scope.value} sleep window available for a "
                        f"sleep_extra period"
                    )
                in_window[m] = windows[scope].contains(clock[m])
            keep = pos[~in_window]
            if keep.size == 0:
                continue
            breaks = np.flatnonzero(np.diff(keep) > 1)
            run_starts = np.concatenate([[0], breaks + 1])
            run_ends = np.concatenate([breaks, [keep.size - 1]])
            for rs, re in zip(run_starts, run_ends):
                out.extend(
                    _split_at_midnight(int(keep[rs]), int(keep[re]) + 1,
                                       PeriodClass.SLEEP_EXTRA)
                )
    out.sort(key=lambda iv: iv.position_start)
    return out


@dataclass(frozen=True)
class SeriesClassification:
    """Everything the classifier derives from one epoch series."""

    periods: tuple[ClassifiedPeriod, ...]
    windows: dict[Scope, SleepWindow]
    window_sources: dict[Scope, str]          # own | shifted | population | population_shifted
    missing_intervals: tuple[MissingInterval, ...]
    whole_week: bool
    whole_week_reason: Optional[str]
    weartime_min: np.ndarray                  # minutes per day, length 7

    @property
    def has_nonwear(self) -> bool:
        return any(p.period_class is PeriodClass.NONWEAR for p in self.periods)

    @property
    def has_sleep_extra(self) -> bool:
        return any(p.period_class is PeriodClass.SLEEP_EXTRA for p in self.periods)

    def missing_mask_week(self) -> np.ndarray:
        """Boolean mask over the week timeline of epochs declared missing."""
        mask = np.zeros(EPOCHS_PER_WEEK, dtype=bool)
        if self.whole_week:
            mask[:] = True
            return mask
        for iv in self.missing_intervals:
            mask[iv.position_start:iv.position_end] = True
        return mask


def _own_windows(
    series: EpochSeries,
    periods: list[ClassifiedPeriod],
    config: ClassifierConfig,
) -> tuple[dict[Scope, SleepWindow], dict[Scope, str]]:
    windows: dict[Scope, SleepWindow] = {}
    sources: dict[Scope, str] = {}
    times = _sleep_clock_times(series, periods)
    for scope in (Scope.WEEKDAY, Scope.WEEKEND):
        try:
            windows[scope] = estimate_sleep_window(series, periods, scope, config)
        except NoObservedSleep:
            continue
        beds, wakes = times[scope]
        sources[scope] = "own" if (beds and wakes) else "shifted"
    return windows, sources


def _scopes_needed(
    series: EpochSeries, periods: Iterable[ClassifiedPeriod]
) -> set[Scope]:
    needed: set[Scope] = set()
    for p in periods:
        if p.period_class is PeriodClass.SLEEP_EXTRA:
            for day in range(p.start_day, p.end_day + 1):
                needed.add(series.scope_of_day(day))
    return needed


def classify_series(
    series: EpochSeries,
    config: ClassifierConfig,
    population_windows: Optional[dict[tuple[Scope], SleepWindow]] = None,
) -> SeriesClassification:
    """Run the full classification pipeline for one series.

    ``population_windows`` maps scope to a fallback window used when the
    participant's own data support none; without an applicable fallback a
    participant whose sleep_extra decomposition needs the window escalates
    to whole-week handling.
    """
    periods = classify_zero_periods(series.vm_week, config)
    weartime = np.array(
        [weartime_minutes(d, periods) for d in range(1, DAYS_PER_WEEK + 1)]
    )
    whole_week = needs_whole_week(periods, config)
    reason = "low_weartime" if whole_week else None
    windows: dict[Scope, SleepWindow] = {}
    sources: dict[Scope, str] = {}
    intervals: tuple[MissingInterval, ...] = ()
    if not whole_week:
        windows, sources = _own_windows(series, periods, config)
        for scope in _scopes_needed(series, periods):
            if scope in windows:
                continue
            fallback = (population_windows or {}).get(scope)
            if fallback is not None:
                windows[scope] = SleepWindow(
                    fallback.bed_epoch, fallback.wake_epoch, scope)
                sources[scope] = "population"
            else:
                whole_week = True
                reason = "no_sleep_window"
                windows, sources = {}, {}
                break
        if not whole_week:
            intervals = tuple(
                derive_missing_intervals(series, periods, windows, config))
    return SeriesClassification(
        periods=tuple(periods),
        windows=windows,
        window_sources=sources,
        missing_intervals=intervals,
        whole_week=whole_week,
        whole_week_reason=reason,
        weartime_min=weartime,
    )


class ZeroRunClassifier(BaseEstimator):
    """Dataset-level classifier with population sleep-window fallbacks.

    ``fit`` learns, per arm and scope, the population median sleep window
    from participants whose own data yield one.  ``transform`` classifies
    every series, applying those fallbacks where a participant's own window
    cannot be estimated.
    """

    def __init__(
        self,
        min_zero_run_min: int = 60,
        spike_tolerance_min: int = 2,
        vm_spike_threshold: float = 600.0,
        inactive_range_h: tuple[float, float] = (1.0, 3.0),
        nonwear_range_h: tuple[float, float] = (1.0, 5.0),
        sleep_range_h: tuple[float, float] = (5.0, 15.0),
        sleep_extra_min_h: float = 15.0,
        weekend_shift_min: int = 60,
        whole_week_weartime_min: float = 300.0,
        whole_week_day_count: int = 5,
    ):
        self.min_zero_run_min = min_zero_run_min
        self.spike_tolerance_min = spike_tolerance_min
        self.vm_spike_threshold = vm_spike_threshold
        self.inactive_range_h = inactive_range_h
        self.nonwear_range_h = nonwear_range_h
        self.sleep_range_h = sleep_range_h
        self.sleep_extra_min_h = sleep_extra_min_h
        self.weekend_shift_min = weekend_shift_min
        self.whole_week_weartime_min = whole_week_weartime_min
        self.whole_week_day_count = whole_week_day_count

    def config(self) -> ClassifierConfig:
        return ClassifierConfig.from_mapping(self.get_params())

    @classmethod
    def from_config(cls, config: ClassifierConfig) -> "ZeroRunClassifier":
        return cls(**{f.name: getattr(config, f.name) for f in fields(ClassifierConfig)})

    def fit(self, dataset: StepDataset, y=None) -> "ZeroRunClassifier":
        config = self.config()
        per_key: dict = {}
        collected: dict[tuple[Arm, Scope], tuple[list[int], list[int]]] = {}
        for key in sorted(dataset.series, key=lambda k: (k[0], k[1].value)):
            series = dataset.series[key]
            periods = classify_zero_periods(series.vm_week, config)
            whole_week = needs_whole_week(periods, config)
            windows, sources = ({}, {}) if whole_week else _own_windows(
                series, periods, config)
            per_key[key] = (periods, windows, sources, whole_week)
            if whole_week:
                continue
            arm = dataset.participants[key[0]].arm
            for scope, window in windows.items():
                if sources.get(scope) != "own":
                    continue
                beds, wakes = collected.setdefault((arm, scope), ([], []))
                beds.append(window.bed_epoch)
                wakes.append(window.wake_epoch)
        population: dict[tuple[Arm, Scope], SleepWindow] = {}
        for (arm, scope), (beds, wakes) in collected.items():
            population[(arm, scope)] = SleepWindow(
                circular_median_epoch(beds), circular_median_epoch(wakes), scope)
        shift = config.weekend_shift_min
        for arm in Arm:
            wd = population.get((arm, Scope.WEEKDAY))
            if wd is not None and (arm, Scope.WEEKEND) not in population:
                shifted = wd.shifted_later(shift)
                population[(arm, Scope.WEEKEND)] = SleepWindow(
                    shifted.bed_epoch, shifted.wake_epoch, Scope.WEEKEND)
        self.population_windows_ = population
        self._fit_cache = per_key
        return self

    def transform(self, dataset: StepDataset) -> dict:
        if not hasattr(self, "population_windows_"):
            raise RuntimeError("classifier must be fitted before transform")
        config = self.config()
        results = {}
        for key in sorted(dataset.series, key=lambda k: (k[0], k[1].value)):
            arm = dataset.participants[key[0]].arm
            fallbacks = {
                scope: window
                for (a, scope), window in self.population_windows_.items()
                if a == arm
            }
            results[key] = classify_series(
                dataset.series[key], config, population_windows=fallbacks)
        return results

    def fit_transform(self, dataset: StepDataset, y=None) -> dict:
        return self.fit(dataset).transform(dataset)


CENSUS_CATEGORIES = (
    "completely_observed",
    "nonwear_only",
    "sleep_extra_only",
    "nonwear_and_sleep_extra",
    "whole_week",
)
CENSUS_BUCKETS = ("days_below_0", "days_below_1_5", "days_below_over_5")


def census(
    results: dict, day_weartime_min: float = 540.0
) -> list[tuple[str, str, int, float]]:
    """Participant counts by missingness category and low-wear-day bucket.

    Returns rows of (section, label, count, percent).  Categories are
    mutually exclusive; whole-week participants are counted only there.
    The bucket section counts days with wear time below
    ``day_weartime_min`` per participant: 0, 1-5, or more than 5.
    """
    total = len(results)
    cats = dict.fromkeys(CENSUS_CATEGORIES, 0)
    buckets = dict.fromkeys(CENSUS_BUCKETS, 0)
    for res in results.values():
        if res.whole_week:
            cats["whole_week"] += 1
        elif res.has_nonwear and res.has_sleep_extra:
            cats["nonwear_and_sleep_extra"] += 1
        elif res.has_nonwear:
            cats["nonwear_only"] += 1
        elif res.has_sleep_extra:
            cats["sleep_extra_only"] += 1
        else:
            cats["completely_observed"] += 1
        low = int(np.sum(res.weartime_min < day_weartime_min))
        if low == 0:
            buckets["days_below_0"] += 1
        elif low <= 5:
            buckets["days_below_1_5"] += 1
        else:
            buckets["days_below_over_5"] += 1
    rows = []
    for label, count in cats.items():
        rows.append(("category", label, count, 100.0 * count / total if total else 0.0))
    for label, count in buckets.items():
        rows.append(("low_wear_days", label, count, 100.0 * count / total if total else 0.0))
    return rows
