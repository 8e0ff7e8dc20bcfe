"""Core data model for epoch-level step-count series.

Data are recorded in 5-second epochs, 17,280 per day, seven consecutive
days per participant and timepoint.  Two channels are carried throughout:
``vm`` (vector magnitude, non-negative float) and ``steps`` (non-negative
integer count).  A per-epoch ``mask`` tracks whether the value is observed,
declared missing, or filled in by imputation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

EPOCH_SECONDS = 5
EPOCHS_PER_MINUTE = 60 // EPOCH_SECONDS        # 12
EPOCHS_PER_HOUR = 3600 // EPOCH_SECONDS        # 720
EPOCHS_PER_DAY = 24 * EPOCHS_PER_HOUR          # 17280
DAYS_PER_WEEK = 7
EPOCHS_PER_WEEK = DAYS_PER_WEEK * EPOCHS_PER_DAY

# mask codes
OBSERVED = 0
MISSING = 1
IMPUTED = 2

VM_DTYPE = np.float32
STEPS_DTYPE = np.int32
MASK_DTYPE = np.uint8


class Arm(enum.Enum):
    CONTROL = "control"
    POSTAL = "postal"
    NURSE = "nurse"


class Sex(enum.Enum):
    FEMALE = "female"
    MALE = "male"


class Timepoint(enum.Enum):
    BASELINE = "baseline"
    FOLLOWUP = "followup"


class DayOfWeek(enum.IntEnum):
    MONDAY = 0
    TUESDAY = 1
    WEDNESDAY = 2
    THURSDAY = 3
    FRIDAY = 4
    SATURDAY = 5
    SUNDAY = 6

    @property
    def is_weekend(self) -> bool:
        return self >= DayOfWeek.SATURDAY

    @classmethod
    def from_label(cls, label: str) -> "DayOfWeek":
        try:
            return _DOW_BY_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown day-of-week label: {label!r}") from None

    @property
    def label(self) -> str:
        return _DOW_LABELS[self]


_DOW_LABELS = {
    DayOfWeek.MONDAY: "Mon",
    DayOfWeek.TUESDAY: "Tue",
    DayOfWeek.WEDNESDAY: "Wed",
    DayOfWeek.THURSDAY: "Thu",
    DayOfWeek.FRIDAY: "Fri",
    DayOfWeek.SATURDAY: "Sat",
    DayOfWeek.SUNDAY: "Sun",
}
_DOW_BY_LABEL = {v: k for k, v in _DOW_LABELS.items()}


class PeriodClass(enum.Enum):
    INACTIVE = "inactive"
    NONWEAR = "nonwear"
    SLEEP = "sleep"
    SLEEP_EXTRA = "sleep_extra"


class Scope(enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"


def epoch_to_clock(epoch: int) -> str:
    """Render an epoch-of-day index as an HH:MM:SS wall-clock string."""
    if not 0 <= epoch < EPOCHS_PER_DAY:
        raise ValueError(f"epoch index out of range [0, {EPOCHS_PER_DAY}): {epoch}")
    seconds = int(epoch) * EPOCH_SECONDS
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


def clock_to_epoch(clock: str) -> int:
    """Parse HH:MM:SS (or HH:MM) to an epoch-of-day index, flooring to the epoch."""
    parts = clock.split(":")
    if len(parts) == 2:
        parts.append("0")
    if len(parts) != 3:
        raise ValueError(f"clock string must be HH:MM[:SS]: {clock!r}")
    h, m, s = (int(p) for p in parts)
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ValueError(f"clock string out of range: {clock!r}")
    return (h * 3600 + m * 60 + s) // EPOCH_SECONDS


def day_position_bounds(day_index: int) -> tuple[int, int]:
    """Half-open timeline position range covered by a 1-based day index."""
    if not 1 <= day_index <= DAYS_PER_WEEK:
        raise ValueError(f"day index out of range [1, {DAYS_PER_WEEK}]: {day_index}")
    start = (day_index - 1) * EPOCHS_PER_DAY
    return start, start + EPOCHS_PER_DAY


@dataclass(frozen=True)
class DayRecord:
    """One recorded day: 17,280 epochs of vm, steps, and mask."""

    day_index: int                  # 1..7 within the measurement week
    day_of_week: DayOfWeek
    vm: np.ndarray                  # float, >= 0
    steps: np.ndarray               # int, >= 0
    mask: np.ndarray = None         # uint8 codes; defaults to all observed

    def __post_init__(self):
        if not 1 <= self.day_index <= DAYS_PER_WEEK:
            raise ValueError(f"day_index out of range: {self.day_index}")
        vm = np.asarray(self.vm, dtype=VM_DTYPE)
        steps = np.asarray(self.steps, dtype=STEPS_DTYPE)
        if self.mask is None:
            mask = np.zeros(EPOCHS_PER_DAY, dtype=MASK_DTYPE)
        else:
            mask = np.asarray(self.mask, dtype=MASK_DTYPE)
        for name, arr in (("vm", vm), ("steps", steps), ("mask", mask)):
            if arr.shape != (EPOCHS_PER_DAY,):
                raise ValueError(f"{name} must have shape ({EPOCHS_PER_DAY},), got {arr.shape}")
        if vm.min() < 0:
            raise ValueError("vm must be non-negative")
        if steps.min() < 0:
            raise ValueError("steps must be non-negative")
        # steps imply movement: a positive step count with zero vm is inconsistent
        if bool(np.any((steps > 0) & (vm == 0))):
            raise ValueError("epochs with steps > 0 must have vm > 0")
        if mask.max() > IMPUTED:
            raise ValueError("mask codes must be in {0, 1, 2}")
        object.__setattr__(self, "vm", vm)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class EpochSeries:
    """Seven consecutive days of epoch data for one participant-timepoint."""

    participant_id: str
    timepoint: Timepoint
    days: tuple[DayRecord, ...]

    def __post_init__(self):
        days = tuple(self.days)
        if len(days) != DAYS_PER_WEEK:
            raise ValueError(f"a series must hold exactly {DAYS_PER_WEEK} days")
        for k, day in enumerate(days, start=1):
            if day.day_index != k:
                raise ValueError("day_index values must be 1..7 in order")
        for prev, cur in zip(days, days[1:]):
            if int(cur.day_of_week) != (int(prev.day_of_week) + 1) % 7:
                raise ValueError("day_of_week must advance by one calendar day per record")
        object.__setattr__(self, "days", days)

    @cached_property
    def vm_week(self) -> np.ndarray:
        """Concatenated vm over the 7-day timeline (length 120,960)."""
        return np.concatenate([d.vm for d in self.days])

    @cached_property
    def steps_week(self) -> np.ndarray:
        return np.concatenate([d.steps for d in self.days])

    @cached_property
    def mask_week(self) -> np.ndarray:
        return np.concatenate([d.mask for d in self.days])

    def day(self, day_index: int) -> DayRecord:
        return self.days[day_index - 1]

    def scope_of_day(self, day_index: int) -> Scope:
        dow = self.days[day_index - 1].day_of_week
        return Scope.WEEKEND if dow.is_weekend else Scope.WEEKDAY

    def with_days(self, new_days: Iterable[DayRecord]) -> "EpochSeries":
        return EpochSeries(self.participant_id, self.timepoint, tuple(new_days))

    def daily_step_totals(self) -> np.ndarray:
        """Sum of the steps channel per day, missing epochs contributing zero."""
        out = np.empty(DAYS_PER_WEEK, dtype=np.int64)
        for i, d in enumerate(self.days):
            obs = d.mask != MISSING
            out[i] = int(d.steps[obs].sum())
        return out


@dataclass(frozen=True)
class Participant:
    """Trial-level participant record."""

    participant_id: str
    arm: Arm
    sex: Sex
    age: float
    bmi: float
    practice: Optional[str] = None
    baseline_mean_steps: Optional[float] = None
    baseline_mean_weartime: Optional[float] = None

    def __post_init__(self):
        if not self.participant_id:
            raise ValueError("participant_id must be non-empty")
        if not np.isfinite(self.age) or self.age < 0:
            raise ValueError(f"age must be a non-negative finite number: {self.age}")
        if not np.isfinite(self.bmi) or self.bmi <= 0:
            raise ValueError(f"bmi must be a positive finite number: {self.bmi}")


@dataclass(frozen=True)
class ClassifiedPeriod:
    """A maximal zero-count run on the week timeline, with its class label.

    ``start``/``end`` are half-open positions on the concatenated 7-day
    timeline (0 .. 120,960).  The span includes any tolerated short nonzero
    interruptions inside the run.
    """

    start: int
    end: int
    period_class: PeriodClass
    boundary_spike: bool

    def __post_init__(self):
        if not 0 <= self.start < self.end <= EPOCHS_PER_WEEK:
            raise ValueError(f"invalid period span [{self.start}, {self.end})")

    @property
    def duration_hours(self) -> float:
        return (self.end - self.start) / EPOCHS_PER_HOUR

    @property
    def start_day(self) -> int:
        return self.start // EPOCHS_PER_DAY + 1

    @property
    def start_epoch(self) -> int:
        return self.start % EPOCHS_PER_DAY

    @property
    def end_day(self) -> int:
        """1-based day containing the last epoch of the period."""
        return (self.end - 1) // EPOCHS_PER_DAY + 1

    @property
    def end_epoch(self) -> int:
        """Epoch-of-day of the exclusive end, in 1..17280 on ``end_day``."""
        return self.end - (self.end_day - 1) * EPOCHS_PER_DAY

    def overlap_epochs(self, pos_start: int, pos_end: int) -> int:
        return max(0, min(self.end, pos_end) - max(self.start, pos_start))


@dataclass(frozen=True)
class MissingInterval:
    """A within-day epoch range declared missing; never crosses midnight."""

    day_index: int
    epoch_start: int
    epoch_end: int          # exclusive, <= 17280
    source: PeriodClass     # NONWEAR or SLEEP_EXTRA

    def __post_init__(self):
        if not 1 <= self.day_index <= DAYS_PER_WEEK:
            raise ValueError(f"day_index out of range: {self.day_index}")
        if not 0 <= self.epoch_start < self.epoch_end <= EPOCHS_PER_DAY:
            raise ValueError(
                f"invalid epoch range [{self.epoch_start}, {self.epoch_end})")
        if self.source not in (PeriodClass.NONWEAR, PeriodClass.SLEEP_EXTRA):
            raise ValueError(f"source must be nonwear or sleep_extra: {self.source}")

    @property
    def n_epochs(self) -> int:
        return self.epoch_end - self.epoch_start

    @property
    def position_start(self) -> int:
        return (self.day_index - 1) * EPOCHS_PER_DAY + self.epoch_start

    @property
    def position_end(self) -> int:
        return (self.day_index - 1) * EPOCHS_PER_DAY + self.epoch_end


@dataclass(frozen=True)
class SleepWindow:
    """Average bed and wake clock times for one scope (weekday or weekend).

    The window is circular: ``bed_epoch`` may be larger than ``wake_epoch``
    when sleep straddles midnight.  Membership is half-open [bed, wake).
    """

    bed_epoch: int
    wake_epoch: int
    scope: Scope

    def __post_init__(self):
        for name, v in (("bed_epoch", self.bed_epoch), ("wake_epoch", self.wake_epoch)):
            if not 0 <= v < EPOCHS_PER_DAY:
                raise ValueError(f"{name} out of range: {v}")

    def contains(self, epoch_of_day: np.ndarray | int):
        """Vectorized membership test for epoch-of-day values."""
        e = np.asarray(epoch_of_day)
        if self.bed_epoch <= self.wake_epoch:
            return (e >= self.bed_epoch) & (e < self.wake_epoch)
        return (e >= self.bed_epoch) | (e < self.wake_epoch)

    def shifted_later(self, minutes: int) -> "SleepWindow":
        d = minutes * EPOCHS_PER_MINUTE
        return SleepWindow(
            (self.bed_epoch + d) % EPOCHS_PER_DAY,
            (self.wake_epoch + d) % EPOCHS_PER_DAY,
            self.scope,
        )


def weartime_minutes(day_index: int, periods: Iterable[ClassifiedPeriod]) -> float:
    """Minutes of day ``day_index`` not inside any zero-count period.

    Wear time is defined by exclusion: all detected zero-count periods count
    as non-wear for this purpose regardless of their class label.
    """
    pos_start, pos_end = day_position_bounds(day_index)
    covered = sum(p.overlap_epochs(pos_start, pos_end) for p in periods)
    return (EPOCHS_PER_DAY - covered) * EPOCH_SECONDS / 60.0


@dataclass(frozen=True)
class StepDataset:
    """A bundle of participants and their epoch series.

    ``series`` is keyed by ``(participant_id, timepoint)``.  Every series key
    must reference a known participant.
    """

    participants: dict[str, Participant]
    series: dict[tuple[str, Timepoint], EpochSeries] = field(default_factory=dict)

    def __post_init__(self):
        for (pid, tp), s in self.series.items():
            if pid not in self.participants:
                raise ValueError(f"series references unknown participant {pid!r}")
            if s.participant_id != pid or s.timepoint != tp:
                raise ValueError(f"series key {(pid, tp)} does not match its content")

    def timepoints(self) -> list[Timepoint]:
        return sorted({tp for _, tp in self.series}, key=lambda t: t.value)

    def participants_with(self, timepoint: Timepoint) -> list[Participant]:
        ids = sorted(pid for pid, tp in self.series if tp == timepoint)
        return [self.participants[pid] for pid in ids]

    def by_arm(self, arm: Arm, timepoint: Timepoint) -> list[EpochSeries]:
        return [
            self.series[(pid, timepoint)]
            for pid in sorted(self.participants)
            if self.participants[pid].arm == arm and (pid, timepoint) in self.series
        ]
