"""Synthetic cohort generation and reusable missingness patterns.

The generator builds complete (gap-free) accelerometer weeks from an
:class:`ActivityProfile`: nightly sleep is the only source of zero-count
runs, waking epochs always carry positive vm, and each day's step total is
realized exactly from a person-level activity model.  Missingness is then
induced by applying :class:`MissingnessPattern` objects extracted from
classified incomplete weeks, so induced gaps reproduce real nonwear and
oversleep shapes epoch for epoch.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .classify import ClassifierConfig, classify_series
from .errors import InsufficientPool, NoMissingness
from .model import (
    Arm,
    DayOfWeek,
    DayRecord,
    EPOCHS_PER_DAY,
    EPOCHS_PER_HOUR,
    EPOCHS_PER_MINUTE,
    EPOCHS_PER_WEEK,
    EpochSeries,
    Participant,
    PeriodClass,
    Sex,
    StepDataset,
    Timepoint,
)
from .pooling import ols_fit, pearson_correlation
from .validation import RNG_GEN, derived_rng

__all__ = [
    "ActivityProfile",
    "TruthRecord",
    "generate_complete_dataset",
    "PatternEntry",
    "MissingnessPattern",
    "extract_pattern",
    "apply_pattern",
    "build_pattern_library",
    "save_pattern_library",
    "load_pattern_library",
    "bootstrap_without_replacement",
]

# Default waking-hour intensity weights (index = hour of day).  Only hours
# that fall inside the waking span matter; sleep hours are zeroed anyway.
_DEFAULT_HOURLY_CURVE = (
    0.1, 0.1, 0.1, 0.1, 0.1, 0.2,
    0.3, 0.4, 0.8, 1.2, 1.2, 1.0,
    1.0, 0.9, 0.9, 1.0, 1.1, 1.3,
    1.1, 0.8, 0.5, 0.3, 0.15, 0.1,
)

_SPIKE_VM = 650.0  # planted handling signature at induced nonwear boundaries


@dataclass(frozen=True)
class ActivityProfile:
    """Population parameters for synthetic week generation.

    Step totals follow a lognormal person-by-day model: a person level with
    mild age and BMI slopes, a per-timepoint person effect whose latent
    correlation is calibrated so realized weekly means correlate at
    ``correlation`` across timepoints, and a day-level noise term.  With
    probability ``low_day_prob`` a day is a low-activity day centred well
    below the person's level, so the day noise is left-skewed on the log
    scale rather than lognormal.  Arm effects are additive daily-step
    shifts applied at follow-up only.
    """

    bed_weekday_min: float = 23 * 60.0
    wake_weekday_min: float = 7 * 60.0
    weekend_shift_min: float = 60.0
    person_sleep_sd_min: float = 18.0
    night_jitter_sd_min: float = 10.0
    base_daily_steps: float = 7500.0
    person_log_sd: float = 0.35
    day_log_sd: float = 0.18
    low_day_prob: float = 0.18
    low_day_log_mean: float = -0.8
    low_day_log_sd: float = 0.25
    weekend_activity_factor: float = 0.9
    age_log_slope: float = -0.008
    bmi_log_slope: float = -0.012
    correlation: float = 0.6
    arm_effects: tuple[float, float, float] = (0.0, 400.0, 650.0)
    cadence_range: tuple[int, int] = (8, 12)
    bout_len_range: tuple[int, int] = (24, 120)
    hourly_curve: tuple[float, ...] = _DEFAULT_HOURLY_CURVE
    wake_vm_range: tuple[float, float] = (30.0, 550.0)
    walk_vm_per_step: float = 110.0
    age_range: tuple[float, float] = (45.0, 75.0)
    male_prop: float = 0.36
    bmi_mean: float = 27.5
    bmi_sd: float = 4.0
    bmi_range: tuple[float, float] = (18.0, 40.0)

    def __post_init__(self):
        if not 0.0 <= self.correlation < 1.0:
            raise ValueError(f"correlation must be in [0, 1): {self.correlation}")
        if self.base_daily_steps <= 0:
            raise ValueError("base_daily_steps must be positive")
        if self.person_log_sd < 0 or self.day_log_sd < 0:
            raise ValueError("log-scale standard deviations must be non-negative")
        if not 0.0 <= self.low_day_prob < 1.0:
            raise ValueError(f"low_day_prob must be in [0, 1): {self.low_day_prob}")
        if self.low_day_log_mean > 0.0 or self.low_day_log_sd < 0.0:
            raise ValueError("low days must centre at or below the person level")
        if len(self.hourly_curve) != 24 or min(self.hourly_curve) < 0:
            raise ValueError("hourly_curve must hold 24 non-negative weights")
        if len(self.arm_effects) != 3:
            raise ValueError("arm_effects must list control, postal, nurse shifts")
        lo, hi = self.wake_vm_range
        if not 0 < lo < hi:
            raise ValueError("wake_vm_range must be positive and increasing")
        # waking vm must stay below the boundary-spike threshold so complete
        # weeks never show spurious put-on/put-off signatures at sleep edges
        if hi >= 600.0:
            raise ValueError("wake_vm_range upper bound must stay below 600")
        c_lo, c_hi = self.cadence_range
        if not 1 <= c_lo <= c_hi:
            raise ValueError("cadence_range must be increasing and at least 1")
        if not 0 <= self.male_prop <= 1:
            raise ValueError("male_prop must be a proportion")
        if self.wake_weekday_min + 120 >= self.bed_weekday_min:
            raise ValueError("waking span must be at least two hours long")

    def arm_effect(self, arm: Arm) -> float:
        return self.arm_effects[list(Arm).index(arm)]

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ActivityProfile":
        """Build a profile from parsed JSON, restoring tuple-typed fields."""
        data = {k: tuple(v) if isinstance(v, list) else v
                for k, v in mapping.items()}
        return cls(**data)


@dataclass(frozen=True)
class TruthRecord:
    """Estimands computed on the complete generated data.

    ``arm_means``: mean over participants of the weekly average daily step
    total, keyed by (arm, timepoint).  ``model_coef`` holds the coefficients
    of the follow-up-on-baseline linear model (intercept, baseline weekly
    mean, postal, nurse) when two timepoints were generated, else ``None``.
    ``arm_correlations``: per-arm correlation between baseline and follow-up
    weekly means, ``None`` for single-timepoint data.
    """

    arm_means: dict
    model_coef: Optional[np.ndarray]
    arm_correlations: Optional[dict]


def _calibration_inputs(profile: ActivityProfile, n: int, seed: int):
    rng = np.random.default_rng(seed)
    age = rng.uniform(*profile.age_range, n)
    bmi = np.clip(rng.normal(profile.bmi_mean, profile.bmi_sd, n), *profile.bmi_range)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    day_f = _day_factors(profile, rng, (2, n, 7))
    base_log = (
        math.log(profile.base_daily_steps)
        + profile.age_log_slope * (age - 60.0)
        + profile.bmi_log_slope * (bmi - 27.0)
    )
    factors = np.array([1, 1, 1, 1, 1,
                        profile.weekend_activity_factor,
                        profile.weekend_activity_factor])
    return base_log, z1, z2, day_f, factors


@lru_cache(maxsize=8)
def _calibrated_latent_rho(profile: ActivityProfile) -> float:
    """Latent person-effect correlation hitting the profile's target.

    Weekly means are lognormal-plus-averaging transforms of the latent
    bivariate normal person effects, so the realized correlation is
    attenuated relative to the latent one.  A fixed-seed simulation of the
    total-level model inverts that mapping numerically.
    """
    target = profile.correlation
    if target <= 0.0:
        return 0.0
    base_log, z1, z2, day_f, factors = _calibration_inputs(profile, 20000, 987654321)
    s_u = profile.person_log_sd

    def realized(rho: float) -> float:
        u_b = s_u * z1
        u_f = s_u * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
        w_b = (np.exp(base_log + u_b)[:, None] * factors * day_f[0]).mean(axis=1)
        w_f = (np.exp(base_log + u_f)[:, None] * factors * day_f[1]).mean(axis=1)
        return pearson_correlation(w_b, w_f)

    hi = 0.999
    if realized(hi) < target:
        raise ValueError(
            f"correlation target {target} is unattainable under the profile's "
            "variance settings")
    if realized(0.0) >= target:
        return 0.0
    return float(brentq(lambda r: realized(r) - target, 0.0, hi, xtol=1e-4))


def _day_factors(profile: ActivityProfile, rng, shape):
    """Mean-one daily activity multipliers with occasional low days.

    Ordinary days draw a tight lognormal factor; with probability
    ``low_day_prob`` a day drops to a factor centred at
    ``exp(low_day_log_mean)``.  The mixture is left-skewed on the log
    scale, so daily totals are deliberately not lognormal, and it is
    rescaled so the expected factor is exactly one.
    """
    p = profile.low_day_prob
    logs = rng.normal(0.0, profile.day_log_sd, shape)
    mean = math.exp(profile.day_log_sd ** 2 / 2.0)
    if p > 0.0:
        low = rng.random(shape) < p
        logs = np.where(
            low,
            rng.normal(profile.low_day_log_mean, profile.low_day_log_sd, shape),
            logs)
        mean = ((1.0 - p) * mean
                + p * math.exp(profile.low_day_log_mean
                               + profile.low_day_log_sd ** 2 / 2.0))
    return np.exp(logs) / mean


def _sleep_schedule(profile, rng, dows, bed_offset, wake_offset):
    """Per-day bed and wake epochs-of-day for one week."""
    shift = np.array([profile.weekend_shift_min if DayOfWeek(d).is_weekend else 0.0
                      for d in dows])
    bed_min = np.clip(
        profile.bed_weekday_min + shift + bed_offset
        + rng.normal(0.0, profile.night_jitter_sd_min, 7),
        21 * 60.0, 23 * 60.0 + 55.0)
    wake_min = np.clip(
        profile.wake_weekday_min + shift + wake_offset
        + rng.normal(0.0, profile.night_jitter_sd_min, 7),
        4 * 60.0, 11 * 60.0)
    bed_ep = np.rint(bed_min * EPOCHS_PER_MINUTE).astype(int)
    wake_ep = np.rint(wake_min * EPOCHS_PER_MINUTE).astype(int)
    return bed_ep, wake_ep


def _split_lengths(n_walk: int, rng, profile) -> np.ndarray:
    lo, hi = profile.bout_len_range
    mean_len = (lo + hi) / 2.0
    k = max(1, int(round(n_walk / mean_len)))
    if n_walk < k * lo:
        k = max(1, n_walk // lo)
    if k == 1:
        return np.array([n_walk])
    extra = rng.multinomial(n_walk - k * lo, np.full(k, 1.0 / k))
    return lo + extra


def _bout_starts(lo, hi, lengths, rng, curve):
    """Curve-weighted, collision-free bout start positions in [lo, hi)."""
    max_len = int(lengths.max())
    grid = np.arange(lo, hi - max_len, EPOCHS_PER_MINUTE)
    hours = (grid % EPOCHS_PER_DAY) // EPOCHS_PER_HOUR
    w = np.asarray(curve, dtype=float)[hours] + 1e-6
    k = len(lengths)
    if k >= len(grid):
        picks = grid
    else:
        picks = grid[rng.choice(len(grid), size=k, replace=False, p=w / w.sum())]
    starts = np.sort(picks)
    cursor = lo
    out = np.empty(k, dtype=int)
    for i, (s, length) in enumerate(zip(starts, lengths)):
        s = min(max(s, cursor), hi - int(length))
        out[i] = s
        cursor = s + int(length) + EPOCHS_PER_MINUTE
    return out


def _place_bouts(vm, steps, lo, hi, total, rng, profile):
    """Realize exactly ``total`` steps as walking bouts inside [lo, hi)."""
    if total <= 0 or hi - lo < 5 * EPOCHS_PER_MINUTE:
        return
    c_lo, c_hi = profile.cadence_range
    cadence = int(rng.integers(c_lo, c_hi + 1))
    n_walk = -(-total // cadence)               # ceil
    n_walk = min(n_walk, (hi - lo) // 2)
    if n_walk <= 0:
        return
    lengths = _split_lengths(n_walk, rng, profile)
    starts = _bout_starts(lo, hi, lengths, rng, profile.hourly_curve)
    last = None
    for s, length in zip(starts, lengths):
        length = int(length)
        steps[s:s + length] = cadence
        vm[s:s + length] = cadence * profile.walk_vm_per_step * rng.uniform(
            0.85, 1.15, length)
        last = s + length - 1
    excess = cadence * int(lengths.sum()) - total
    if excess > 0 and last is not None:
        steps[last] = max(1, cadence - excess)


def _realize_week(profile, rng, pid, tp, start_dow, age, bmi, person_effect,
                  arm_effect):
    dows = [(int(start_dow) + d) % 7 for d in range(7)]
    weekend = np.array([DayOfWeek(d).is_weekend for d in dows])
    bed_ep, wake_ep = _sleep_schedule(
        profile, rng,
        dows,
        rng.normal(0.0, profile.person_sleep_sd_min),
        rng.normal(0.0, profile.person_sleep_sd_min),
    )
    vm = rng.uniform(*profile.wake_vm_range, EPOCHS_PER_WEEK).astype(np.float64)
    steps = np.zeros(EPOCHS_PER_WEEK, dtype=np.int64)

    spans = [(0, wake_ep[0])]
    for d in range(6):
        spans.append((d * EPOCHS_PER_DAY + bed_ep[d],
                      (d + 1) * EPOCHS_PER_DAY + wake_ep[d + 1]))
    spans.append((6 * EPOCHS_PER_DAY + bed_ep[6], EPOCHS_PER_WEEK))
    for a, b in spans:
        vm[a:b] = 0.0

    level = profile.base_daily_steps * math.exp(
        profile.age_log_slope * (age - 60.0)
        + profile.bmi_log_slope * (bmi - 27.0)
        + person_effect)
    targets = level * np.where(weekend, profile.weekend_activity_factor, 1.0)
    targets = targets * _day_factors(profile, rng, 7) + arm_effect
    targets = np.maximum(np.rint(targets), 0.0).astype(int)

    # keep high-vm walking away from sleep boundaries: the classifier checks
    # a two-minute window next to each zero run for put-on/put-off spikes
    margin = 3 * EPOCHS_PER_MINUTE
    for d in range(7):
        lo = d * EPOCHS_PER_DAY + wake_ep[d] + margin
        hi = d * EPOCHS_PER_DAY + bed_ep[d] - margin
        _place_bouts(vm, steps, lo, hi, int(targets[d]), rng, profile)

    days = []
    for d in range(7):
        a = d * EPOCHS_PER_DAY
        days.append(DayRecord(d + 1, DayOfWeek(dows[d]),
                              vm[a:a + EPOCHS_PER_DAY],
                              steps[a:a + EPOCHS_PER_DAY]))
    return EpochSeries(pid, tp, tuple(days))


def _compute_truth(dataset: StepDataset, tps: Sequence[Timepoint]) -> TruthRecord:
    weekly = {tp: {} for tp in tps}
    for (pid, tp), s in dataset.series.items():
        weekly[tp][pid] = float(s.daily_step_totals().mean())
    arm_means = {}
    for tp in tps:
        for arm in Arm:
            vals = [weekly[tp][p.participant_id]
                    for p in dataset.participants_with(tp)
                    if p.arm == arm]
            arm_means[(arm, tp)] = float(np.mean(vals))
    if len(tps) < 2:
        return TruthRecord(arm_means, None, None)
    ids = sorted(pid for pid in dataset.participants
                 if pid in weekly[Timepoint.BASELINE]
                 and pid in weekly[Timepoint.FOLLOWUP])
    yb = np.array([weekly[Timepoint.BASELINE][i] for i in ids])
    yf = np.array([weekly[Timepoint.FOLLOWUP][i] for i in ids])
    arms = [dataset.participants[i].arm for i in ids]
    x = np.column_stack([
        np.ones(len(ids)),
        yb,
        [1.0 if a == Arm.POSTAL else 0.0 for a in arms],
        [1.0 if a == Arm.NURSE else 0.0 for a in arms],
    ])
    coef = ols_fit(x, yf).coef
    corrs = {}
    for arm in Arm:
        sel = np.array([a == arm for a in arms])
        corrs[arm] = pearson_correlation(yb[sel], yf[sel])
    return TruthRecord(arm_means, coef, corrs)


def generate_complete_dataset(
    profile: ActivityProfile,
    n_per_arm: int,
    timepoints: int = 1,
    master_seed: Optional[int] = None,
) -> tuple[StepDataset, TruthRecord]:
    """Generate a gap-free synthetic cohort plus its true estimands.

    Participants are split evenly over the three arms.  The returned data
    contain no missing epochs: a classifier run on any generated series
    finds only sleep-class zero runs and derives no missing intervals.
    """
    if master_seed is None:
        raise ValueError("master_seed is required for reproducible generation")
    if timepoints not in (1, 2):
        raise ValueError(f"timepoints must be 1 or 2: {timepoints}")
    if n_per_arm < 1:
        raise ValueError("n_per_arm must be positive")
    rho = _calibrated_latent_rho(profile) if timepoints == 2 else 0.0
    tps = [Timepoint.BASELINE] + ([Timepoint.FOLLOWUP] if timepoints == 2 else [])
    arms = list(Arm)
    participants: dict[str, Participant] = {}
    series = {}
    for pidx in range(3 * n_per_arm):
        pid = f"P{pidx + 1:04d}"
        arm = arms[pidx // n_per_arm]
        rng_p = derived_rng(master_seed, RNG_GEN, pidx)
        age = float(rng_p.uniform(*profile.age_range))
        sex = Sex.MALE if rng_p.random() < profile.male_prop else Sex.FEMALE
        bmi = float(np.clip(rng_p.normal(profile.bmi_mean, profile.bmi_sd),
                            *profile.bmi_range))
        z1, z2 = rng_p.standard_normal(2)
        effects = {
            Timepoint.BASELINE: profile.person_log_sd * z1,
            Timepoint.FOLLOWUP: profile.person_log_sd * (
                rho * z1 + math.sqrt(1.0 - rho * rho) * z2),
        }
        start_dow = DayOfWeek(int(rng_p.integers(7)))
        participants[pid] = Participant(pid, arm, sex, age, bmi)
        for t_i, tp in enumerate(tps):
            rng_t = derived_rng(master_seed, RNG_GEN, pidx, t_i)
            arm_shift = profile.arm_effect(arm) if tp == Timepoint.FOLLOWUP else 0.0
            series[(pid, tp)] = _realize_week(
                profile, rng_t, pid, tp, start_dow, age, bmi,
                effects[tp], arm_shift)
    dataset = StepDataset(participants, series)
    return dataset, _compute_truth(dataset, tps)


PATTERN_KINDS = ("nonwear", "sleep_extra")


@dataclass(frozen=True)
class PatternEntry:
    """One induced span: day offset plus an epoch range within that day.

    ``epoch_end`` may exceed the day length when the span runs past
    midnight into following days.
    """

    day_offset: int
    epoch_start: int
    epoch_end: int
    kind: str

    def __post_init__(self):
        if not 0 <= self.day_offset < 7:
            raise ValueError(f"day_offset out of range: {self.day_offset}")
        if not 0 <= self.epoch_start < EPOCHS_PER_DAY:
            raise ValueError(f"epoch_start out of range: {self.epoch_start}")
        if self.epoch_end <= self.epoch_start:
            raise ValueError("epoch_end must exceed epoch_start")
        if self.position_end > EPOCHS_PER_WEEK:
            raise ValueError("span runs past the end of the week")
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"kind must be one of {PATTERN_KINDS}: {self.kind!r}")

    @property
    def position_start(self) -> int:
        return self.day_offset * EPOCHS_PER_DAY + self.epoch_start

    @property
    def position_end(self) -> int:
        return self.day_offset * EPOCHS_PER_DAY + self.epoch_end


@dataclass(frozen=True)
class MissingnessPattern:
    """An ordered, non-overlapping set of spans taken from one source week."""

    source_id: str
    entries: tuple[PatternEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("a pattern must hold at least one entry")
        pos = [(e.position_start, e.position_end) for e in entries]
        if pos != sorted(pos):
            raise ValueError("entries must be sorted by position")
        for (_, e1), (s2, _) in zip(pos, pos[1:]):
            if s2 < e1:
                raise ValueError("entries must not overlap")
        object.__setattr__(self, "entries", entries)

    def to_mapping(self) -> dict:
        return {
            "source_id": self.source_id,
            "entries": [[e.day_offset, e.epoch_start, e.epoch_end, e.kind]
                        for e in self.entries],
        }

    @classmethod
    def from_mapping(cls, mapping: dict) -> "MissingnessPattern":
        entries = tuple(PatternEntry(int(d), int(s), int(e), str(k))
                        for d, s, e, k in mapping["entries"])
        return cls(str(mapping["source_id"]), entries)


def extract_pattern(classification, source_id: str = "") -> MissingnessPattern:
    """Lift the nonwear and oversleep periods of a classified week into a
    reusable pattern, in timeline coordinates relative to the week start."""
    entries = []
    for p in classification.periods:
        if p.period_class in (PeriodClass.NONWEAR, PeriodClass.SLEEP_EXTRA):
            entries.append(PatternEntry(
                p.start_day - 1,
                p.start_epoch,
                p.start_epoch + (p.end - p.start),
                p.period_class.value,
            ))
    if not entries:
        raise NoMissingness(
            f"series {source_id or '<unnamed>'} has no nonwear or oversleep periods")
    return MissingnessPattern(source_id, tuple(entries))


def _extend_to_min_run(vm, steps, a, b, min_epochs):
    """Grow the zero run containing [a, b) until it reaches ``min_epochs``.

    Bridges backward to the nearest earlier zero run first (normally the
    night before, so an induced oversleep merges with the target's own
    sleep), then forward, then plain forward zeroing as a last resort.
    """
    n = len(vm)
    s = a
    while s > 0 and vm[s - 1] == 0:
        s -= 1
    e = b
    while e < n and vm[e] == 0:
        e += 1
    guard = 0
    while e - s < min_epochs and guard < 20:
        guard += 1
        i = s - 1
        while i >= 0 and vm[i] != 0:
            i -= 1
        if i >= 0:
            vm[i + 1:s] = 0
            steps[i + 1:s] = 0
            s = i
            while s > 0 and vm[s - 1] == 0:
                s -= 1
            continue
        j = e
        while j < n and vm[j] != 0:
            j += 1
        if j < n:
            vm[e:j] = 0
            steps[e:j] = 0
            e = j
            while e < n and vm[e] == 0:
                e += 1
            continue
        e2 = min(n, s + min_epochs)
        vm[s:e2] = 0
        steps[s:e2] = 0
        e = e2
        break


def apply_pattern(
    series: EpochSeries,
    pattern: MissingnessPattern,
    spike_vm: float = _SPIKE_VM,
    min_sleep_extra_h: float = 15.0,
) -> EpochSeries:
    """Induce the pattern's spans onto a complete series.

    Both channels are zeroed over every span.  Nonwear spans get a vm spike
    planted at the adjacent epoch so short gaps reproduce the put-on/put-off
    signature the classifier keys on; oversleep spans are extended to merge
    with the target's own sleep whenever the resulting zero run would fall
    short of the oversleep duration threshold.
    """
    vm = series.vm_week.astype(np.float64)
    steps = series.steps_week.astype(np.int64)
    for e in pattern.entries:
        vm[e.position_start:e.position_end] = 0.0
        steps[e.position_start:e.position_end] = 0
    min_epochs = int(round(min_sleep_extra_h * EPOCHS_PER_HOUR))
    for e in pattern.entries:
        if e.kind == "sleep_extra":
            _extend_to_min_run(vm, steps, e.position_start, e.position_end,
                               min_epochs)
    for e in pattern.entries:
        if e.kind != "nonwear":
            continue
        after, before = e.position_end, e.position_start - 1
        if after < EPOCHS_PER_WEEK and vm[after] > 0:
            vm[after] = max(vm[after], spike_vm)
        elif before >= 0 and vm[before] > 0:
            vm[before] = max(vm[before], spike_vm)
    days = []
    for d, old in enumerate(series.days):
        a = d * EPOCHS_PER_DAY
        days.append(DayRecord(old.day_index, old.day_of_week,
                              vm[a:a + EPOCHS_PER_DAY],
                              steps[a:a + EPOCHS_PER_DAY],
                              old.mask.copy()))
    return series.with_days(days)


def _light_nonwear(rng, day: int) -> list[tuple[int, int, int, str]]:
    t0 = rng.uniform(11.5, 15.4)
    dur = rng.uniform(1.2, 4.4)
    start = int(round(t0 * EPOCHS_PER_HOUR))
    return [(day, start, start + int(round(dur * EPOCHS_PER_HOUR)), "nonwear")]


def _heavy_nonwear(rng, day: int) -> list[tuple[int, int, int, str]]:
    """Two separate blocks on one day, removing most of its waking time."""
    s1 = rng.uniform(11.5, 12.2)
    e1 = s1 + rng.uniform(2.5, 3.4)
    s2 = e1 + rng.uniform(0.7, 1.2)
    e2 = min(s2 + rng.uniform(2.5, 4.4), 20.0)
    out = []
    for s, e in ((s1, e1), (s2, e2)):
        a = int(round(s * EPOCHS_PER_HOUR))
        out.append((day, a, a + int(round((e - s) * EPOCHS_PER_HOUR)), "nonwear"))
    return out


def _draw_raw_entries(rng) -> list[tuple[int, int, int, str]]:
    """Random span layout for one candidate pattern.

    Spans sit inside windows that clear any generated sleep schedule:
    nonwear blocks run between late morning and early evening, oversleep
    and day-off spans start before the earliest bed time and end after the
    latest wake time, so candidate patterns transfer to arbitrary target
    weeks.  Shape mix: light nonwear blocks, heavy two-block days, long
    oversleep mornings, and rare full days off.
    """
    entries = []
    days = list(range(7))
    shape = rng.choice(
        ["light", "heavy", "sleep", "day_off", "mixed"],
        p=[0.40, 0.15, 0.15, 0.08, 0.22])
    if shape in ("sleep", "mixed"):
        d = int(rng.integers(0, 6))
        t0 = rng.uniform(19.0, 20.5)
        dur = rng.uniform(15.4, 18.0)
        start = int(round(t0 * EPOCHS_PER_HOUR))
        entries.append((d, start, start + int(round(dur * EPOCHS_PER_HOUR)),
                        "sleep_extra"))
        days.remove(d)
        days.remove(d + 1)
    if shape == "day_off":
        d = int(rng.integers(0, 6))
        t0 = rng.uniform(18.5, 19.5)
        end = 24.0 + rng.uniform(18.0, 20.0)
        start = int(round(t0 * EPOCHS_PER_HOUR))
        entries.append((d, start, start + int(round((end - t0) * EPOCHS_PER_HOUR)),
                        "sleep_extra"))
        days = [x for x in days if x not in (d, d + 1)]
    if shape == "heavy":
        d = int(rng.choice(days))
        entries += _heavy_nonwear(rng, d)
        days.remove(d)
        if rng.random() < 0.5:
            entries += _light_nonwear(rng, int(rng.choice(days)))
    if shape in ("light", "mixed"):
        k = int(rng.choice([1, 2, 3], p=[0.5, 0.35, 0.15]))
        k = min(k, len(days))
        for d in sorted(rng.choice(days, size=k, replace=False).tolist()):
            entries += _light_nonwear(rng, int(d))
    entries.sort(key=lambda t: (t[0], t[1]))
    return entries


def build_pattern_library(
    profile: Optional[ActivityProfile] = None,
    n_patterns: int = 64,
    master_seed: int = 20260815,
    validate_weeks: int = 3,
) -> list[MissingnessPattern]:
    """Curate a library of patterns that round-trip exactly.

    Each candidate is applied to a complete source week, classified, and
    re-extracted; it is kept only when the extracted entries equal the
    candidate's on the source week and on ``validate_weeks`` further target
    weeks.  This guarantees the library induces missing intervals that match
    the pattern spans epoch for epoch on generated data.
    """
    profile = profile or ActivityProfile()
    rng = np.random.default_rng(master_seed)
    source, _ = generate_complete_dataset(profile, 4, 1, master_seed + 1)
    targets, _ = generate_complete_dataset(profile, 1, 1, master_seed + 2)
    config = ClassifierConfig()
    source_keys = sorted(source.series, key=lambda k: k[0])
    target_series = [targets.series[k] for k in sorted(targets.series,
                                                       key=lambda k: k[0])]
    patterns: list[MissingnessPattern] = []
    attempts = 0
    while len(patterns) < n_patterns and attempts < 60 * n_patterns:
        attempts += 1
        base = source.series[source_keys[attempts % len(source_keys)]]
        raw = _draw_raw_entries(rng)
        candidate = MissingnessPattern(
            f"SYN{len(patterns) + 1:03d}",
            tuple(PatternEntry(*t) for t in raw),
        )
        ok = True
        for week in [base] + target_series[:validate_weeks]:
            applied = apply_pattern(week, candidate)
            try:
                extracted = extract_pattern(
                    classify_series(applied, config), candidate.source_id)
            except NoMissingness:
                ok = False
                break
            if extracted.entries != candidate.entries:
                ok = False
                break
        if ok:
            patterns.append(candidate)
    if len(patterns) < n_patterns:
        raise RuntimeError(
            f"only {len(patterns)} of {n_patterns} candidate patterns validated")
    return patterns


def save_pattern_library(patterns: Sequence[MissingnessPattern], path) -> None:
    payload = {
        "version": 1,
        "patterns": [p.to_mapping() for p in patterns],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_pattern_library(path=None) -> list[MissingnessPattern]:
    """Load a pattern library; defaults to the bundled curated set."""
    if path is None:
        ref = importlib.resources.files("stepmi").joinpath("data/patterns.json")
        payload = json.loads(ref.read_text(encoding="utf-8"))
    else:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    return [MissingnessPattern.from_mapping(m) for m in payload["patterns"]]


def bootstrap_without_replacement(ids: Sequence[str], n: int, rng) -> list[str]:
    """Draw ``n`` distinct elements uniformly from ``ids``."""
    ids = list(ids)
    if n > len(ids):
        raise InsufficientPool(f"requested {n} draws from a pool of {len(ids)}")
    if n < 0:
        raise ValueError(f"sample size must be non-negative: {n}")
    idx = rng.choice(len(ids), size=n, replace=False)
    return [ids[i] for i in np.sort(idx)]
