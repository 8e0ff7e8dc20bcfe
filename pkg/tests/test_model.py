import numpy as np
import pytest

from stepmi.model import (
    EPOCHS_PER_DAY,
    EPOCHS_PER_HOUR,
    EPOCHS_PER_WEEK,
    ClassifiedPeriod,
    DayOfWeek,
    DayRecord,
    EpochSeries,
    MissingInterval,
    Participant,
    PeriodClass,
    Arm,
    Sex,
    SleepWindow,
    Scope,
    Timepoint,
    clock_to_epoch,
    epoch_to_clock,
    weartime_minutes,
)

from conftest import make_series, series_from_arrays, week_arrays


def test_epoch_to_clock_known_values():
    assert epoch_to_clock(0) == "00:00:00"
    assert epoch_to_clock(720) == "01:00:00"
    # 13,260 * 5 s = 66,300 s = 18:25:00
    assert epoch_to_clock(13260) == "18:25:00"
    assert epoch_to_clock(EPOCHS_PER_DAY - 1) == "23:59:55"


def test_clock_to_epoch_inverse():
    assert clock_to_epoch("18:25:00") == 13260
    assert clock_to_epoch("18:25") == 13260
    rng = np.random.default_rng(1)
    for e in rng.integers(0, EPOCHS_PER_DAY, size=200):
        assert clock_to_epoch(epoch_to_clock(int(e))) == int(e)


def test_epoch_to_clock_rejects_out_of_range():
    with pytest.raises(ValueError):
        epoch_to_clock(-1)
    with pytest.raises(ValueError):
        epoch_to_clock(EPOCHS_PER_DAY)
    with pytest.raises(ValueError):
        clock_to_epoch("24:00:00")


def test_weartime_eight_hour_period():
    # one 8 h zero-count period fully inside day 2 -> 16 h wear = 960 min
    start = EPOCHS_PER_DAY + 2 * EPOCHS_PER_HOUR
    p = ClassifiedPeriod(start, start + 8 * EPOCHS_PER_HOUR, PeriodClass.SLEEP, False)
    assert weartime_minutes(2, [p]) == 960.0
    assert weartime_minutes(1, [p]) == 1440.0


def test_weartime_period_spanning_midnight_splits():
    # 22:00 day 1 to 06:00 day 2: 2 h on day 1, 6 h on day 2
    p = ClassifiedPeriod(22 * EPOCHS_PER_HOUR, 30 * EPOCHS_PER_HOUR,
                         PeriodClass.SLEEP, False)
    assert weartime_minutes(1, [p]) == 1440.0 - 120.0
    assert weartime_minutes(2, [p]) == 1440.0 - 360.0


def test_weartime_monotone_under_added_periods(rng):
    periods = []
    for _ in range(40):
        s = int(rng.integers(0, EPOCHS_PER_WEEK - 720))
        e = s + int(rng.integers(720, 7200))
        e = min(e, EPOCHS_PER_WEEK)
        new = ClassifiedPeriod(s, e, PeriodClass.NONWEAR, False)
        for day in range(1, 8):
            before = weartime_minutes(day, periods)
            after = weartime_minutes(day, periods + [new])
            assert after <= before
        periods.append(new)


def test_day_record_validation():
    vm = np.zeros(EPOCHS_PER_DAY)
    steps = np.zeros(EPOCHS_PER_DAY, dtype=int)
    DayRecord(1, DayOfWeek.MONDAY, vm, steps)
    with pytest.raises(ValueError):
        DayRecord(1, DayOfWeek.MONDAY, vm[:-1], steps)
    with pytest.raises(ValueError):
        DayRecord(1, DayOfWeek.MONDAY, vm - 1.0, steps)
    bad_steps = steps.copy()
    bad_steps[5] = 3  # steps without vm
    with pytest.raises(ValueError):
        DayRecord(1, DayOfWeek.MONDAY, vm, bad_steps)
    with pytest.raises(ValueError):
        DayRecord(0, DayOfWeek.MONDAY, vm, steps)


def test_series_requires_consecutive_days():
    vm, steps = week_arrays()
    s = series_from_arrays(vm, steps)
    assert [d.day_of_week for d in s.days][-1] == DayOfWeek.SUNDAY
    # swap two day-of-week labels -> broken continuity
    days = list(s.days)
    days[2] = DayRecord(3, DayOfWeek.FRIDAY, days[2].vm, days[2].steps, days[2].mask)
    with pytest.raises(ValueError):
        EpochSeries("P1", Timepoint.BASELINE, tuple(days))


def test_series_week_starting_saturday():
    vm, steps = week_arrays()
    s = series_from_arrays(vm, steps, start_dow=DayOfWeek.SATURDAY)
    assert s.scope_of_day(1) == Scope.WEEKEND
    assert s.scope_of_day(3) == Scope.WEEKDAY


def test_daily_step_totals_exclude_missing():
    vm, steps = week_arrays(step_spans=[(100, 200, 3)])
    mask = np.zeros(EPOCHS_PER_WEEK, dtype=np.uint8)
    mask[150:200] = 1  # missing
    s = series_from_arrays(vm, steps, mask=mask)
    totals = s.daily_step_totals()
    assert totals[0] == 3 * 50  # only epochs 100..150 observed
    assert totals[1:].sum() == 0


def test_sleep_window_membership_across_midnight():
    w = SleepWindow(clock_to_epoch("23:00"), clock_to_epoch("07:00"), Scope.WEEKDAY)
    assert w.contains(clock_to_epoch("23:30"))
    assert w.contains(clock_to_epoch("03:00"))
    assert not w.contains(clock_to_epoch("07:00"))  # half-open
    assert w.contains(clock_to_epoch("23:00"))
    assert not w.contains(clock_to_epoch("12:00"))


def test_sleep_window_shift_wraps():
    w = SleepWindow(clock_to_epoch("23:30"), clock_to_epoch("07:00"), Scope.WEEKDAY)
    shifted = w.shifted_later(60)
    assert shifted.bed_epoch == clock_to_epoch("00:30")
    assert shifted.wake_epoch == clock_to_epoch("08:00")


def test_classified_period_day_epoch_coordinates():
    p = ClassifiedPeriod(2 * EPOCHS_PER_DAY + 100, 3 * EPOCHS_PER_DAY + 7,
                         PeriodClass.NONWEAR, True)
    assert p.start_day == 3 and p.start_epoch == 100
    assert p.end_day == 4 and p.end_epoch == 7
    assert p.duration_hours == pytest.approx((EPOCHS_PER_DAY - 93) / EPOCHS_PER_HOUR)


def test_missing_interval_validation():
    MissingInterval(1, 0, 10, PeriodClass.NONWEAR)
    with pytest.raises(ValueError):
        MissingInterval(1, 10, 10, PeriodClass.NONWEAR)
    with pytest.raises(ValueError):
        MissingInterval(1, 0, EPOCHS_PER_DAY + 1, PeriodClass.NONWEAR)
    with pytest.raises(ValueError):
        MissingInterval(1, 0, 10, PeriodClass.SLEEP)


def test_participant_validation():
    Participant("P1", Arm.CONTROL, Sex.FEMALE, 60.0, 27.0)
    with pytest.raises(ValueError):
        Participant("", Arm.CONTROL, Sex.FEMALE, 60.0, 27.0)
    with pytest.raises(ValueError):
        Participant("P1", Arm.CONTROL, Sex.FEMALE, -1.0, 27.0)
    with pytest.raises(ValueError):
        Participant("P1", Arm.CONTROL, Sex.FEMALE, 60.0, 0.0)


def test_make_series_helper_shape():
    s = make_series()
    assert s.vm_week.shape == (EPOCHS_PER_WEEK,)
    assert s.vm_week.min() > 0
