"""Shared factories for synthetic epoch series used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from stepmi.model import (
    EPOCHS_PER_DAY,
    EPOCHS_PER_WEEK,
    DAYS_PER_WEEK,
    Arm,
    DayOfWeek,
    DayRecord,
    EpochSeries,
    Participant,
    Sex,
    StepDataset,
    Timepoint,
)

BASE_VM = 50.0


def week_arrays(base_vm=BASE_VM, zero_spans=(), spikes=(), step_spans=()):
    """Build (vm, steps) week arrays: constant vm, carved zero spans, spikes.

    zero_spans: (start, end) timeline positions set to vm=0, steps=0.
    spikes: timeline positions set to vm=650.
    step_spans: (start, end, steps_per_epoch) with vm kept positive.
    """
    vm = np.full(EPOCHS_PER_WEEK, base_vm, dtype=np.float32)
    steps = np.zeros(EPOCHS_PER_WEEK, dtype=np.int32)
    for s, e, per in step_spans:
        steps[s:e] = per
        vm[s:e] = np.maximum(vm[s:e], 100.0)
    for s, e in zero_spans:
        vm[s:e] = 0.0
        steps[s:e] = 0
    for p in spikes:
        vm[p] = 650.0
    return vm, steps


def series_from_arrays(vm, steps, pid="P1", tp=Timepoint.BASELINE,
                       start_dow=DayOfWeek.MONDAY, mask=None):
    days = []
    for k in range(DAYS_PER_WEEK):
        lo, hi = k * EPOCHS_PER_DAY, (k + 1) * EPOCHS_PER_DAY
        days.append(DayRecord(
            day_index=k + 1,
            day_of_week=DayOfWeek((int(start_dow) + k) % 7),
            vm=vm[lo:hi],
            steps=steps[lo:hi],
            mask=None if mask is None else mask[lo:hi],
        ))
    return EpochSeries(pid, tp, tuple(days))


def make_series(zero_spans=(), spikes=(), step_spans=(), base_vm=BASE_VM,
                pid="P1", tp=Timepoint.BASELINE, start_dow=DayOfWeek.MONDAY):
    vm, steps = week_arrays(base_vm, zero_spans, spikes, step_spans)
    return series_from_arrays(vm, steps, pid=pid, tp=tp, start_dow=start_dow)


def nightly_sleep_spans(bed_epoch=16560, wake_epoch=5040):
    """Zero spans for a week of regular sleep: bed 23:00, wake 07:00.

    The week starts mid-sleep (00:00 to wake on day 1) and ends with a
    truncated evening span (bed to midnight on day 7).
    """
    spans = [(0, wake_epoch)]
    for day in range(DAYS_PER_WEEK - 1):
        start = day * EPOCHS_PER_DAY + bed_epoch
        spans.append((start, start + (EPOCHS_PER_DAY - bed_epoch) + wake_epoch))
    spans.append(((DAYS_PER_WEEK - 1) * EPOCHS_PER_DAY + bed_epoch, EPOCHS_PER_WEEK))
    return spans


def make_participant(pid="P1", arm=Arm.CONTROL, sex=Sex.FEMALE, age=60.0,
                     bmi=27.0, **kw):
    return Participant(pid, arm, sex, age, bmi, **kw)


def make_dataset(series_list, participants=None):
    if participants is None:
        participants = {}
        for s in series_list:
            participants.setdefault(s.participant_id, make_participant(s.participant_id))
    else:
        participants = {p.participant_id: p for p in participants}
    return StepDataset(
        participants=participants,
        series={(s.participant_id, s.timepoint): s for s in series_list},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
