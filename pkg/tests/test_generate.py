"""Tests for synthetic cohort generation and missingness patterns."""

import json

import numpy as np
import pytest

from stepmi.classify import ClassifierConfig, ZeroRunClassifier, classify_series
from stepmi.errors import InsufficientPool, NoMissingness
from stepmi.generate import (
    ActivityProfile,
    MissingnessPattern,
    PatternEntry,
    apply_pattern,
    bootstrap_without_replacement,
    build_pattern_library,
    extract_pattern,
    generate_complete_dataset,
    load_pattern_library,
    save_pattern_library,
)
from stepmi.model import (
    EPOCHS_PER_DAY,
    EPOCHS_PER_HOUR,
    Arm,
    PeriodClass,
    Timepoint,
)

CONFIG = ClassifierConfig()


@pytest.fixture(scope="module")
def small_dataset():
    ds, truth = generate_complete_dataset(ActivityProfile(), 2, 1, master_seed=4242)
    return ds, truth


@pytest.fixture(scope="module")
def small_series(small_dataset):
    ds, _ = small_dataset
    keys = sorted(ds.series)
    return [ds.series[k] for k in keys]


def test_profile_validation():
    with pytest.raises(ValueError):
        ActivityProfile(correlation=1.0)
    with pytest.raises(ValueError):
        ActivityProfile(wake_vm_range=(30.0, 700.0))
    with pytest.raises(ValueError):
        ActivityProfile(hourly_curve=(1.0,) * 23)
    with pytest.raises(ValueError):
        ActivityProfile(base_daily_steps=0.0)


def test_generate_requires_seed():
    with pytest.raises(ValueError):
        generate_complete_dataset(ActivityProfile(), 2, 1)


def test_complete_data_has_no_missingness(small_dataset):
    ds, _ = small_dataset
    classified = ZeroRunClassifier().fit_transform(ds)
    for cls in classified.values():
        assert cls.missing_intervals == ()
        assert not cls.whole_week
        for p in cls.periods:
            assert p.period_class in (PeriodClass.SLEEP, PeriodClass.INACTIVE)


def test_generate_structure(small_dataset):
    ds, truth = small_dataset
    assert len(ds.participants) == 6
    counts = {arm: 0 for arm in Arm}
    for p in ds.participants.values():
        counts[p.arm] += 1
        assert 45.0 <= p.age <= 75.0
        assert 18.0 <= p.bmi <= 40.0
    assert set(counts.values()) == {2}
    assert set(truth.arm_means) == {(arm, Timepoint.BASELINE) for arm in Arm}
    assert truth.model_coef is None
    assert truth.arm_correlations is None


def test_daily_totals_plausible(small_series):
    for s in small_series:
        totals = s.daily_step_totals()
        assert totals.min() >= 0
        assert 500 < totals.mean() < 30000


def test_generation_deterministic():
    prof = ActivityProfile()
    a, _ = generate_complete_dataset(prof, 1, 1, master_seed=9)
    b, _ = generate_complete_dataset(prof, 1, 1, master_seed=9)
    c, _ = generate_complete_dataset(prof, 1, 1, master_seed=10)
    key = sorted(a.series)[0]
    assert np.array_equal(a.series[key].vm_week, b.series[key].vm_week)
    assert np.array_equal(a.series[key].steps_week, b.series[key].steps_week)
    assert not np.array_equal(a.series[key].steps_week, c.series[key].steps_week)


def test_two_timepoint_correlation_matches_profile():
    prof = ActivityProfile()
    ds, truth = generate_complete_dataset(prof, 167, 2, master_seed=31)
    wb, wf = [], []
    for pid in sorted(ds.participants):
        wb.append(ds.series[(pid, Timepoint.BASELINE)].daily_step_totals().mean())
        wf.append(ds.series[(pid, Timepoint.FOLLOWUP)].daily_step_totals().mean())
    r = np.corrcoef(wb, wf)[0, 1]
    assert abs(r - prof.correlation) < 0.05
    assert truth.model_coef.shape == (4,)
    assert set(truth.arm_correlations) == set(Arm)


def test_arm_effects_shift_followup_means():
    prof = ActivityProfile(arm_effects=(0.0, 2000.0, 4000.0))
    _, truth = generate_complete_dataset(prof, 40, 2, master_seed=62)
    base = {arm: truth.arm_means[(arm, Timepoint.BASELINE)] for arm in Arm}
    fu = {arm: truth.arm_means[(arm, Timepoint.FOLLOWUP)] for arm in Arm}
    gain = {arm: fu[arm] - base[arm] for arm in Arm}
    assert gain[Arm.NURSE] > gain[Arm.POSTAL] > gain[Arm.CONTROL]
    assert gain[Arm.NURSE] - gain[Arm.CONTROL] == pytest.approx(4000.0, abs=1500.0)


def test_pattern_entry_validation():
    with pytest.raises(ValueError):
        PatternEntry(7, 0, 100, "nonwear")
    with pytest.raises(ValueError):
        PatternEntry(0, 100, 100, "nonwear")
    with pytest.raises(ValueError):
        PatternEntry(0, 0, 100, "gap")
    with pytest.raises(ValueError):
        PatternEntry(6, 17000, 2 * EPOCHS_PER_DAY, "sleep_extra")


def test_pattern_validation():
    a = PatternEntry(1, 1000, 2000, "nonwear")
    b = PatternEntry(1, 1500, 2500, "nonwear")
    with pytest.raises(ValueError):
        MissingnessPattern("X", (b, a))
    with pytest.raises(ValueError):
        MissingnessPattern("X", (a, b))
    with pytest.raises(ValueError):
        MissingnessPattern("X", ())
    pat = MissingnessPattern("X", (a, PatternEntry(2, 0, 400, "nonwear")))
    again = MissingnessPattern.from_mapping(json.loads(json.dumps(pat.to_mapping())))
    assert again == pat


def test_extract_pattern_requires_missingness(small_series):
    cls = classify_series(small_series[0], CONFIG)
    with pytest.raises(NoMissingness):
        extract_pattern(cls, "S1")


def test_nonwear_span_detected_exactly(small_series):
    start = 12 * EPOCHS_PER_HOUR
    end = 14 * EPOCHS_PER_HOUR
    pat = MissingnessPattern("T", (PatternEntry(1, start, end, "nonwear"),))
    for series in small_series[:3]:
        applied = apply_pattern(series, pat)
        cls = classify_series(applied, CONFIG)
        ivs = [(iv.day_index, iv.epoch_start, iv.epoch_end, iv.source)
               for iv in cls.missing_intervals]
        assert ivs == [(2, start, end, PeriodClass.NONWEAR)]
        assert extract_pattern(cls, "T").entries == pat.entries


def test_apply_pattern_touches_only_spans(small_series):
    series = small_series[0]
    start = 13 * EPOCHS_PER_HOUR
    end = start + int(1.5 * EPOCHS_PER_HOUR)
    pat = MissingnessPattern("T", (PatternEntry(3, start, end, "nonwear"),))
    applied = apply_pattern(series, pat)
    a = 3 * EPOCHS_PER_DAY + start
    b = 3 * EPOCHS_PER_DAY + end
    assert not applied.vm_week[a:b].any()
    assert not applied.steps_week[a:b].any()
    steps_untouched = np.array_equal(
        np.delete(applied.steps_week, np.arange(a, b)),
        np.delete(series.steps_week, np.arange(a, b)))
    assert steps_untouched
    vm_diff = np.flatnonzero(
        np.delete(applied.vm_week, np.arange(a, b))
        != np.delete(series.vm_week, np.arange(a, b)))
    assert vm_diff.size == 1
    assert applied.vm_week[b] == 650.0
    assert np.array_equal(applied.mask_week, series.mask_week)


def test_short_sleep_extra_span_extends_to_threshold(small_series):
    series = small_series[1]
    start = 9 * EPOCHS_PER_HOUR
    end = 19 * EPOCHS_PER_HOUR
    pat = MissingnessPattern("T", (PatternEntry(2, start, end, "sleep_extra"),))
    applied = apply_pattern(series, pat)
    cls = classify_series(applied, CONFIG)
    extra = [p for p in cls.periods if p.period_class == PeriodClass.SLEEP_EXTRA]
    assert len(extra) == 1
    pos_start = 2 * EPOCHS_PER_DAY + start
    pos_end = 2 * EPOCHS_PER_DAY + end
    assert extra[0].start <= pos_start - EPOCHS_PER_HOUR
    assert extra[0].end == pos_end
    assert extra[0].duration_hours >= 15.0


def test_bundled_pattern_library_round_trips(small_series):
    patterns = load_pattern_library()
    assert len(patterns) >= 50
    kinds = {e.kind for p in patterns for e in p.entries}
    assert kinds == {"nonwear", "sleep_extra"}
    series = small_series[2]
    for pat in patterns[::13]:
        applied = apply_pattern(series, pat)
        cls = classify_series(applied, CONFIG)
        assert extract_pattern(cls, pat.source_id).entries == pat.entries


def test_build_pattern_library_small(tmp_path):
    pats = build_pattern_library(n_patterns=6, master_seed=99)
    assert len(pats) == 6
    path = tmp_path / "lib.json"
    save_pattern_library(pats, path)
    assert load_pattern_library(path) == pats


def test_bootstrap_without_replacement_basics(rng):
    ids = [f"P{i}" for i in range(10)]
    draw = bootstrap_without_replacement(ids, 4, rng)
    assert len(draw) == len(set(draw)) == 4
    assert set(draw) <= set(ids)
    assert bootstrap_without_replacement(ids, 10, rng) == sorted(ids)
    with pytest.raises(InsufficientPool):
        bootstrap_without_replacement(ids, 11, rng)


def test_bootstrap_inclusion_uniform(rng):
    ids = list("ABCDEFGHIJ")
    hits = {i: 0 for i in ids}
    reps = 10000
    for _ in range(reps):
        for i in bootstrap_without_replacement(ids, 4, rng):
            hits[i] += 1
    for i in ids:
        assert abs(hits[i] / reps - 0.4) < 0.02
