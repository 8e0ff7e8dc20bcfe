"""Donor-based multiple imputation at the epoch level.

Missing intervals are filled with observed same-clock-time data.  A
participant with enough clean days donates to themselves; otherwise one
matched participant (same arm and timepoint, sex-exact, weighted by inverse
Mahalanobis distance on matching covariates) donates their same-clock
intervals.  Participants flagged for whole-week handling get their entire
week rebuilt from complete donors, weekday slots from donor weekdays and
weekend slots from donor weekend days.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .classify import SeriesClassification
from .errors import EmptyDonorPool, SingularCovariance, StepMIError
from .model import (
    DAYS_PER_WEEK,
    EPOCHS_PER_DAY,
    IMPUTED,
    MISSING,
    DayRecord,
    EpochSeries,
    MissingInterval,
    Participant,
    StepDataset,
    Timepoint,
)
from .parametric import DayStatus, aggregate_daily
from .validation import (
    RNG_NP_DONOR,
    RNG_NP_VALUES,
    RNG_NP_WEEK,
    derived_rng,
)

logger = logging.getLogger(__name__)

MATCHING_VARS = ("age", "bmi", "baseline_mean_steps", "baseline_mean_weartime")
SELF_POOL_MIN = 4   # strictly more clean own days than this triggers self-donation


@dataclass(frozen=True)
class DonorPool:
    """Candidates for one imputation decision.

    ``entries`` holds own day indices for self pools and participant ids
    otherwise.  ``weights`` accompany non-self and whole-week pools.
    ``relaxation`` records how far the eligibility ladder was descended:
    0 none, 1 clean-day requirement relaxed, 2 sex matching dropped.
    """

    kind: str
    entries: tuple
    weights: Optional[np.ndarray] = None
    relaxation: int = 0

    def __post_init__(self):
        if self.kind not in ("self", "nonself", "whole_week"):
            raise ValueError(f"unknown pool kind: {self.kind!r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.entries),):
                raise ValueError("weights must align with entries")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be positive and sum to 1")

    @property
    def size(self) -> int:
        return len(self.entries)


def _missing_by_day(series: EpochSeries, classification: SeriesClassification):
    """(7, epochs/day) bool: classifier-declared or input-masked missing."""
    miss = classification.missing_mask_week() | (series.mask_week == MISSING)
    return miss.reshape(DAYS_PER_WEEK, EPOCHS_PER_DAY)


def self_donor_pool(
    series: EpochSeries,
    classification: SeriesClassification,
    interval: MissingInterval,
) -> DonorPool:
    """Own other days fully observed over the interval's clock span."""
    miss = _missing_by_day(series, classification)
    span_dirty = miss[:, interval.epoch_start:interval.epoch_end].any(axis=1)
    days = tuple(
        d for d in range(1, DAYS_PER_WEEK + 1)
        if d != interval.day_index and not span_dirty[d - 1]
    )
    return DonorPool(kind="self", entries=days)


def mahalanobis_weights(target: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Inverse-distance sampling weights for candidate rows against a target.

    The covariance is the sample covariance over pool and target together;
    a singular covariance gets a diagonal ridge of 1e-8 trace/p.  Exact
    covariate matches take all the weight, split uniformly.
    """
    target = np.asarray(target, dtype=float)
    pool = np.asarray(pool, dtype=float)
    if pool.ndim != 2 or target.shape != (pool.shape[1],):
        raise ValueError("pool must be (n, p) and target (p,)")
    if pool.shape[0] == 0:
        raise ValueError("pool must not be empty")
    n, p = pool.shape
    if p == 0:
        return np.full(n, 1.0 / n)
    exact = np.all(pool == target, axis=1)
    if exact.any():
        return exact / exact.sum()
    rows = np.vstack([pool, target])
    cov = np.cov(rows, rowvar=False, ddof=1).reshape(p, p)
    try:
        cov_inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        ridge = 1e-8 * np.trace(cov) / p
        try:
            cov_inv = np.linalg.inv(cov + ridge * np.eye(p))
        except np.linalg.LinAlgError as err:
            raise SingularCovariance(
                f"covariance of {n + 1} rows over {p} vars is singular") from err
    diff = pool - target
    # a near-singular inverse can push the quadratic form negative; the
    # resulting NaN is caught and raised as a typed error just below
    with np.errstate(invalid="ignore"):
        d = np.sqrt(np.einsum("ij,jk,ik->i", diff, cov_inv, diff))
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise SingularCovariance("degenerate distances from singular covariance")
    inv = 1.0 / d
    return inv / inv.sum()


@dataclass(frozen=True)
class DonorContext:
    """Read-only matching state shared by all imputation decisions."""

    dataset: StepDataset
    classifications: dict[tuple[str, Timepoint], SeriesClassification]
    timepoint: Timepoint
    features: dict[str, np.ndarray]       # pid -> MATCHING_VARS values (NaN ok)
    missing_by_day: dict[str, np.ndarray] # pid -> (7, epochs/day) bool
    pids: tuple[str, ...]                 # sorted ids present at the timepoint


def observed_summaries(
    series: EpochSeries, classification: SeriesClassification
) -> tuple[float, float]:
    """(mean daily steps, mean daily weartime minutes) over complete days."""
    y, _, status = aggregate_daily(series, classification)
    ok = status == DayStatus.COMPLETE
    if not ok.any():
        return float("nan"), float("nan")
    return float(y[ok].mean()), float(classification.weartime_min[ok].mean())


def _participant_features(
    participant: Participant,
    dataset: StepDataset,
    classifications,
    summaries: Optional[dict[str, dict[str, float]]],
) -> np.ndarray:
    pid = participant.participant_id
    given = (summaries or {}).get(pid, {})
    base_key = (pid, Timepoint.BASELINE)
    obs_steps = obs_wear = float("nan")
    if base_key in dataset.series and base_key in classifications:
        obs_steps, obs_wear = observed_summaries(
            dataset.series[base_key], classifications[base_key])
    fallback = {
        "age": participant.age,
        "bmi": participant.bmi,
        "baseline_mean_steps": obs_steps if np.isfinite(obs_steps)
        else (participant.baseline_mean_steps
              if participant.baseline_mean_steps is not None else float("nan")),
        "baseline_mean_weartime": obs_wear if np.isfinite(obs_wear)
        else (participant.baseline_mean_weartime
              if participant.baseline_mean_weartime is not None else float("nan")),
    }
    return np.array(
        [given.get(v, fallback[v]) for v in MATCHING_VARS], dtype=float)


def build_donor_context(
    dataset: StepDataset,
    classifications,
    timepoint: Timepoint,
    baseline_summaries: Optional[dict[str, dict[str, float]]] = None,
) -> DonorContext:
    pids = tuple(sorted(p for p, t in dataset.series if t is timepoint))
    features, missing = {}, {}
    for pid in pids:
        part = dataset.participants[pid]
        features[pid] = _participant_features(
            part, dataset, classifications, baseline_summaries)
        missing[pid] = _missing_by_day(
            dataset.series[(pid, timepoint)], classifications[(pid, timepoint)])
    return DonorContext(
        dataset=dataset,
        classifications=classifications,
        timepoint=timepoint,
        features=features,
        missing_by_day=missing,
        pids=pids,
    )


def _clean_days(miss_by_day: np.ndarray, span: tuple[int, int]) -> tuple[int, ...]:
    dirty = miss_by_day[:, span[0]:span[1]].any(axis=1)
    return tuple(d for d in range(1, DAYS_PER_WEEK + 1) if not dirty[d - 1])


def _weighted_pool(ctx: DonorContext, target: Participant, cands: list[str],
                   kind: str, relaxation: int) -> DonorPool:
    """Weight candidates by matching covariates available for the target."""
    tvec = ctx.features[target.participant_id]
    keep = np.isfinite(tvec)
    rows, ids = [], []
    for pid in cands:
        vec = ctx.features[pid][keep]
        if np.all(np.isfinite(vec)):
            rows.append(vec)
            ids.append(pid)
    if not ids:
        raise EmptyDonorPool(
            f"no candidate has the matching covariates of {target.participant_id}")
    weights = mahalanobis_weights(tvec[keep], np.array(rows))
    return DonorPool(kind=kind, entries=tuple(ids), weights=weights,
                     relaxation=relaxation)


def nonself_pool(
    ctx: DonorContext, target: Participant, span: tuple[int, int]
) -> DonorPool:
    """Same-arm candidates for one interval, descending the eligibility ladder.

    Ladder: sex-exact donors clean over the span on all 7 days; then
    sex-exact donors with at least one clean day; then any sex.
    """
    def gather(require_sex: bool, min_clean: int) -> list[str]:
        out = []
        for pid in ctx.pids:
            if pid == target.participant_id:
                continue
            part = ctx.dataset.participants[pid]
            if part.arm is not target.arm:
                continue
            if require_sex and part.sex is not target.sex:
                continue
            if len(_clean_days(ctx.missing_by_day[pid], span)) >= min_clean:
                out.append(pid)
        return out

    ladder = ((True, DAYS_PER_WEEK, 0), (True, 1, 1), (False, 1, 2))
    for require_sex, min_clean, level in ladder:
        cands = gather(require_sex, min_clean)
        if cands:
            if level:
                logger.warning(
                    "donor pool for %s relaxed to level %d",
                    target.participant_id, level)
            return _weighted_pool(ctx, target, cands, "nonself", level)
    raise EmptyDonorPool(
        f"no donor candidates for {target.participant_id} "
        f"(arm {target.arm.value}, span {span})")


def whole_week_pool(ctx: DonorContext, target: Participant) -> DonorPool:
    """Fully observed same-arm participants for whole-week replacement."""
    def gather(require_sex: bool) -> list[str]:
        out = []
        for pid in ctx.pids:
            if pid == target.participant_id:
                continue
            part = ctx.dataset.participants[pid]
            if part.arm is not target.arm:
                continue
            if require_sex and part.sex is not target.sex:
                continue
            if not ctx.missing_by_day[pid].any():
                out.append(pid)
        return out

    for require_sex, level in ((True, 0), (False, 2)):
        cands = gather(require_sex)
        if cands:
            if level:
                logger.warning(
                    "whole-week pool for %s relaxed to level %d",
                    target.participant_id, level)
            return _weighted_pool(ctx, target, cands, "whole_week", level)
    raise EmptyDonorPool(
        f"no complete donors for whole-week participant {target.participant_id}")


def select_nonself_donor(
    ctx: DonorContext, target: Participant, span: tuple[int, int], rng
) -> tuple[str, DonorPool]:
    """One weighted draw from the non-self pool for this interval."""
    pool = nonself_pool(ctx, target, span)
    idx = int(rng.choice(pool.size, p=pool.weights))
    return pool.entries[idx], pool


@dataclass(frozen=True)
class ProvenanceRecord:
    """Where one imputed span's values came from, for one m."""

    participant_id: str
    timepoint: Timepoint
    m: int
    day_index: int
    epoch_start: int
    epoch_end: int
    donor_id: str
    donor_day: int
    pool_kind: str
    pool_size: int
    relaxation: int


def impute_interval(
    ctx: DonorContext,
    target: Participant,
    interval: MissingInterval,
    m_count: int,
    master_seed: int,
    pidx: int,
    ordinal: int,
) -> list[ProvenanceRecord]:
    """Pick donors for one missing interval across all m.

    With more than SELF_POOL_MIN clean own days the participant donates to
    themselves, one uniform draw per m.  Otherwise a single weighted
    non-self donor is fixed for the interval and each m draws one of that
    donor's clean same-clock days.
    """
    pid = target.participant_id
    span = (interval.epoch_start, interval.epoch_end)
    series = ctx.dataset.series[(pid, ctx.timepoint)]
    pool = self_donor_pool(series, ctx.classifications[(pid, ctx.timepoint)], interval)
    if pool.size > SELF_POOL_MIN:
        donor_id, days, out_pool = pid, pool.entries, pool
    else:
        rng = derived_rng(master_seed, RNG_NP_DONOR, pidx, ordinal)
        donor_id, out_pool = select_nonself_donor(ctx, target, span, rng)
        days = _clean_days(ctx.missing_by_day[donor_id], span)
    records = []
    for mi in range(m_count):
        rng_m = derived_rng(master_seed, RNG_NP_VALUES, pidx, ordinal, mi)
        day = days[int(rng_m.integers(len(days)))]
        records.append(ProvenanceRecord(
            participant_id=pid,
            timepoint=ctx.timepoint,
            m=mi,
            day_index=interval.day_index,
            epoch_start=interval.epoch_start,
            epoch_end=interval.epoch_end,
            donor_id=donor_id,
            donor_day=day,
            pool_kind=out_pool.kind,
            pool_size=out_pool.size,
            relaxation=out_pool.relaxation,
        ))
    return records


def impute_whole_week(
    ctx: DonorContext,
    target: Participant,
    m_count: int,
    master_seed: int,
    pidx: int,
) -> list[ProvenanceRecord]:
    """Rebuild the target's week from complete donors, one donor per m.

    Weekday slots sample the donor's weekdays with replacement, weekend
    slots the donor's weekend days; the target's own data are discarded.
    """
    pid = target.participant_id
    pool = whole_week_pool(ctx, target)
    rng = derived_rng(master_seed, RNG_NP_WEEK, pidx)
    donor_idx = rng.choice(pool.size, p=pool.weights, size=m_count)
    series = ctx.dataset.series[(pid, ctx.timepoint)]
    records = []
    for mi in range(m_count):
        donor_id = pool.entries[int(donor_idx[mi])]
        donor_series = ctx.dataset.series[(donor_id, ctx.timepoint)]
        weekdays = [d for d in range(1, DAYS_PER_WEEK + 1)
                    if not donor_series.day(d).day_of_week.is_weekend]
        weekends = [d for d in range(1, DAYS_PER_WEEK + 1)
                    if donor_series.day(d).day_of_week.is_weekend]
        rng_m = derived_rng(master_seed, RNG_NP_WEEK, pidx, mi)
        for day in range(1, DAYS_PER_WEEK + 1):
            source = weekends if series.day(day).day_of_week.is_weekend else weekdays
            donor_day = source[int(rng_m.integers(len(source)))]
            records.append(ProvenanceRecord(
                participant_id=pid,
                timepoint=ctx.timepoint,
                m=mi,
                day_index=day,
                epoch_start=0,
                epoch_end=EPOCHS_PER_DAY,
                donor_id=donor_id,
                donor_day=donor_day,
                pool_kind=pool.kind,
                pool_size=pool.size,
                relaxation=pool.relaxation,
            ))
    return records


class ImputationSet:
    """M completed datasets, stored as donor references over the input.

    Values are never duplicated: each record points at the donor's span in
    the original dataset, and completed series are materialized on demand.
    """

    def __init__(self, dataset, classifications, timepoint, m_count, records):
        self.dataset = dataset
        self.classifications = classifications
        self.timepoint = timepoint
        self.m_count = m_count
        self.records = tuple(records)
        self.pids = tuple(sorted(p for p, t in dataset.series if t is timepoint))
        self._by_pm: dict[tuple[str, int], list[ProvenanceRecord]] = {}
        for rec in self.records:
            self._by_pm.setdefault((rec.participant_id, rec.m), []).append(rec)

    def completed_series(self, pid: str, mi: int) -> EpochSeries:
        series = self.dataset.series[(pid, self.timepoint)]
        vm = [series.day(d).vm.copy() for d in range(1, DAYS_PER_WEEK + 1)]
        steps = [series.day(d).steps.copy() for d in range(1, DAYS_PER_WEEK + 1)]
        mask = [series.day(d).mask.copy() for d in range(1, DAYS_PER_WEEK + 1)]
        for rec in self._by_pm.get((pid, mi), ()):
            donor = self.dataset.series[(rec.donor_id, self.timepoint)]
            src = donor.day(rec.donor_day)
            s, e = rec.epoch_start, rec.epoch_end
            k = rec.day_index - 1
            vm[k][s:e] = src.vm[s:e]
            steps[k][s:e] = src.steps[s:e]
            mask[k][s:e] = IMPUTED
        days = [
            replace(series.day(d), vm=vm[d - 1], steps=steps[d - 1], mask=mask[d - 1])
            for d in range(1, DAYS_PER_WEEK + 1)
        ]
        return series.with_days(days)

    def completed_dataset(self, mi: int) -> StepDataset:
        """Materialize one full imputed dataset; costs a week array per series."""
        out = dict(self.dataset.series)
        for pid in self.pids:
            out[(pid, self.timepoint)] = self.completed_series(pid, mi)
        return StepDataset(participants=self.dataset.participants, series=out)

    def daily_totals(self, pid: str, mi: int) -> np.ndarray:
        """Per-day completed step totals without materializing the week."""
        series = self.dataset.series[(pid, self.timepoint)]
        miss = _missing_by_day(series, self.classifications[(pid, self.timepoint)])
        steps = series.steps_week.reshape(DAYS_PER_WEEK, EPOCHS_PER_DAY)
        totals = np.where(miss, 0, steps).sum(axis=1).astype(float)
        for rec in self._by_pm.get((pid, mi), ()):
            donor = self.dataset.series[(rec.donor_id, self.timepoint)]
            src = donor.day(rec.donor_day).steps[rec.epoch_start:rec.epoch_end]
            totals[rec.day_index - 1] += float(src.sum())
        return totals

    def weekly_means(self, mi: int) -> np.ndarray:
        """Mean daily total per participant, in sorted id order."""
        return np.array([self.daily_totals(p, mi).mean() for p in self.pids])

    def mean_daily_steps(self, pid: str, per_m: bool = False):
        """Across-m average of the participant's imputed daily mean.

        With ``per_m`` true, returns the per-m vector instead.
        """
        vals = np.array(
            [self.daily_totals(pid, mi).mean() for mi in range(self.m_count)])
        return vals if per_m else float(vals.mean())

    def provenance_frame(self) -> pd.DataFrame:
        cols = ["participant_id", "timepoint", "m", "day_index", "epoch_start",
                "epoch_end", "donor_id", "donor_day", "pool_kind", "pool_size",
                "relaxation"]
        rows = [
            [r.participant_id, r.timepoint.value, r.m + 1, r.day_index,
             r.epoch_start, r.epoch_end, r.donor_id, r.donor_day, r.pool_kind,
             r.pool_size, r.relaxation]
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=cols)


def baseline_summaries_from(
    imputation_set: ImputationSet, per_m: bool = False
) -> dict[str, dict[str, float]]:
    """Follow-up matching covariates from an imputed baseline.

    The default summarizes across m (the per-m average of daily-mean
    steps); ``per_m`` returns one summary set per m instead.
    """
    if per_m:
        return {
            mi: {
                pid: {"baseline_mean_steps":
                      float(imputation_set.daily_totals(pid, mi).mean())}
                for pid in imputation_set.pids
            }
            for mi in range(imputation_set.m_count)
        }
    return {
        pid: {"baseline_mean_steps": imputation_set.mean_daily_steps(pid)}
        for pid in imputation_set.pids
    }


def run_np_mi(
    dataset: StepDataset,
    classifications,
    timepoint: Timepoint,
    m: int = 10,
    master_seed: Optional[int] = None,
    baseline_summaries: Optional[dict[str, dict[str, float]]] = None,
) -> ImputationSet:
    """Impute every missing interval of one timepoint across M draws.

    Participant errors are collected so one bad pool reports every
    affected participant at once; any failure aborts the run.
    """
    if master_seed is None:
        raise ValueError("master_seed is required")
    if m < 1:
        raise ValueError("m must be at least 1")
    ctx = build_donor_context(dataset, classifications, timepoint,
                              baseline_summaries=baseline_summaries)
    records: list[ProvenanceRecord] = []
    failures: list[tuple[str, Exception]] = []
    for pidx, pid in enumerate(ctx.pids):
        target = dataset.participants[pid]
        cls = classifications[(pid, timepoint)]
        try:
            if cls.whole_week:
                records.extend(
                    impute_whole_week(ctx, target, m, master_seed, pidx))
            else:
                for ordinal, interval in enumerate(cls.missing_intervals):
                    records.extend(impute_interval(
                        ctx, target, interval, m, master_seed, pidx, ordinal))
        except (EmptyDonorPool, SingularCovariance) as err:
            failures.append((pid, err))
    if failures:
        detail = "; ".join(f"{pid}: {err}" for pid, err in failures)
        kind = (EmptyDonorPool
                if all(isinstance(e, EmptyDonorPool) for _, e in failures)
                else StepMIError)
        raise kind(f"{len(failures)} participant(s) unimputable: {detail}")
    return ImputationSet(dataset, classifications, timepoint, m, records)


class DonorImputer(BaseEstimator):
    """Configured front end for :func:`run_np_mi`."""

    def __init__(self, m=10, master_seed=None):
        self.m = m
        self.master_seed = master_seed

    def impute(
        self,
        dataset: StepDataset,
        classifications,
        timepoint: Timepoint,
        baseline_summaries=None,
    ) -> ImputationSet:
        return run_np_mi(
            dataset, classifications, timepoint, m=self.m,
            master_seed=self.master_seed, baseline_summaries=baseline_summaries)
