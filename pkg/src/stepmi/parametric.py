"""Model-based multiple imputation of daily step totals.

Days with missing epochs carry an interval for log(total + 1): the observed
part of the day gives the lower bound, and the upper bound is either a
day-specific cap built from the missing time ("specific") or a generic cap
("generic").  Chained interval-censored regressions across the seven day
columns then draw completed totals per imputation.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .classify import SeriesClassification
from .errors import NonConvergence
from .model import (
    DAYS_PER_WEEK,
    EPOCHS_PER_DAY,
    MISSING,
    Arm,
    EpochSeries,
    Sex,
    StepDataset,
    Timepoint,
)
from .tobit import draw_parameters, fit_interval_regression, sample_truncated_normal
from .validation import RNG_PAR, derived_rng

LOG_OFFSET = 1.0
GENERIC_LOG_CAP = 10.5
SPECIFIC_STEPS_PER_EPOCH = 5.0


class DayStatus(IntEnum):
    COMPLETE = 0
    PARTIAL = 1
    MISSING = 2


def aggregate_daily(
    series: EpochSeries, classification: SeriesClassification
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse one week to per-day (observed steps, missing epochs, status).

    An epoch counts as missing when the classifier declared it missing or
    the input mask already marked it so; observed steps sum the rest.
    """
    miss = classification.missing_mask_week() | (series.mask_week == MISSING)
    by_day = miss.reshape(DAYS_PER_WEEK, EPOCHS_PER_DAY)
    lam = by_day.sum(axis=1).astype(np.int64)
    steps = np.where(miss, 0, series.steps_week)
    y_obs = steps.reshape(DAYS_PER_WEEK, EPOCHS_PER_DAY).sum(axis=1).astype(float)
    status = np.where(
        lam == 0, DayStatus.COMPLETE,
        np.where(lam == EPOCHS_PER_DAY, DayStatus.MISSING, DayStatus.PARTIAL),
    ).astype(np.int8)
    return y_obs, lam, status


def day_bounds(y_obs, missing_epochs, status, mode: str):
    """Interval bounds for log(daily total + 1) under the given mode.

    Complete days are point rows.  Partial days are bounded below by the
    observed part; the upper bound adds ``SPECIFIC_STEPS_PER_EPOCH`` per
    missing epoch in specific mode and is ``GENERIC_LOG_CAP`` otherwise.
    Fully missing days span [log(1), cap].  The upper bound is never let
    fall below the lower.
    """
    if mode not in ("specific", "generic"):
        raise ValueError(f"mode must be 'specific' or 'generic', got {mode!r}")
    y = np.asarray(y_obs, dtype=float)
    lam = np.asarray(missing_epochs, dtype=float)
    st = np.asarray(status)
    lower = np.where(st == DayStatus.MISSING, 0.0, np.log(y + LOG_OFFSET))
    if mode == "specific":
        partial_cap = np.log(y + SPECIFIC_STEPS_PER_EPOCH * lam + LOG_OFFSET)
    else:
        partial_cap = np.full_like(y, GENERIC_LOG_CAP)
    upper = np.where(
        st == DayStatus.COMPLETE, lower,
        np.where(st == DayStatus.PARTIAL, partial_cap, GENERIC_LOG_CAP),
    )
    return lower, np.maximum(upper, lower)


@dataclass(frozen=True)
class DailyFrame:
    """Per-day aggregates for every participant at one timepoint."""

    ids: tuple[str, ...]
    arms: tuple[Arm, ...]
    timepoint: Timepoint
    y_obs: np.ndarray          # (n, 7)
    missing_epochs: np.ndarray # (n, 7)
    status: np.ndarray         # (n, 7)
    covariates: np.ndarray     # (n, k)
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        n = len(self.ids)
        for name in ("y_obs", "missing_epochs", "status"):
            if getattr(self, name).shape != (n, DAYS_PER_WEEK):
                raise ValueError(f"{name} must have shape ({n}, {DAYS_PER_WEEK})")
        if self.covariates.shape[0] != n:
            raise ValueError("covariates must have one row per participant")


def baseline_complete_day_mean(
    series: EpochSeries, classification: SeriesClassification
) -> float:
    """Mean daily total over fully observed days; NaN when there are none."""
    y, _, status = aggregate_daily(series, classification)
    ok = status == DayStatus.COMPLETE
    return float(y[ok].mean()) if ok.any() else float("nan")


def build_daily_frame(
    dataset: StepDataset,
    classifications: dict[tuple[str, Timepoint], SeriesClassification],
    timepoint: Timepoint,
    baseline_means: dict[str, float] | None = None,
) -> DailyFrame:
    """Aggregate one timepoint of a dataset into a DailyFrame.

    At follow-up a baseline mean-steps covariate is added, taken from
    ``baseline_means`` when given, else from the participant's fully
    observed baseline days, else from the recorded participant attribute.
    """
    pids = sorted(p for p, t in dataset.series if t is timepoint)
    rows_y, rows_lam, rows_st, arms, cov_rows = [], [], [], [], []
    names = ["age", "bmi", "sex_male"]
    with_baseline = timepoint is Timepoint.FOLLOWUP
    if with_baseline:
        names.append("baseline_mean_steps")
    for pid in pids:
        part = dataset.participants[pid]
        series = dataset.series[(pid, timepoint)]
        y, lam, st = aggregate_daily(series, classifications[(pid, timepoint)])
        rows_y.append(y)
        rows_lam.append(lam)
        rows_st.append(st)
        arms.append(part.arm)
        row = [part.age, part.bmi, 1.0 if part.sex is Sex.MALE else 0.0]
        if with_baseline:
            base_key = (pid, Timepoint.BASELINE)
            if baseline_means is not None and pid in baseline_means:
                bmean = baseline_means[pid]
            elif base_key in dataset.series and base_key in classifications:
                bmean = baseline_complete_day_mean(
                    dataset.series[base_key], classifications[base_key])
            elif part.baseline_mean_steps is not None:
                bmean = part.baseline_mean_steps
            else:
                bmean = float("nan")
            row.append(bmean)
        cov_rows.append(row)
    n = len(pids)
    return DailyFrame(
        ids=tuple(pids),
        arms=tuple(arms),
        timepoint=timepoint,
        y_obs=np.array(rows_y, dtype=float).reshape(n, DAYS_PER_WEEK),
        missing_epochs=np.array(rows_lam, dtype=np.int64).reshape(n, DAYS_PER_WEEK),
        status=np.array(rows_st, dtype=np.int8).reshape(n, DAYS_PER_WEEK),
        covariates=np.array(cov_rows, dtype=float).reshape(n, len(names)),
        covariate_names=tuple(names),
    )


@dataclass(frozen=True)
class ParametricImputation:
    """Completed daily totals: ``daily[m]`` is the (n, 7) table for draw m."""

    ids: tuple[str, ...]
    arms: tuple[Arm, ...]
    timepoint: Timepoint
    mode: str
    m: int
    daily: np.ndarray
    y_obs: np.ndarray
    status: np.ndarray

    def weekly_means(self, mi: int) -> np.ndarray:
        return self.daily[mi].mean(axis=1)

    def to_frame(self) -> pd.DataFrame:
        m, n, _ = self.daily.shape
        return pd.DataFrame({
            "participant_id": np.tile(np.repeat(self.ids, DAYS_PER_WEEK), m),
            "arm": np.tile(np.repeat([a.value for a in self.arms], DAYS_PER_WEEK), m),
            "timepoint": self.timepoint.value,
            "m": np.repeat(np.arange(1, m + 1), n * DAYS_PER_WEEK),
            "day": np.tile(np.arange(1, DAYS_PER_WEEK + 1), m * n),
            "steps": self.daily.reshape(-1),
        })


def _centered_covariates(cov: np.ndarray) -> np.ndarray:
    """Centre columns, mean-fill gaps, drop columns with no variation."""
    cov = np.asarray(cov, dtype=float).copy()
    keep = []
    for j in range(cov.shape[1]):
        col = cov[:, j]
        bad = ~np.isfinite(col)
        if bad.all():
            continue
        if bad.any():
            col[bad] = col[~bad].mean()
        col = col - col.mean()
        if np.ptp(col) > 1e-12:
            keep.append(col)
    if not keep:
        return np.empty((cov.shape[0], 0))
    return np.column_stack(keep)


def run_par_mi(
    frame: DailyFrame,
    mode: str = "specific",
    m: int = 10,
    master_seed: int | None = None,
    cycles: int = 10,
) -> ParametricImputation:
    """Chained-equation imputation of the frame's day columns, per arm.

    Each cycle regresses one day column on the other six plus centred
    covariates, draws regression parameters from their asymptotic
    distribution, then draws bounded log-totals for the incomplete rows.
    Rows are completed as exp(v) - 1 floored at zero; fully observed days
    keep their observed totals exactly.
    """
    if master_seed is None:
        raise ValueError("master_seed is required")
    if m < 1:
        raise ValueError("m must be at least 1")
    if cycles < 1:
        raise ValueError("cycles must be at least 1")
    lower, upper = day_bounds(frame.y_obs, frame.missing_epochs, frame.status, mode)
    v_obs = np.log(frame.y_obs + LOG_OFFSET)
    nonpoint = frame.status != DayStatus.COMPLETE
    n = len(frame.ids)
    daily = np.empty((m, n, DAYS_PER_WEEK), dtype=float)
    arm_order = list(Arm)
    for arm in arm_order:
        rows = np.flatnonzero([a is arm for a in frame.arms])
        if rows.size == 0:
            continue
        arm_i = arm_order.index(arm)
        np_sub = nonpoint[rows]
        if not np_sub.any():
            daily[:, rows, :] = frame.y_obs[rows]
            continue
        lo, hi = lower[rows], upper[rows]
        cov = _centered_covariates(frame.covariates[rows])
        init = np.where(np_sub, 0.5 * (lo + hi), v_obs[rows])
        active_days = [d for d in range(DAYS_PER_WEEK) if np_sub[:, d].any()]
        ones = np.ones(rows.size)
        # warm starts persist across chains: each fit still iterates to the
        # same gradient tolerance, successive starts are just closer
        warm: dict[int, np.ndarray] = {}
        for mi in range(m):
            v = init.copy()
            for cycle in range(cycles):
                for d in active_days:
                    others = [c for c in range(DAYS_PER_WEEK) if c != d]
                    xmat = np.column_stack([ones, v[:, others], cov])
                    try:
                        fit = fit_interval_regression(
                            xmat, lo[:, d], hi[:, d], start=warm.get(d))
                    except NonConvergence as err:
                        raise NonConvergence(
                            f"arm={arm.value} day={d + 1} m={mi + 1} "
                            f"cycle={cycle + 1}: {err}") from err
                    warm[d] = np.concatenate([fit.beta, [fit.log_sigma]])
                    rng = derived_rng(master_seed, RNG_PAR, arm_i, mi, cycle, d)
                    beta_s, sigma_s = draw_parameters(fit, rng)
                    need = np_sub[:, d]
                    mu = xmat[need] @ beta_s
                    v[need, d] = sample_truncated_normal(
                        mu, sigma_s, lo[need, d], hi[need, d], rng)
            daily[mi, rows, :] = np.where(
                np_sub,
                np.maximum(np.exp(v) - LOG_OFFSET, 0.0),
                frame.y_obs[rows])
    return ParametricImputation(
        ids=frame.ids,
        arms=frame.arms,
        timepoint=frame.timepoint,
        mode=mode,
        m=m,
        daily=daily,
        y_obs=frame.y_obs,
        status=frame.status,
    )


class ParametricImputer(BaseEstimator):
    """Configured front end for :func:`run_par_mi` on a full dataset."""

    def __init__(self, mode="specific", m=10, cycles=10, master_seed=None):
        self.mode = mode
        self.m = m
        self.cycles = cycles
        self.master_seed = master_seed

    def impute(
        self,
        dataset: StepDataset,
        classifications: dict[tuple[str, Timepoint], SeriesClassification],
        timepoint: Timepoint,
        baseline_means: dict[str, float] | None = None,
    ) -> ParametricImputation:
        frame = build_daily_frame(dataset, classifications, timepoint, baseline_means)
        return run_par_mi(
            frame, mode=self.mode, m=self.m,
            master_seed=self.master_seed, cycles=self.cycles)
