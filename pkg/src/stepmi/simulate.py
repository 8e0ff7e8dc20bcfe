"""Simulation scenarios comparing analysis methods under induced missingness.

A scenario draws bootstrap samples from a synthetic complete pool, induces
missingness by applying curated patterns (plus optional empty follow-up
weeks), and runs the configured analysis methods on the identical induced
realization.  The truth for each estimand is its complete-data value on the
full pool; bias is the mean estimate across replicates minus that value, and
its Monte Carlo error is the standard deviation of the estimates over
sqrt(replicates).  Every random draw comes from a stream derived from the
scenario master seed, so results are reproducible and independent of
worker-thread count.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from .classify import ZeroRunClassifier
from .donor import run_np_mi
from .errors import ConstantInput, StepMIError
from .generate import (
    ActivityProfile,
    MissingnessPattern,
    apply_pattern,
    bootstrap_without_replacement,
    generate_complete_dataset,
    load_pattern_library,
)
from .model import (
    Arm,
    DayRecord,
    EPOCHS_PER_DAY,
    EpochSeries,
    StepDataset,
    Timepoint,
)
from .parametric import build_daily_frame, run_par_mi
from .pooling import ols_fit, pearson_correlation, rubin_pool
from .validation import RNG_SIM, derived_rng

__all__ = [
    "METHODS",
    "estimand_values",
    "ScenarioConfig",
    "ScenarioResult",
    "scenario_1",
    "scenario_2",
    "run_scenario",
    "load_scenario_config",
]

METHODS = ("available", "complete_case", "np_mi", "par_mi_specific",
           "par_mi_generic")


@dataclass(frozen=True)
class ScenarioConfig:
    """Design of one simulation scenario."""

    name: str
    pool_per_arm: int
    sample_per_arm: int
    timepoints: int = 1
    prop_pattern: float = 0.45
    prop_whole_week: float = 0.0
    m: int = 10
    replications: int = 100
    methods: tuple[str, ...] = METHODS
    master_seed: int = 20260815
    cycles: int = 10
    min_day_weartime_min: float = 540.0
    stratify_patterns: bool = False
    profile: ActivityProfile = field(default_factory=ActivityProfile)

    def __post_init__(self):
        if not self.name:
            raise ValueError("scenario name must be non-empty")
        if self.sample_per_arm > self.pool_per_arm:
            raise ValueError("sample_per_arm cannot exceed pool_per_arm")
        if self.timepoints not in (1, 2):
            raise ValueError(f"timepoints must be 1 or 2: {self.timepoints}")
        for prop_name in ("prop_pattern", "prop_whole_week"):
            v = getattr(self, prop_name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{prop_name} must be a proportion: {v}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def target_timepoint(self) -> Timepoint:
        """The timepoint missingness is induced on and analyses target."""
        return (Timepoint.BASELINE if self.timepoints == 1
                else Timepoint.FOLLOWUP)

    def to_mapping(self) -> dict:
        out = dataclasses.asdict(self)
        out["methods"] = list(self.methods)
        out["profile"] = dataclasses.asdict(self.profile)
        return out

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ScenarioConfig":
        data = dict(mapping)
        prof = data.pop("profile", None)
        if prof is not None:
            data["profile"] = ActivityProfile.from_mapping(prof)
        if "methods" in data:
            data["methods"] = tuple(data["methods"])
        return cls(**data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_mapping(), fh, indent=1)
            fh.write("\n")


def load_scenario_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ScenarioConfig.from_mapping(json.load(fh))


def scenario_1(**overrides) -> ScenarioConfig:
    """Single-week design targeting per-arm mean daily steps."""
    base = dict(name="scenario1", pool_per_arm=150, sample_per_arm=120,
                timepoints=1, prop_pattern=0.45, prop_whole_week=0.0)
    base.update(overrides)
    return ScenarioConfig(**base)


def scenario_2(**overrides) -> ScenarioConfig:
    """Two-timepoint design targeting baseline-adjusted treatment effects."""
    base = dict(name="scenario2", pool_per_arm=100, sample_per_arm=85,
                timepoints=2, prop_pattern=0.45, prop_whole_week=0.02)
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass(frozen=True)
class ScenarioResult:
    """Aggregated scenario output plus per-replicate plot data."""

    config: ScenarioConfig
    table: pd.DataFrame
    per_replicate: pd.DataFrame
    failures: tuple[tuple[int, str, str], ...]

    def save_tables(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out_dir / f"{self.config.name}_results.csv",
            "replicates": out_dir / f"{self.config.name}_replicates.csv",
        }
        self.table.to_csv(paths["results"], index=False)
        self.per_replicate.to_csv(paths["replicates"], index=False)
        return paths


def _empty_week(series: EpochSeries) -> EpochSeries:
    zero_vm = np.zeros(EPOCHS_PER_DAY)
    zero_steps = np.zeros(EPOCHS_PER_DAY, dtype=np.int64)
    return series.with_days(
        DayRecord(d.day_index, d.day_of_week, zero_vm, zero_steps)
        for d in series.days)


def _estimand_names(timepoints: int) -> list[str]:
    names = [f"mean_{arm.value}" for arm in Arm]
    if timepoints == 2:
        names += ["coef_intercept", "coef_baseline",
                  "effect_postal", "effect_nurse"]
        names += [f"corr_{arm.value}" for arm in Arm]
    return names


def estimand_values(ids, participants, weekly_f, weekly_b, timepoints):
    """All scenario estimands for one completed (or observed) data draw.

    Returns estimand name -> (estimate, se); correlations carry no SE.
    """
    out = {}
    arms = {pid: participants[pid].arm for pid in ids}
    for arm in Arm:
        vals = np.array([weekly_f[pid] for pid in ids if arms[pid] == arm])
        se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else np.nan
        out[f"mean_{arm.value}"] = (float(vals.mean()), float(se))
    if timepoints == 2:
        yb = np.array([weekly_b[pid] for pid in ids])
        yf = np.array([weekly_f[pid] for pid in ids])
        x = np.column_stack([
            np.ones(len(ids)),
            yb,
            [1.0 if arms[pid] == Arm.POSTAL else 0.0 for pid in ids],
            [1.0 if arms[pid] == Arm.NURSE else 0.0 for pid in ids],
        ])
        fit = ols_fit(x, yf)
        for i, name in enumerate(["coef_intercept", "coef_baseline",
                                  "effect_postal", "effect_nurse"]):
            out[name] = (float(fit.coef[i]), float(fit.se[i]))
        for arm in Arm:
            sel = np.array([arms[pid] == arm for pid in ids])
            try:
                r = pearson_correlation(yb[sel], yf[sel])
            except ConstantInput:
                r = np.nan
            out[f"corr_{arm.value}"] = (float(r), np.nan)
    return out


def _pool_over_m(per_m: list[dict], timepoints: int) -> dict:
    """Rubin-pool per-estimand values across imputations.

    Correlations are design-fixed to the first imputation; everything else
    pools estimates and squared SEs.
    """
    if len(per_m) == 1:
        return per_m[0]
    out = {}
    for name in per_m[0]:
        if name.startswith("corr_"):
            out[name] = per_m[0][name]
            continue
        est = [vals[name][0] for vals in per_m]
        var = [vals[name][1] ** 2 for vals in per_m]
        pooled = rubin_pool(est, var)
        out[name] = (float(pooled.estimate), float(pooled.se))
    return out


def _observed_weekly(series: EpochSeries) -> float:
    return float(series.daily_step_totals().mean())


def _complete_case_weekly(series, classification, min_weartime):
    """Weekly mean over days with enough wear time, or None if none qualify."""
    valid = classification.weartime_min >= min_weartime
    if not valid.any():
        return None
    totals = series.daily_step_totals()
    return float(totals[valid].mean())


def _method_weekly(method, config, induced, classified, weekly_b, method_seed):
    """Per-imputation follow-up weekly means for one method.

    Returns (list over imputations of pid -> weekly mean, ids analyzed).
    Single-draw methods return a one-element list.
    """
    tp = config.target_timepoint
    ids = sorted(induced.participants)
    if method == "available":
        return [{pid: _observed_weekly(induced.series[(pid, tp)])
                 for pid in ids}], ids
    if method == "complete_case":
        kept = {}
        for pid in ids:
            wk = _complete_case_weekly(
                induced.series[(pid, tp)], classified[(pid, tp)],
                config.min_day_weartime_min)
            if wk is not None:
                kept[pid] = wk
        return [kept], sorted(kept)
    if method == "np_mi":
        imp = run_np_mi(induced, classified, tp, m=config.m,
                        master_seed=method_seed)
        per_m = []
        for mi in range(config.m):
            per_m.append({pid: float(imp.daily_totals(pid, mi).mean())
                          for pid in ids})
        return per_m, ids
    if method in ("par_mi_specific", "par_mi_generic"):
        mode = method.split("_")[-1]
        frame = build_daily_frame(induced, classified, tp)
        imp = run_par_mi(frame, mode=mode, m=config.m,
                         master_seed=method_seed, cycles=config.cycles)
        per_m = []
        for mi in range(config.m):
            weekly = imp.daily[mi].mean(axis=1)
            per_m.append(dict(zip(frame.ids, map(float, weekly))))
        return per_m, ids
    raise ValueError(f"unknown method: {method}")


def _induce(config, pool, sample, patterns, rng):
    """Apply whole-week and pattern missingness to the sampled series."""
    tp = config.target_timepoint
    n_total = len(sample)
    ordered = sorted(sample)
    n_ww = round(config.prop_whole_week * n_total)
    ww_ids: set[str] = set()
    if n_ww:
        ww_ids = set(rng.choice(ordered, size=n_ww, replace=False).tolist())
    remaining = [pid for pid in ordered if pid not in ww_ids]
    pat_ids: list[str] = []
    if config.stratify_patterns:
        for arm in Arm:
            arm_ids = [pid for pid in remaining
                       if pool.participants[pid].arm == arm]
            k = round(config.prop_pattern * config.sample_per_arm)
            k = min(k, len(arm_ids))
            pat_ids += rng.choice(arm_ids, size=k, replace=False).tolist()
    else:
        k = min(round(config.prop_pattern * n_total), len(remaining))
        pat_ids = rng.choice(remaining, size=k, replace=False).tolist()
    series = {}
    participants = {pid: pool.participants[pid] for pid in ordered}
    for pid in ordered:
        for tp_any in ([Timepoint.BASELINE, Timepoint.FOLLOWUP]
                       if config.timepoints == 2 else [Timepoint.BASELINE]):
            series[(pid, tp_any)] = pool.series[(pid, tp_any)]
    for pid in sorted(ww_ids):
        series[(pid, tp)] = _empty_week(series[(pid, tp)])
    for pid in sorted(pat_ids):
        pat = patterns[int(rng.integers(len(patterns)))]
        series[(pid, tp)] = apply_pattern(series[(pid, tp)], pat)
    return StepDataset(participants, series)


def _replicate(config, pool, by_arm, patterns, r):
    """Run one replicate; returns (method estimates, failures)."""
    rng_sample = derived_rng(config.master_seed, RNG_SIM, r, 0)
    rng_induce = derived_rng(config.master_seed, RNG_SIM, r, 1)
    sample = []
    for arm in Arm:
        sample += bootstrap_without_replacement(
            by_arm[arm], config.sample_per_arm, rng_sample)
    induced = _induce(config, pool, sample, patterns, rng_induce)
    classified = ZeroRunClassifier().fit_transform(induced)
    ids = sorted(sample)
    weekly_b = None
    if config.timepoints == 2:
        weekly_b = {pid: _observed_weekly(induced.series[(pid, Timepoint.BASELINE)])
                    for pid in ids}
    # one imputation seed per replicate: overlapping bootstrap samples must
    # not reuse the same donor or parameter draws across replicates
    method_seed = int(derived_rng(config.master_seed, RNG_SIM, r, 2)
                      .integers(2 ** 63))
    estimates = {}
    failures = []
    for method in config.methods:
        try:
            per_m, used = _method_weekly(method, config, induced, classified,
                                         weekly_b, method_seed)
            values = [estimand_values(used, pool.participants, wk, weekly_b,
                                       config.timepoints)
                      for wk in per_m]
            estimates[method] = _pool_over_m(values, config.timepoints)
        except StepMIError as err:
            failures.append((r, method, f"{type(err).__name__}: {err}"))
    return estimates, failures


def _pool_truth(config, pool) -> dict[str, float]:
    """Complete-data estimand values over the entire pool."""
    ids = sorted(pool.participants)
    tp = config.target_timepoint
    weekly_f = {pid: _observed_weekly(pool.series[(pid, tp)]) for pid in ids}
    weekly_b = None
    if config.timepoints == 2:
        weekly_b = {pid: _observed_weekly(
            pool.series[(pid, Timepoint.BASELINE)]) for pid in ids}
    values = estimand_values(ids, pool.participants, weekly_f, weekly_b,
                              config.timepoints)
    return {name: est for name, (est, _) in values.items()}


def run_scenario(
    config: ScenarioConfig,
    patterns: Optional[Sequence[MissingnessPattern]] = None,
    threads: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> ScenarioResult:
    """Run all replicates of a scenario and aggregate the results.

    ``threads`` parallelizes replicates; every replicate draws from its own
    derived random streams, so output is identical for any thread count.
    """
    if threads < 1:
        raise ValueError("threads must be positive")
    patterns = list(patterns) if patterns is not None else load_pattern_library()
    if not patterns:
        raise ValueError("pattern library is empty")
    pool, _ = generate_complete_dataset(
        config.profile, config.pool_per_arm, config.timepoints,
        config.master_seed)
    by_arm = {arm: [p.participant_id for p in
                    sorted(pool.participants.values(),
                           key=lambda p: p.participant_id)
                    if p.arm == arm]
              for arm in Arm}

    def job(r):
        out = _replicate(config, pool, by_arm, patterns, r)
        if progress is not None:
            progress(r)
        return out

    reps = range(config.replications)
    if threads == 1:
        outcomes = [job(r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool_exec:
            outcomes = list(pool_exec.map(job, reps))

    names = _estimand_names(config.timepoints)
    truth = _pool_truth(config, pool)
    failures = []
    rows = []
    for r, (estimates, fails) in enumerate(outcomes):
        failures.extend(fails)
        for method in config.methods:
            if method not in estimates:
                continue
            for name in names:
                est, se = estimates[method][name]
                rows.append((r, method, name, est, se))
    per_replicate = pd.DataFrame(
        rows, columns=["replicate", "method", "estimand", "estimate", "se"])

    failed_by_method = {m: 0 for m in config.methods}
    for _, method, _ in failures:
        failed_by_method[method] += 1
    agg_rows = []
    for method in config.methods:
        sub_m = per_replicate[per_replicate["method"] == method]
        for name in names:
            sub = sub_m[sub_m["estimand"] == name]
            est = sub["estimate"].to_numpy(dtype=float)
            ok = np.isfinite(est)
            n_used = int(ok.sum())
            agg_rows.append({
                "scenario": config.name,
                "method": method,
                "estimand": name,
                "n_used": n_used,
                "n_failed": failed_by_method[method],
                "mean_estimate": est[ok].mean() if n_used else np.nan,
                "truth": truth[name],
                "bias": est[ok].mean() - truth[name] if n_used else np.nan,
                "bias_mc_error": (est[ok].std(ddof=1) / np.sqrt(n_used)
                                  if n_used > 1 else np.nan),
                "empirical_sd": est[ok].std(ddof=1) if n_used > 1 else np.nan,
                "mean_se": (np.nanmean(sub["se"].to_numpy(dtype=float)[ok])
                            if n_used and not name.startswith("corr_")
                            else np.nan),
            })
    table = pd.DataFrame(agg_rows)
    return ScenarioResult(config, table, per_replicate, tuple(failures))
