"""Command-line pipelines: classify, impute, analyze, pool, simulate, generate.

Every subcommand writes its outputs atomically: files are staged in a
temporary directory inside the output directory and renamed into place only
when the whole command succeeds.  On failure the staging area is removed and
an ``error.json`` report is written instead.  Each successful run records
its full effective configuration (defaults included) as
``effective_config.json``; execution-only settings such as the output
directory and worker-thread count are excluded so reruns with identical
inputs and seed produce byte-identical bundles.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import shutil
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .classify import ZeroRunClassifier, census
from .dataio import (
    atomic_write,
    ingest,
    read_epoch_file,
    read_participant_file,
    write_dataset,
    write_epoch_file,
)
from .donor import baseline_summaries_from, run_np_mi
from .errors import SchemaError, StepMIError
from .generate import (
    ActivityProfile,
    generate_complete_dataset,
    load_pattern_library,
)
from .model import Arm, DAYS_PER_WEEK, Timepoint, epoch_to_clock
from .parametric import DayStatus, build_daily_frame, run_par_mi
from .pooling import rubin_pool
from .simulate import estimand_values, load_scenario_config, run_scenario
from .validation import RNG_PIPELINE, derived_rng

__all__ = ["main"]

_CENSUS_WEARTIME_MIN = 540.0


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, payload) -> None:
    with atomic_write(path) as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path, frame: pd.DataFrame) -> None:
    with atomic_write(path) as fh:
        frame.to_csv(fh, index=False, lineterminator="\n")


def _timepoint_seed(seed: int, timepoint: Timepoint) -> int:
    """A distinct imputation seed per timepoint under one pipeline seed."""
    t_i = list(Timepoint).index(timepoint)
    return int(derived_rng(seed, RNG_PIPELINE, t_i).integers(2 ** 63))


def _classifier_from_config(config_path):
    overrides = _read_json(config_path) if config_path else {}
    if not isinstance(overrides, dict):
        raise SchemaError("classifier config must be a JSON object")
    try:
        clf = ZeroRunClassifier(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in overrides.items()})
        clf.config()
    except TypeError as exc:
        raise SchemaError(f"unknown classifier option: {exc}") from None
    return clf


def _effective(command: str, **settings) -> dict:
    return {"command": command, **settings}


# ---------------------------------------------------------------- generate

def _truth_payload(truth) -> dict:
    arm_means = {}
    for (arm, tp), value in truth.arm_means.items():
        arm_means.setdefault(arm.value, {})[tp.value] = value
    return {
        "arm_means": arm_means,
        "model_coef": (None if truth.model_coef is None
                       else [float(c) for c in truth.model_coef]),
        "arm_correlations": (
            None if truth.arm_correlations is None
            else {arm.value: float(r)
                  for arm, r in truth.arm_correlations.items()}),
    }


def _cmd_generate(args, stage: Path) -> None:
    overrides = _read_json(args.config) if args.config else {}
    profile = ActivityProfile.from_mapping(overrides)
    dataset, truth = generate_complete_dataset(
        profile, args.n_per_arm, args.timepoints, args.seed)
    write_dataset(dataset, stage / "epochs.csv", stage / "participants.csv",
                  include_mask=False)
    _write_json(stage / "truth.json", _truth_payload(truth))
    _write_json(stage / "effective_config.json", _effective(
        "generate", seed=args.seed, n_per_arm=args.n_per_arm,
        timepoints=args.timepoints, profile=dataclasses.asdict(profile)))


# ---------------------------------------------------------------- classify

def _classification_frames(results):
    order = {tp: i for i, tp in enumerate(Timepoint)}
    keys = sorted(results, key=lambda k: (k[0], order[k[1]]))
    periods, intervals, windows, summary = [], [], [], []
    for pid, tp in keys:
        res = results[(pid, tp)]
        for p in res.periods:
            periods.append({
                "participant_id": pid, "timepoint": tp.value,
                "start": p.start, "end": p.end,
                "start_day": p.start_day, "start_epoch": p.start_epoch,
                "end_day": p.end_day, "end_epoch": p.end_epoch,
                "class": p.period_class.value,
                "boundary_spike": p.boundary_spike,
                "duration_hours": p.duration_hours,
            })
        for iv in res.missing_intervals:
            intervals.append({
                "participant_id": pid, "timepoint": tp.value,
                "day": iv.day_index, "epoch_start": iv.epoch_start,
                "epoch_end": iv.epoch_end, "source": iv.source.value,
            })
        for scope, window in sorted(res.windows.items(),
                                    key=lambda kv: kv[0].value):
            windows.append({
                "participant_id": pid, "timepoint": tp.value,
                "scope": scope.value,
                "bed_epoch": window.bed_epoch,
                "wake_epoch": window.wake_epoch,
                "bed_clock": epoch_to_clock(window.bed_epoch),
                "wake_clock": epoch_to_clock(window.wake_epoch),
                "source": res.window_sources.get(scope, ""),
            })
        if res.whole_week:
            category = "whole_week"
        elif res.has_nonwear and res.has_sleep_extra:
            category = "nonwear_and_sleep_extra"
        elif res.has_nonwear:
            category = "nonwear_only"
        elif res.has_sleep_extra:
            category = "sleep_extra_only"
        else:
            category = "completely_observed"
        summary.append({
            "participant_id": pid, "timepoint": tp.value,
            "category": category,
            "whole_week": res.whole_week,
            "whole_week_reason": res.whole_week_reason or "",
            "n_missing_intervals": len(res.missing_intervals),
            "days_weartime_below_540": int(
                np.sum(res.weartime_min < _CENSUS_WEARTIME_MIN)),
        })
    return (
        pd.DataFrame(periods, columns=[
            "participant_id", "timepoint", "start", "end", "start_day",
            "start_epoch", "end_day", "end_epoch", "class",
            "boundary_spike", "duration_hours"]),
        pd.DataFrame(intervals, columns=[
            "participant_id", "timepoint", "day", "epoch_start",
            "epoch_end", "source"]),
        pd.DataFrame(windows, columns=[
            "participant_id", "timepoint", "scope", "bed_epoch",
            "wake_epoch", "bed_clock", "wake_clock", "source"]),
        pd.DataFrame(summary, columns=[
            "participant_id", "timepoint", "category", "whole_week",
            "whole_week_reason", "n_missing_intervals",
            "days_weartime_below_540"]),
    )


def _cmd_classify(args, stage: Path) -> None:
    clf = _classifier_from_config(args.config)
    dataset = ingest(args.epochs, args.participants)
    results = clf.fit_transform(dataset)
    periods, intervals, windows, summary = _classification_frames(results)
    _write_csv(stage / "periods.csv", periods)
    _write_csv(stage / "intervals.csv", intervals)
    _write_csv(stage / "windows.csv", windows)
    _write_csv(stage / "summary.csv", summary)
    census_rows = []
    for tp in Timepoint:
        scoped = {k: v for k, v in results.items() if k[1] is tp}
        if not scoped:
            continue
        for section, label, count, percent in census(
                scoped, day_weartime_min=_CENSUS_WEARTIME_MIN):
            census_rows.append({
                "timepoint": tp.value, "section": section, "label": label,
                "count": count, "percent": percent,
            })
    _write_csv(stage / "census.csv", pd.DataFrame(census_rows, columns=[
        "timepoint", "section", "label", "count", "percent"]))
    _write_json(stage / "effective_config.json", _effective(
        "classify", epochs=str(args.epochs),
        participants=str(args.participants),
        classifier=dataclasses.asdict(clf.config()),
        census_day_weartime_min=_CENSUS_WEARTIME_MIN))


# ----------------------------------------------------------------- impute

def _dataset_timepoints(dataset) -> list[Timepoint]:
    present = {tp for _, tp in dataset.series}
    return [tp for tp in Timepoint if tp in present]


def _cmd_impute_np(args, stage: Path) -> None:
    clf = _classifier_from_config(args.config)
    dataset = ingest(args.epochs, args.participants)
    results = clf.fit_transform(dataset)
    summaries = None
    for tp in _dataset_timepoints(dataset):
        imp = run_np_mi(dataset, results, tp, m=args.m,
                        master_seed=_timepoint_seed(args.seed, tp),
                        baseline_summaries=summaries)
        for mi in range(args.m):
            write_epoch_file(
                (imp.completed_series(pid, mi) for pid in imp.pids),
                stage / f"completed_{tp.value}_m{mi + 1:02d}.csv")
        _write_csv(stage / f"provenance_{tp.value}.csv",
                   imp.provenance_frame())
        if tp is Timepoint.BASELINE:
            summaries = baseline_summaries_from(imp)
    _write_json(stage / "effective_config.json", _effective(
        "impute-np", epochs=str(args.epochs),
        participants=str(args.participants), seed=args.seed, m=args.m,
        classifier=dataclasses.asdict(clf.config())))


def _daily_frames(imp) -> list[pd.DataFrame]:
    frames = []
    n = len(imp.ids)
    status_label = np.array([s.name.lower() for s in DayStatus])
    for mi in range(imp.m):
        frames.append(pd.DataFrame({
            "participant_id": np.repeat(imp.ids, DAYS_PER_WEEK),
            "timepoint": imp.timepoint.value,
            "day": np.tile(np.arange(1, DAYS_PER_WEEK + 1), n),
            "steps": imp.daily[mi].reshape(-1),
            "day_status": status_label[imp.status.reshape(-1)],
        }))
    return frames


def _cmd_impute_par(args, stage: Path) -> None:
    clf = _classifier_from_config(args.config)
    dataset = ingest(args.epochs, args.participants)
    results = clf.fit_transform(dataset)
    baseline_means = None
    for tp in _dataset_timepoints(dataset):
        frame = build_daily_frame(dataset, results, tp,
                                  baseline_means=baseline_means)
        imp = run_par_mi(frame, mode=args.mode, m=args.m,
                         master_seed=_timepoint_seed(args.seed, tp),
                         cycles=args.cycles)
        for mi, daily in enumerate(_daily_frames(imp)):
            _write_csv(stage / f"daily_{tp.value}_m{mi + 1:02d}.csv", daily)
        if tp is Timepoint.BASELINE:
            weekly = imp.daily.mean(axis=2).mean(axis=0)
            baseline_means = dict(zip(imp.ids, map(float, weekly)))
    _write_json(stage / "effective_config.json", _effective(
        "impute-par", epochs=str(args.epochs),
        participants=str(args.participants), seed=args.seed, m=args.m,
        mode=args.mode, cycles=args.cycles,
        classifier=dataclasses.asdict(clf.config())))


# ---------------------------------------------------------------- analyze

_COMPLETED_NAME = re.compile(
    r"^(completed|daily)_(baseline|followup)_m(\d+)\.csv$")


def _discover_completed(completed_dir: Path):
    """Map (timepoint, m) -> (kind, path) for every completed table."""
    found = {}
    kinds = set()
    for path in sorted(completed_dir.iterdir()):
        match = _COMPLETED_NAME.match(path.name)
        if not match:
            continue
        kind, tp_label, m_label = match.groups()
        kinds.add(kind)
        found[(Timepoint(tp_label), int(m_label))] = (kind, path)
    if not found:
        raise SchemaError(
            f"no completed_*_m*.csv or daily_*_m*.csv files in "
            f"{completed_dir}")
    if len(kinds) > 1:
        raise SchemaError(
            "completed directory mixes epoch-level and daily tables")
    ms = sorted({m for _, m in found})
    tps = [tp for tp in Timepoint if any(k[0] is tp for k in found)]
    if ms != list(range(1, len(ms) + 1)):
        raise SchemaError(f"imputation numbers are not contiguous: {ms}")
    for tp in tps:
        have = sorted(m for t, m in found if t is tp)
        if have != ms:
            raise SchemaError(
                f"{tp.value} tables do not cover m=1..{ms[-1]} exactly")
    return found, tps, ms


def _weekly_means_for(kind: str, path: Path, participants) -> dict[str, float]:
    """Participant weekly mean daily steps from one completed table."""
    if kind == "completed":
        series = read_epoch_file(path, participants)
        return {pid: float(s.daily_step_totals().mean())
                for (pid, _), s in series.items()}
    table = pd.read_csv(path)
    needed = {"participant_id", "day", "steps"}
    if not needed <= set(table.columns):
        raise SchemaError(f"{path} is missing columns "
                          f"{sorted(needed - set(table.columns))}")
    grouped = table.groupby("participant_id")["steps"]
    counts = grouped.count()
    short = counts[counts != DAYS_PER_WEEK]
    if len(short):
        raise SchemaError(
            f"{path}: participant {short.index[0]!r} has "
            f"{int(short.iloc[0])} day rows, expected {DAYS_PER_WEEK}")
    unknown = set(counts.index) - set(participants)
    if unknown:
        raise SchemaError(f"{path}: unknown participant "
                          f"{sorted(unknown)[0]!r}")
    return {pid: float(v) for pid, v in grouped.mean().items()}


def _single_arm_values(ids, weekly_f, weekly_b, arm: Arm) -> dict:
    """Mean (and change-score correlation) within one trial arm."""
    vals = np.array([weekly_f[pid] for pid in ids])
    se = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else np.nan
    out = {f"mean_{arm.value}": (float(vals.mean()), float(se))}
    if weekly_b is not None:
        yb = np.array([weekly_b[pid] for pid in ids])
        with np.errstate(invalid="ignore"):
            r = np.corrcoef(yb, vals)[0, 1] if len(ids) > 1 else np.nan
        out[f"corr_{arm.value}"] = (float(r), np.nan)
    return out


def _cmd_analyze(args, stage: Path) -> None:
    participants = read_participant_file(args.participants)
    found, tps, ms = _discover_completed(Path(args.completed_dir))
    scope_arm = None if args.arm_scope == "all" else Arm(args.arm_scope)
    if scope_arm is not None:
        scoped = {pid: p for pid, p in participants.items()
                  if p.arm is scope_arm}
        if not scoped:
            raise SchemaError(f"no participants in arm {scope_arm.value!r}")
    else:
        scoped = participants
    target = tps[-1]
    rows = []
    for m in ms:
        kind, path = found[(target, m)]
        weekly_f = {pid: v
                    for pid, v in _weekly_means_for(
                        kind, path, participants).items()
                    if pid in scoped}
        weekly_b = None
        if len(tps) == 2:
            kind_b, path_b = found[(Timepoint.BASELINE, m)]
            weekly_b = _weekly_means_for(kind_b, path_b, participants)
        ids = sorted(weekly_f)
        if scope_arm is None:
            values = estimand_values(ids, scoped, weekly_f, weekly_b,
                                     len(tps))
        else:
            # treatment-effect contrasts need all arms, so a scoped run
            # reports only the within-arm summaries
            values = _single_arm_values(ids, weekly_f, weekly_b, scope_arm)
        for name, (est, se) in values.items():
            rows.append({"m": m, "estimand": name, "estimate": est,
                         "se": se, "n": len(ids)})
    _write_csv(stage / "fits.csv", pd.DataFrame(rows))
    _write_json(stage / "effective_config.json", _effective(
        "analyze", completed_dir=str(args.completed_dir),
        participants=str(args.participants), arm_scope=args.arm_scope))


# ------------------------------------------------------------------- pool

def _cmd_pool(args, stage: Path) -> None:
    fits = pd.read_csv(args.fits)
    needed = {"m", "estimand", "estimate", "se"}
    if not needed <= set(fits.columns):
        raise SchemaError(f"fits file is missing columns "
                          f"{sorted(needed - set(fits.columns))}")
    rows = []
    for name, sub in fits.groupby("estimand", sort=True):
        sub = sub.sort_values("m")
        est = sub["estimate"].to_numpy(dtype=float)
        se = sub["se"].to_numpy(dtype=float)
        if np.isnan(se).all():
            # SE-free estimands (correlations) are reported from the first
            # imputation rather than pooled
            rows.append({"estimand": name, "m": len(est),
                         "estimate": est[0], "se": np.nan,
                         "within": np.nan, "between": np.nan,
                         "total_variance": np.nan, "df": np.nan})
            continue
        pooled = rubin_pool(est, se ** 2)
        rows.append({"estimand": name, "m": pooled.m,
                     "estimate": float(pooled.estimate),
                     "se": float(pooled.se),
                     "within": float(pooled.within),
                     "between": float(pooled.between),
                     "total_variance": float(pooled.total),
                     "df": float(pooled.df)})
    _write_csv(stage / "pooled.csv", pd.DataFrame(rows))
    _write_json(stage / "effective_config.json", _effective(
        "pool", fits=str(args.fits)))


# --------------------------------------------------------------- simulate

def _cmd_simulate(args, stage: Path) -> None:
    config = load_scenario_config(args.scenario)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    patterns = load_pattern_library(args.patterns) if args.patterns else None
    result = run_scenario(config, patterns=patterns, threads=args.threads)
    _write_csv(stage / f"{config.name}_results.csv", result.table)
    _write_csv(stage / f"{config.name}_replicates.csv",
               result.per_replicate)
    failures = pd.DataFrame(result.failures,
                            columns=["replicate", "method", "error"])
    _write_csv(stage / f"{config.name}_failures.csv", failures)
    _write_json(stage / "effective_config.json", _effective(
        "simulate", scenario=config.to_mapping(),
        patterns=str(args.patterns) if args.patterns else None))


# ------------------------------------------------------------------ wiring

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepmi",
        description=("Epoch-level step-count missingness pipelines: "
                     "classification, donor-based and bounded parametric "
                     "multiple imputation, pooling, and simulation."))
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, epochs=True):
        if epochs:
            p.add_argument("--epochs", required=True,
                           help="epoch-level CSV input")
            p.add_argument("--participants", required=True,
                           help="participant attribute CSV")
        p.add_argument("--out-dir", required=True,
                       help="output directory for this run's bundle")

    p = sub.add_parser("generate", help="create a synthetic complete cohort")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-per-arm", type=int, required=True)
    p.add_argument("--timepoints", type=int, choices=(1, 2), default=1)
    p.add_argument("--config", help="JSON file of generation profile fields")
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("classify",
                       help="classify zero-count periods and derive "
                            "missing intervals")
    add_common(p)
    p.add_argument("--config", help="JSON file of classifier settings")
    p.set_defaults(handler=_cmd_classify)

    p = sub.add_parser("impute-np",
                       help="donor-based multiple imputation at the "
                            "epoch level")
    add_common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--config", help="JSON file of classifier settings")
    p.set_defaults(handler=_cmd_impute_np)

    p = sub.add_parser("impute-par",
                       help="bounded log-scale multiple imputation of "
                            "daily totals")
    add_common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--mode", choices=("specific", "generic"),
                   default="specific")
    p.add_argument("--cycles", type=int, default=10)
    p.add_argument("--config", help="JSON file of classifier settings")
    p.set_defaults(handler=_cmd_impute_par)

    p = sub.add_parser("analyze",
                       help="fit per-imputation models on completed tables")
    p.add_argument("--completed-dir", required=True,
                   help="directory holding completed_* or daily_* tables")
    p.add_argument("--participants", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--arm-scope", default="all",
                   choices=("all",) + tuple(a.value for a in Arm))
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("pool", help="combine per-imputation fits")
    p.add_argument("--fits", required=True, help="fits.csv from analyze")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_pool)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--scenario", required=True,
                   help="scenario configuration JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int,
                   help="override the scenario master seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--patterns", help="alternative pattern library JSON")
    p.set_defaults(handler=_cmd_simulate)
    return parser


def _error_payload(exc: Exception) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    violations = getattr(exc, "violations", None)
    if violations:
        payload["violations"] = list(violations)
    return payload


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = out_dir / f".stage-{os.getpid()}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir()
    try:
        args.handler(args, stage)
    except (StepMIError, OSError, ValueError, json.JSONDecodeError) as exc:
        shutil.rmtree(stage, ignore_errors=True)
        payload = _error_payload(exc)
        _write_json(out_dir / "error.json", payload)
        print(json.dumps(payload), file=sys.stderr)
        return 1
    for item in sorted(stage.iterdir()):
        item.replace(out_dir / item.name)
    stage.rmdir()
    (out_dir / "error.json").unlink(missing_ok=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
