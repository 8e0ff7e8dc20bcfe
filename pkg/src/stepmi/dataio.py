"""Delimited-text ingestion and serialization for epoch datasets.

Epoch files carry one row per 5-second epoch: participant_id, timepoint,
day (1-7), dow (Mon..Sun), epoch (0-17279), vm, steps, and optionally a
mask column (observed|missing|imputed).  Every (participant, timepoint,
day) must contribute exactly 17,280 rows, and all rows of one participant
and timepoint must be contiguous so ingestion can stream with memory
bounded by a single participant-week.  Validation collects every violation
it can attribute to a line before raising.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from .errors import CompletenessError, CrossRefError, SchemaError
from .model import (
    Arm,
    DAYS_PER_WEEK,
    DayOfWeek,
    DayRecord,
    EPOCHS_PER_DAY,
    EpochSeries,
    Participant,
    Sex,
    StepDataset,
    Timepoint,
)

__all__ = [
    "EPOCH_COLUMNS",
    "MASK_LABELS",
    "PARTICIPANT_COLUMNS",
    "PARTICIPANT_OPTIONAL",
    "atomic_write",
    "ingest",
    "read_epoch_file",
    "read_participant_file",
    "validate_files",
    "write_dataset",
    "write_epoch_file",
    "write_participant_file",
]

EPOCH_COLUMNS = ("participant_id", "timepoint", "day", "dow", "epoch",
                 "vm", "steps")
MASK_LABELS = ("observed", "missing", "imputed")
PARTICIPANT_COLUMNS = ("participant_id", "arm", "sex", "age", "bmi")
PARTICIPANT_OPTIONAL = ("practice", "baseline_mean_steps",
                        "baseline_mean_weartime")

DEFAULT_CHUNK_ROWS = 250_000
MAX_REPORTED_VIOLATIONS = 50

_TP_BY_LABEL = {tp.value: tp for tp in Timepoint}
_ARM_BY_LABEL = {arm.value: arm for arm in Arm}
_SEX_BY_LABEL = {sex.value: sex for sex in Sex}
_DOW_CODE = {dow.label: int(dow) for dow in DayOfWeek}
_MASK_CODE = {label: code for code, label in enumerate(MASK_LABELS)}


@contextmanager
def atomic_write(path):
    """Write to a sibling temp file, then rename into place on success."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


_ERROR_BY_KIND = {
    "schema": SchemaError,
    "completeness": CompletenessError,
    "crossref": CrossRefError,
}


class _Violations:
    """Ordered collection of validation failures, capped for readability."""

    def __init__(self, limit: int = MAX_REPORTED_VIOLATIONS):
        self.items: list[tuple[str, Optional[int], str]] = []
        self.dropped = 0
        self.limit = limit

    def add(self, kind: str, line: Optional[int], message: str) -> None:
        if len(self.items) < self.limit:
            self.items.append((kind, line, message))
        else:
            self.dropped += 1

    def messages(self) -> list[str]:
        out = [f"line {line}: {msg}" if line is not None else msg
               for _, line, msg in self.items]
        if self.dropped:
            out.append(f"... and {self.dropped} more violations")
        return out

    def raise_if_any(self) -> None:
        if not self.items:
            return
        # structural problems make derived completeness findings suspect,
        # so schema errors outrank the rest when kinds are mixed
        rank = {"schema": 0, "crossref": 1, "completeness": 2}
        kind = min((item[0] for item in self.items), key=rank.__getitem__)
        err = _ERROR_BY_KIND[kind]("\n".join(self.messages()))
        err.violations = tuple(self.messages())
        raise err


def _check_columns(found, required, optional, what, violations):
    missing = [c for c in required if c not in found]
    unknown = [c for c in found if c not in required and c not in optional]
    for col in missing:
        violations.add("schema", 1, f"{what} is missing column {col!r}")
    for col in unknown:
        violations.add("schema", 1, f"{what} has unknown column {col!r}")
    if missing or unknown:
        violations.raise_if_any()


def _numeric(raw: pd.Series) -> np.ndarray:
    return pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)


def read_participant_file(path) -> dict[str, Participant]:
    """Parse and fully validate a participant attribute file."""
    violations = _Violations()
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise SchemaError("participant file is empty") from None
    _check_columns(table.columns, PARTICIPANT_COLUMNS, PARTICIPANT_OPTIONAL,
                   "participant file", violations)
    participants: dict[str, Participant] = {}
    for idx, row in table.iterrows():
        line = idx + 2
        pid = row["participant_id"]
        if not pid:
            violations.add("schema", line, "empty participant_id")
            continue
        if pid in participants:
            violations.add("schema", line, f"duplicate participant_id {pid!r}")
            continue
        arm = _ARM_BY_LABEL.get(row["arm"])
        if arm is None:
            violations.add("schema", line, f"unknown arm {row['arm']!r}")
            continue
        sex = _SEX_BY_LABEL.get(row["sex"])
        if sex is None:
            violations.add("schema", line, f"unknown sex {row['sex']!r}")
            continue
        optional = {}
        for name in ("baseline_mean_steps", "baseline_mean_weartime"):
            if name in table.columns and row[name] != "":
                optional[name] = float(pd.to_numeric(row[name],
                                                     errors="coerce"))
        practice = row.get("practice", "") or None
        try:
            participants[pid] = Participant(
                participant_id=pid, arm=arm, sex=sex,
                age=float(pd.to_numeric(row["age"], errors="coerce")),
                bmi=float(pd.to_numeric(row["bmi"], errors="coerce")),
                practice=practice, **optional)
        except ValueError as exc:
            violations.add("schema", line, str(exc))
    if not participants and not violations.items:
        violations.add("completeness", None, "participant file has no rows")
    violations.raise_if_any()
    return participants


class _GroupBuffer:
    """Accumulates one participant-timepoint's rows across chunks."""

    def __init__(self, pid: str, tp_label: str, first_line: int):
        self.pid = pid
        self.tp_label = tp_label
        self.first_line = first_line
        self.bad = False
        self.day: list[np.ndarray] = []
        self.epoch: list[np.ndarray] = []
        self.dow: list[np.ndarray] = []
        self.vm: list[np.ndarray] = []
        self.steps: list[np.ndarray] = []
        self.mask: list[np.ndarray] = []
        self.line: list[np.ndarray] = []


def _flush_group(group: _GroupBuffer, series: dict, violations: _Violations):
    if group.bad:
        return
    tag = f"participant {group.pid!r} {group.tp_label}"
    day = np.concatenate(group.day).astype(np.int64)
    epoch = np.concatenate(group.epoch).astype(np.int64)
    dow = np.concatenate(group.dow).astype(np.int64)
    vm = np.concatenate(group.vm)
    steps = np.concatenate(group.steps)
    mask = np.concatenate(group.mask) if group.mask else None
    lines = np.concatenate(group.line)
    days = []
    complete = True
    for d in range(1, DAYS_PER_WEEK + 1):
        sel = day == d
        count = int(sel.sum())
        if count != EPOCHS_PER_DAY:
            violations.add(
                "completeness", None,
                f"{tag} day {d} has {count} rows, expected {EPOCHS_PER_DAY}")
            complete = False
            continue
        order = np.argsort(epoch[sel], kind="stable")
        ep = epoch[sel][order]
        dup = np.nonzero(ep[1:] == ep[:-1])[0]
        if dup.size:
            at = lines[sel][order][dup[0] + 1]
            violations.add("schema", int(at),
                           f"{tag} day {d} repeats epoch {int(ep[dup[0]])}")
            complete = False
            continue
        dows = np.unique(dow[sel])
        if dows.size != 1:
            violations.add("schema", int(lines[sel][0]),
                           f"{tag} day {d} mixes day-of-week labels")
            complete = False
            continue
        try:
            days.append(DayRecord(
                day_index=d,
                day_of_week=DayOfWeek(int(dows[0])),
                vm=vm[sel][order],
                steps=steps[sel][order],
                mask=mask[sel][order] if mask is not None else None,
            ))
        except ValueError as exc:
            violations.add("schema", int(lines[sel][0]), f"{tag} day {d}: {exc}")
            complete = False
    if not complete:
        return
    try:
        built = EpochSeries(group.pid, _TP_BY_LABEL[group.tp_label],
                            tuple(days))
    except ValueError as exc:
        violations.add("schema", group.first_line, f"{tag}: {exc}")
        return
    series[(group.pid, built.timepoint)] = built


def _validate_chunk(chunk: pd.DataFrame, start_line: int, has_mask: bool,
                    violations: _Violations):
    """Vectorized row validation; returns parsed columns plus a keep mask."""
    n = len(chunk)
    lines = np.arange(start_line, start_line + n, dtype=np.int64)
    keep = np.ones(n, dtype=bool)

    def flag(bad: np.ndarray, message):
        nonlocal keep
        for i in np.nonzero(bad)[0]:
            violations.add("schema", int(lines[i]), message(i))
        keep &= ~bad

    pid = chunk["participant_id"].to_numpy(dtype=object)
    flag(pid == "", lambda i: "empty participant_id")

    tp_raw = chunk["timepoint"].to_numpy(dtype=object)
    bad = ~np.isin(tp_raw, list(_TP_BY_LABEL))
    flag(bad, lambda i: f"unknown timepoint {tp_raw[i]!r}")

    day = _numeric(chunk["day"])
    bad = ~np.isfinite(day) | (day != np.floor(day)) | (day < 1) | (day > 7)
    flag(bad, lambda i: f"day out of range: {chunk['day'].iloc[i]!r}")

    dow_raw = chunk["dow"].to_numpy(dtype=object)
    bad = ~np.isin(dow_raw, list(_DOW_CODE))
    flag(bad, lambda i: f"unknown dow label {dow_raw[i]!r}")

    epoch = _numeric(chunk["epoch"])
    bad = (~np.isfinite(epoch) | (epoch != np.floor(epoch))
           | (epoch < 0) | (epoch >= EPOCHS_PER_DAY))
    flag(bad, lambda i: f"epoch out of range: {chunk['epoch'].iloc[i]!r}")

    vm = _numeric(chunk["vm"])
    bad = ~np.isfinite(vm) | (vm < 0)
    flag(bad, lambda i: f"vm must be a non-negative number: "
                        f"{chunk['vm'].iloc[i]!r}")

    steps = _numeric(chunk["steps"])
    bad = (~np.isfinite(steps) | (steps != np.floor(steps)) | (steps < 0))
    flag(bad, lambda i: f"steps must be a non-negative integer: "
                        f"{chunk['steps'].iloc[i]!r}")

    mask_codes = None
    if has_mask:
        mask_raw = chunk["mask"].to_numpy(dtype=object)
        bad = ~np.isin(mask_raw, MASK_LABELS)
        flag(bad, lambda i: f"unknown mask label {mask_raw[i]!r}")
        mask_codes = np.array(
            [_MASK_CODE.get(v, 0) for v in mask_raw], dtype=np.uint8)

    dow_codes = np.array([_DOW_CODE.get(v, 0) for v in dow_raw],
                         dtype=np.int64)
    parsed = {
        "pid": pid,
        "tp": tp_raw,
        "day": day.astype(np.int64, copy=False),
        "dow": dow_codes,
        "epoch": epoch.astype(np.int64, copy=False),
        "vm": vm.astype(np.float32),
        "steps": steps.astype(np.int64),
        "mask": mask_codes,
        "lines": lines,
    }
    return parsed, keep


def _scan_epoch_file(path, participants, chunk_rows, violations):
    series: dict[tuple[str, Timepoint], EpochSeries] = {}
    finished: set[tuple[str, str]] = set()
    noncontiguous: set[tuple[str, str]] = set()
    unknown_ids: set[str] = set()
    current: Optional[_GroupBuffer] = None
    line = 2
    try:
        reader = pd.read_csv(path, dtype=str, keep_default_na=False,
                             chunksize=chunk_rows)
    except pd.errors.EmptyDataError:
        raise SchemaError("epoch file is empty") from None
    has_mask = None
    any_rows = False
    for chunk in reader:
        if has_mask is None:
            _check_columns(chunk.columns, EPOCH_COLUMNS, ("mask",),
                           "epoch file", violations)
            has_mask = "mask" in chunk.columns
        if not len(chunk):
            continue
        any_rows = True
        parsed, keep = _validate_chunk(chunk, line, has_mask, violations)
        line += len(chunk)
        keys = np.array([f"{p}\x1f{t}" for p, t in
                         zip(parsed["pid"], parsed["tp"])], dtype=object)
        boundaries = [0] + (np.nonzero(keys[1:] != keys[:-1])[0] + 1).tolist()
        boundaries.append(len(keys))
        for b0, b1 in zip(boundaries, boundaries[1:]):
            pid = parsed["pid"][b0]
            tp_label = parsed["tp"][b0]
            key = (pid, tp_label)
            first_line = int(parsed["lines"][b0])
            if current is None or (current.pid, current.tp_label) != key:
                if current is not None:
                    _flush_group(current, series, violations)
                    finished.add((current.pid, current.tp_label))
                if key in finished and key not in noncontiguous:
                    noncontiguous.add(key)
                    violations.add(
                        "schema", first_line,
                        f"rows for participant {pid!r} {tp_label} are not "
                        f"contiguous; epoch files must be grouped by "
                        f"participant and timepoint")
                current = _GroupBuffer(pid, tp_label, first_line)
                if key in noncontiguous:
                    current.bad = True
                if pid and pid not in participants:
                    if pid not in unknown_ids:
                        unknown_ids.add(pid)
                        violations.add(
                            "crossref", first_line,
                            f"participant {pid!r} is not in the participant "
                            f"file")
                    current.bad = True
            sel = keep[b0:b1]
            if not sel.all():
                current.bad = True
            if current.bad:
                continue
            sl = slice(b0, b1)
            current.day.append(parsed["day"][sl][sel])
            current.epoch.append(parsed["epoch"][sl][sel])
            current.dow.append(parsed["dow"][sl][sel])
            current.vm.append(parsed["vm"][sl][sel])
            current.steps.append(parsed["steps"][sl][sel])
            if parsed["mask"] is not None:
                current.mask.append(parsed["mask"][sl][sel])
            current.line.append(parsed["lines"][sl][sel])
    if current is not None:
        _flush_group(current, series, violations)
    if not any_rows:
        violations.add("completeness", None, "epoch file has no data rows")
    return series


def read_epoch_file(epoch_path, participants: dict,
                    chunk_rows: int = DEFAULT_CHUNK_ROWS) -> dict:
    """Stream and validate one epoch file against known participants.

    Returns the ``(participant_id, timepoint) -> EpochSeries`` mapping.
    Raises SchemaError, CompletenessError, or CrossRefError carrying every
    detected violation (line-numbered where possible) in the message and a
    ``violations`` attribute.
    """
    violations = _Violations()
    series = _scan_epoch_file(epoch_path, participants, chunk_rows,
                              violations)
    violations.raise_if_any()
    return series


def ingest(epoch_path, participant_path,
           chunk_rows: int = DEFAULT_CHUNK_ROWS) -> StepDataset:
    """Stream, validate, and assemble a dataset from the two input files.

    Raises the same errors as read_epoch_file, plus participant-file
    violations.
    """
    participants = read_participant_file(participant_path)
    series = read_epoch_file(epoch_path, participants, chunk_rows)
    return StepDataset(participants, series)


def validate_files(epoch_path, participant_path,
                   chunk_rows: int = DEFAULT_CHUNK_ROWS) -> list[str]:
    """All detected violations in both files, empty when they are valid."""
    try:
        participants = read_participant_file(participant_path)
    except (SchemaError, CompletenessError) as exc:
        return list(getattr(exc, "violations", (str(exc),)))
    violations = _Violations()
    _scan_epoch_file(epoch_path, participants, chunk_rows, violations)
    return violations.messages()


def _series_frame(series: EpochSeries, include_mask: bool) -> pd.DataFrame:
    n = DAYS_PER_WEEK * EPOCHS_PER_DAY
    data = {
        "participant_id": np.repeat(series.participant_id, n),
        "timepoint": np.repeat(series.timepoint.value, n),
        "day": np.repeat(np.arange(1, DAYS_PER_WEEK + 1), EPOCHS_PER_DAY),
        "dow": np.repeat([d.day_of_week.label for d in series.days],
                         EPOCHS_PER_DAY),
        "epoch": np.tile(np.arange(EPOCHS_PER_DAY), DAYS_PER_WEEK),
        "vm": series.vm_week,
        "steps": series.steps_week,
    }
    if include_mask:
        data["mask"] = np.array(MASK_LABELS, dtype=object)[series.mask_week]
    return pd.DataFrame(data)


def write_epoch_file(series_iter: Iterable[EpochSeries], path,
                     include_mask: bool = True) -> Path:
    """Serialize epoch series, one participant-week in memory at a time."""
    path = Path(path)
    with atomic_write(path) as fh:
        wrote_any = False
        for series in series_iter:
            frame = _series_frame(series, include_mask)
            frame.to_csv(fh, index=False, header=not wrote_any,
                         lineterminator="\n")
            wrote_any = True
        if not wrote_any:
            cols = EPOCH_COLUMNS + (("mask",) if include_mask else ())
            fh.write(",".join(cols) + "\n")
    return path


def _ordered_series(dataset: StepDataset) -> list[EpochSeries]:
    order = {tp: i for i, tp in enumerate(Timepoint)}
    keys = sorted(dataset.series, key=lambda k: (k[0], order[k[1]]))
    return [dataset.series[k] for k in keys]


def write_dataset(dataset: StepDataset, epoch_path, participant_path,
                  include_mask: bool = True) -> None:
    """Serialize a dataset as one epoch file plus one participant file."""
    write_epoch_file(_ordered_series(dataset), epoch_path, include_mask)
    write_participant_file(dataset.participants.values(), participant_path)


def write_participant_file(participants: Iterable[Participant], path) -> Path:
    path = Path(path)
    rows = sorted(participants, key=lambda p: p.participant_id)
    data = {
        "participant_id": [p.participant_id for p in rows],
        "arm": [p.arm.value for p in rows],
        "sex": [p.sex.value for p in rows],
        "age": [p.age for p in rows],
        "bmi": [p.bmi for p in rows],
    }
    for name in PARTICIPANT_OPTIONAL:
        values = [getattr(p, name) for p in rows]
        if any(v is not None for v in values):
            data[name] = ["" if v is None else v for v in values]
    with atomic_write(path) as fh:
        pd.DataFrame(data).to_csv(fh, index=False, lineterminator="\n")
    return path
