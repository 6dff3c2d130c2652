"""Counting-process data model: subject paths, CSV ingestion, risk sets and the pooled grid.

A subject is followed from time 0 until death, censoring or the end of
administrative follow-up (``admin_end``). Recurrent events may happen any
number of times before that. Event times are continuous, so a subject never
has two events at the same instant.
"""

from __future__ import annotations

import csv
import enum
import io
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np


class DataValidationError(ValueError):
    """Raised for malformed or inconsistent event-history input."""

    def __init__(self, message: str, row: int | None = None, subject: str | None = None):
        prefix = []
        if row is not None:
            prefix.append(f"row {row}")
        if subject is not None:
            prefix.append(f"subject {subject!r}")
        full = f"{', '.join(prefix)}: {message}" if prefix else message
        super().__init__(full)
        self.row = row
        self.subject = subject


class DegenerateGridError(ValueError):
    """Raised when no event falls in (0, tau]."""


class EventKind(enum.Enum):
    RECURRENT = "recurrent"
    DEATH = "death"
    CENSOR = "censor"

    @property
    def terminal(self) -> bool:
        return self is not EventKind.RECURRENT


# CSV event codes; code 3 closes an interval without an event.
EVENT_CODES = {0: EventKind.CENSOR, 1: EventKind.RECURRENT, 2: EventKind.DEATH, 3: None}


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: EventKind

    def __post_init__(self):
        if not (self.time > 0 and np.isfinite(self.time)):
            raise DataValidationError(f"event time must be positive and finite, got {self.time}")


@dataclass(frozen=True)
class SubjectPath:
    """One subject's baseline data and time-ordered event records.

    ``admin_end`` is the end of follow-up when no terminal record exists. A
    subject whose follow-up stops before the analysis horizon without a
    terminal record is treated as censored at ``admin_end``.
    """

    id: str
    covariates: tuple[float, ...]
    treatment: int
    records: tuple[EventRecord, ...]
    admin_end: float

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(float(c) for c in self.covariates))
        object.__setattr__(self, "records", tuple(self.records))
        validate_path(self)

    @property
    def terminal(self) -> EventRecord | None:
        if self.records and self.records[-1].kind.terminal:
            return self.records[-1]
        return None

    @property
    def end_time(self) -> float:
        """T^end: time of death or censoring, or ``admin_end`` when follow-up just stops."""
        term = self.terminal
        return term.time if term is not None else self.admin_end

    @property
    def died(self) -> bool:
        term = self.terminal
        return term is not None and term.kind is EventKind.DEATH

    @property
    def recurrent_times(self) -> np.ndarray:
        return np.array([r.time for r in self.records if r.kind is EventKind.RECURRENT])

    def count(self, t: float) -> int:
        """N^y(t), recurrent events in (0, t]."""
        return int(np.searchsorted(self.recurrent_times, t, side="right"))

    def count_before(self, t: float) -> int:
        """N^y(t-), recurrent events in (0, t)."""
        return int(np.searchsorted(self.recurrent_times, t, side="left"))

    def censor_time(self, horizon: float) -> float | None:
        """Time of (explicit or administrative) censoring strictly before ``horizon``."""
        term = self.terminal
        if term is not None:
            return term.time if term.kind is EventKind.CENSOR else None
        return self.admin_end if self.admin_end < horizon else None


def validate_path(path: SubjectPath) -> None:
    times = [r.time for r in path.records]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DataValidationError("event times must be strictly increasing", subject=path.id)
    n_terminal = sum(r.kind.terminal for r in path.records)
    if n_terminal > 1:
        raise DataValidationError("more than one death/censoring record", subject=path.id)
    if n_terminal == 1 and not path.records[-1].kind.terminal:
        raise DataValidationError("event after terminal event", subject=path.id)
    if not (path.admin_end > 0):
        raise DataValidationError("admin_end must be positive", subject=path.id)
    if times and times[-1] > path.admin_end:
        raise DataValidationError("event after end of follow-up", subject=path.id)


def validate_paths(paths: Sequence[SubjectPath]) -> None:
    """Check per-path invariants and that ids are unique and covariate lengths agree."""
    seen = set()
    dims = set()
    for p in paths:
        validate_path(p)
        if p.id in seen:
            raise DataValidationError("duplicate subject id", subject=p.id)
        seen.add(p.id)
        dims.add(len(p.covariates))
    if len(dims) > 1:
        raise DataValidationError(f"inconsistent covariate dimensions {sorted(dims)}")


def at_risk(path: SubjectPath, t: float) -> bool:
    """1{T^end >= t}: no terminal event (and follow-up not ended) strictly before t."""
    return t <= path.end_time


# --------------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class ColumnSpec:
    """Column names for the Andersen-Gill CSV layout.

    ``covariates=None`` takes every column not otherwise named, in header order.
    """

    id: str = "id"
    tstart: str = "tstart"
    tstop: str = "tstop"
    event: str = "event"
    treatment: str = "a"
    covariates: tuple[str, ...] | None = None


def _parse_float(value: str, row: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise DataValidationError(f"column {column!r}: cannot parse {value!r} as a number", row=row) from None
    if not np.isfinite(out):
        raise DataValidationError(f"column {column!r}: non-finite value {value!r}", row=row)
    return out


def ingest_csv(source: IO[bytes] | IO[str], schema: ColumnSpec = ColumnSpec()) -> list[SubjectPath]:
    """Read counting-process rows (one per at-risk interval) into subject paths.

    The event code of a row applies at its ``tstop``. Row numbers in error
    messages count the header as row 1.
    """
    raw = source.read()
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return []
    fixed = [schema.id, schema.tstart, schema.tstop, schema.event, schema.treatment]
    missing = [c for c in fixed if c not in header]
    if missing:
        raise DataValidationError(f"missing required columns {missing}", row=1)
    cov_names = schema.covariates
    if cov_names is None:
        cov_names = tuple(h for h in header if h not in fixed)
    absent = [c for c in cov_names if c not in header]
    if absent:
        raise DataValidationError(f"missing covariate columns {absent}", row=1)
    col = {name: header.index(name) for name in list(fixed) + list(cov_names)}

    rows_by_id: dict[str, list[tuple[int, float, float, int, float, tuple[float, ...]]]] = defaultdict(list)
    order: list[str] = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataValidationError(f"expected {len(header)} fields, got {len(row)}", row=line_no)
        sid = row[col[schema.id]].strip()
        if not sid:
            raise DataValidationError("empty id", row=line_no)
        t0 = _parse_float(row[col[schema.tstart]], line_no, schema.tstart)
        t1 = _parse_float(row[col[schema.tstop]], line_no, schema.tstop)
        code_f = _parse_float(row[col[schema.event]], line_no, schema.event)
        if code_f != int(code_f) or int(code_f) not in EVENT_CODES:
            raise DataValidationError(f"unknown event code {row[col[schema.event]]!r}", row=line_no)
        a = _parse_float(row[col[schema.treatment]], line_no, schema.treatment)
        covs = tuple(_parse_float(row[col[c]], line_no, c) for c in cov_names)
        if t0 < 0:
            raise DataValidationError("tstart must be non-negative", row=line_no)
        if t1 <= t0:
            raise DataValidationError(f"tstop ({t1}) must exceed tstart ({t0})", row=line_no)
        if sid not in rows_by_id:
            order.append(sid)
        rows_by_id[sid].append((line_no, t0, t1, int(code_f), a, covs))

    paths = []
    for sid in order:
        rows = sorted(rows_by_id[sid], key=lambda r: r[1])
        records: list[EventRecord] = []
        prev_stop = 0.0
        terminal_seen = False
        for line_no, t0, t1, code, a, covs in rows:
            if t0 < prev_stop:
                raise DataValidationError("overlapping intervals", row=line_no, subject=sid)
            if t0 > prev_stop:
                raise DataValidationError(f"gap in follow-up between {prev_stop} and {t0}", row=line_no, subject=sid)
            if terminal_seen:
                raise DataValidationError("event after terminal event", row=line_no, subject=sid)
            if a != rows[0][4] or covs != rows[0][5]:
                raise DataValidationError("baseline covariates/treatment vary within subject", row=line_no, subject=sid)
            kind = EVENT_CODES[code]
            if kind is not None:
                records.append(EventRecord(t1, kind))
                terminal_seen = kind.terminal
            prev_stop = t1
        a0 = rows[0][4]
        if a0 != int(a0):
            raise DataValidationError(f"treatment must be an integer code, got {a0}", row=rows[0][0], subject=sid)
        paths.append(SubjectPath(sid, rows[0][5], int(a0), tuple(records), admin_end=prev_stop))
    validate_paths(paths)
    return paths


def write_csv(paths: Iterable[SubjectPath], sink: IO[str], covariate_names: Sequence[str] | None = None) -> None:
    """Write paths in the same row-per-interval layout that :func:`ingest_csv` reads."""
    paths = list(paths)
    d = len(paths[0].covariates) if paths else 0
    names = list(covariate_names) if covariate_names is not None else [f"l{i + 1}" for i in range(d)]
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["id", "tstart", "tstop", "event", "a", *names])
    code_of = {EventKind.CENSOR: 0, EventKind.RECURRENT: 1, EventKind.DEATH: 2}
    for p in paths:
        start = 0.0
        covs = [repr(c) for c in p.covariates]
        for r in p.records:
            w.writerow([p.id, repr(start), repr(r.time), code_of[r.kind], p.treatment, *covs])
            start = r.time
        if p.terminal is None and p.admin_end > start:
            w.writerow([p.id, repr(start), repr(p.admin_end), 3, p.treatment, *covs])


# --------------------------------------------------------------------------- grid


@dataclass(frozen=True)
class PooledGrid:
    """Ordered distinct event times 0 < T_(1) < ... < T_(K) <= horizon."""

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise DegenerateGridError("grid must contain at least one time")
        if np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] > self.horizon:
            raise ValueError("grid times must be strictly increasing in (0, horizon]")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def K(self) -> int:
        return self.times.size

    @property
    def widths(self) -> np.ndarray:
        """T_(k) - T_(k-1) with T_(0) = 0."""
        return np.diff(self.times, prepend=0.0)

    def index(self, t: float) -> int:
        """0-based position of grid time ``t``; raises KeyError when absent."""
        i = int(np.searchsorted(self.times, t))
        if i >= self.K or self.times[i] != t:
            raise KeyError(t)
        return i


def event_times(paths: Sequence[SubjectPath], horizon: float) -> np.ndarray:
    out = []
    for p in paths:
        out.extend(r.time for r in p.records if r.time <= horizon)
        c = p.censor_time(horizon)
        if p.terminal is None and c is not None:
            out.append(c)
    return np.asarray(out, dtype=float)


def build_grid(paths: Sequence[SubjectPath], horizon: float) -> PooledGrid:
    """Sorted, de-duplicated event times (any kind) in (0, horizon]."""
    if not paths:
        raise ValueError("need at least one path")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    times = np.unique(event_times(paths, horizon))
    if times.size == 0:
        raise DegenerateGridError(f"no events at or before horizon {horizon}")
    return PooledGrid(times, float(horizon))


# --------------------------------------------------------------------------- history state


@dataclass(frozen=True)
class HistoryState:
    """Capped-count summary: state j = min(N^y(t-), J-1) + 1, j in 1..J."""

    count_cap: int

    def __post_init__(self):
        if self.count_cap < 1:
            raise ValueError("count_cap must be a positive integer")

    def state_of(self, path: SubjectPath, t: float) -> int:
        return min(path.count_before(t), self.count_cap - 1) + 1

    def summary(self, j: np.ndarray | int) -> np.ndarray:
        """Capped past count v = j - 1 carried by state j."""
        return np.asarray(j) - 1

    @classmethod
    def default_for(cls, paths: Sequence[SubjectPath], horizon: float) -> "HistoryState":
        """J = 1 + max observed N^y(horizon)."""
        return cls(1 + max((p.count(horizon) for p in paths), default=0))


@dataclass(frozen=True)
class GridProcesses:
    """Observed counting processes of every subject evaluated on a pooled grid.

    All arrays have shape (n, K). ``count_before[i, k]`` is N^y_i(T_(k)-),
    uncapped. ``censor_jump`` includes administrative end of follow-up before
    the horizon.
    """

    grid: PooledGrid
    at_risk: np.ndarray
    count_before: np.ndarray
    recurrent_jump: np.ndarray
    death_jump: np.ndarray
    censor_jump: np.ndarray
    covariates: np.ndarray
    treatment: np.ndarray
    ids: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.at_risk.shape[0]

    def states(self, J: int) -> np.ndarray:
        """1-based capped state just before each grid time."""
        return np.minimum(self.count_before, J - 1) + 1


def on_grid(paths: Sequence[SubjectPath], grid: PooledGrid) -> GridProcesses:
    n, K = len(paths), grid.K
    at = np.zeros((n, K), dtype=bool)
    cnt = np.zeros((n, K), dtype=np.int64)
    dy = np.zeros((n, K), dtype=np.int8)
    dd = np.zeros((n, K), dtype=np.int8)
    dc = np.zeros((n, K), dtype=np.int8)
    for i, p in enumerate(paths):
        at[i] = grid.times <= p.end_time
        rec = p.recurrent_times
        cnt[i] = np.searchsorted(rec, grid.times, side="left")
        rec = rec[rec <= grid.horizon]
        if rec.size:
            pos = np.searchsorted(grid.times, rec)
            if np.any(pos >= K) or np.any(grid.times[np.minimum(pos, K - 1)] != rec):
                raise ValueError(f"subject {p.id!r}: recurrent event time not on the grid")
            dy[i, pos] = 1
        term = p.terminal
        # terminal times off the grid leave no jump; the subject simply drops out of the risk set
        if term is not None and term.time <= grid.horizon and term.time in grid.times:
            target = dd if term.kind is EventKind.DEATH else dc
            target[i, grid.index(term.time)] = 1
        elif term is None and p.admin_end < grid.horizon and p.admin_end in grid.times:
            dc[i, grid.index(p.admin_end)] = 1
    d = len(paths[0].covariates) if paths else 0
    x = np.array([p.covariates for p in paths], dtype=float).reshape(n, d)
    a = np.array([p.treatment for p in paths], dtype=np.int64)
    return GridProcesses(grid, at, cnt, dy, dd, dc, x, a, tuple(p.id for p in paths))
