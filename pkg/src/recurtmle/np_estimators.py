"""Stratified Nelson-Aalen, Kaplan-Meier and the unadjusted marginal mean.

These ignore baseline covariates and recurrent-event history; they are valid
under independent censoring only and serve as the reference estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .event_data import EventKind, GridProcesses, PooledGrid, SubjectPath, event_times
from .intensity import risk_set, jumps


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: value(t) = baseline + sum of jumps at times <= t."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray
    baseline: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        s = np.asarray(self.jump_sizes, dtype=float)
        if t.shape != s.shape or t.ndim != 1:
            raise ValueError("jump_times and jump_sizes must be 1-d and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("jump_times must be strictly increasing")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_sizes", s)

    def __call__(self, t):
        idx = np.searchsorted(self.jump_times, t, side="right")
        cum = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        return self.baseline + cum[idx]

    def left_limit(self, t):
        idx = np.searchsorted(self.jump_times, t, side="left")
        cum = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
        return self.baseline + cum[idx]


def _stratum(paths: Sequence[SubjectPath], stratum) -> list[SubjectPath]:
    sub = [p for p in paths if stratum is None or p.treatment == stratum]
    if not sub:
        raise ValueError(f"empty stratum {stratum!r}")
    return sub


def nelson_aalen(paths: Sequence[SubjectPath], kind: EventKind, stratum=None, horizon: float = np.inf) -> StepFunction:
    """ΔΛ(t) = #events of ``kind`` at t / #at risk at t, over the stratum's event times."""
    sub = _stratum(paths, stratum)
    times = np.unique(event_times(sub, horizon))
    ends = np.array([p.end_time for p in sub])
    n_risk = (ends[None, :] >= times[:, None]).sum(axis=1)
    n_event = np.zeros(times.size)
    for p in sub:
        if kind is EventKind.RECURRENT:
            ts = p.recurrent_times
        elif kind is EventKind.CENSOR:
            c = p.censor_time(horizon)
            ts = np.array([] if c is None else [c])
        else:
            ts = np.array([p.end_time] if p.died else [])
        ts = ts[ts <= horizon]
        if ts.size:
            np.add.at(n_event, np.searchsorted(times, ts), 1)
    keep = (n_risk > 0) & (n_event > 0)
    return StepFunction(times[keep], n_event[keep] / n_risk[keep])


def product_integral(cumhaz: StepFunction, t: float) -> float:
    """prod_{s <= t} (1 - ΔΛ(s)) for a discrete cumulative hazard."""
    sizes = cumhaz.jump_sizes
    if np.any((sizes < 0) | (sizes > 1)):
        raise ValueError("hazard jumps must lie in [0, 1]")
    m = np.searchsorted(cumhaz.jump_times, t, side="right")
    return float(np.prod(1.0 - sizes[:m]))


def kaplan_meier(paths: Sequence[SubjectPath], stratum=None, horizon: float = np.inf) -> StepFunction:
    """Survival S^d(t) as a step function (jumps are the multiplicative drops, stored additively)."""
    na = nelson_aalen(paths, EventKind.DEATH, stratum, horizon)
    surv = np.cumprod(1.0 - na.jump_sizes)
    prev = np.concatenate([[1.0], surv[:-1]])
    return StepFunction(na.jump_times, surv - prev, baseline=1.0)


def unadjusted_marginal_mean(paths: Sequence[SubjectPath], stratum, horizon: float) -> float:
    """sum_k S^d(T_(k)-) ΔΛ^y(T_(k)), Kaplan-Meier times Nelson-Aalen within a treatment stratum."""
    lam_y = nelson_aalen(paths, EventKind.RECURRENT, stratum, horizon)
    if lam_y.jump_times.size == 0:
        return 0.0
    lam_d = nelson_aalen(paths, EventKind.DEATH, stratum, horizon)
    surv_left = np.array([product_integral(lam_d, np.nextafter(t, -np.inf)) for t in lam_y.jump_times])
    return float(np.sum(surv_left * lam_y.jump_sizes))


class StratifiedHazardFit:
    """Treatment-stratified discrete hazards on the pooled grid, as an intensity fit.

    Hazards follow the within-time ordering of :mod:`recurtmle.intensity`:
    deaths over the number at risk, recurrent events and censorings over the
    number at risk who did not die at that time. Plugged into the recursion,
    these give exactly the unadjusted marginal mean.
    """

    def __init__(self, proc: GridProcesses, kind: EventKind):
        self.kind = kind
        self.grid = proc.grid
        rs = risk_set(proc, kind)
        jm = jumps(proc, kind) * rs
        self.hazard = {}
        for a in np.unique(proc.treatment):
            m = proc.treatment == a
            denom = rs[m].sum(axis=0)
            num = jm[m].sum(axis=0)
            self.hazard[int(a)] = np.divide(num, denom, out=np.zeros(proc.grid.K), where=denom > 0)

    @property
    def history_cap(self) -> int:
        return 1

    def table(self, grid: PooledGrid, x: np.ndarray, a: np.ndarray, J: int) -> np.ndarray:
        if grid.K != self.grid.K or not np.array_equal(grid.times, self.grid.times):
            raise ValueError("stratified hazards are only defined on the grid they were fitted on")
        a = np.broadcast_to(np.asarray(a), (np.atleast_2d(x).shape[0],))
        rows = np.stack([self.hazard.get(int(ai), np.zeros(grid.K)) for ai in a]) if a.size else np.zeros((0, grid.K))
        return np.repeat(np.clip(rows, 0.0, 1.0)[:, :, None], J, axis=2)
