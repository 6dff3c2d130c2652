"""Poisson pseudo-data for discrete-time intensity fitting.

Each at-risk (subject, grid interval) pair is a row with exposure
T_(k) - T_(k-1), event indicator at T_(k), and raw inputs
z = (T_(k), L, A, N^y(T_(k)-)). Rows that fall in the same basis cell for the
same subject can be summed without changing the Poisson likelihood.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..event_data import EventKind, GridProcesses, PooledGrid, SubjectPath, on_grid
from ..intensity import jumps, risk_set
from .basis import BasisSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoissonDesign:
    z: np.ndarray
    exposure: np.ndarray
    events: np.ndarray
    subject: np.ndarray
    n_subjects: int
    kind: EventKind

    @property
    def rows(self) -> int:
        return self.exposure.size

    @property
    def empty(self) -> bool:
        return self.rows == 0

    def matrix(self, basis: BasisSpec) -> np.ndarray:
        return basis.evaluate(self.z)

    def subset(self, mask: np.ndarray, n_subjects: int) -> "PoissonDesign":
        return PoissonDesign(self.z[mask], self.exposure[mask], self.events[mask], self.subject[mask], n_subjects, self.kind)


def expand_design(
    data: Sequence[SubjectPath] | GridProcesses,
    grid: PooledGrid | None,
    kind: EventKind,
    basis: BasisSpec | None = None,
) -> PoissonDesign:
    """One row per subject and grid interval while at risk for ``kind``.

    ``basis`` is accepted for symmetry with :func:`compress`; rows always keep
    raw inputs so any basis can be evaluated later.
    """
    proc = data if isinstance(data, GridProcesses) else on_grid(data, grid)
    rs = risk_set(proc, kind)
    ii, kk = np.nonzero(rs)
    t = proc.grid.times[kk]
    z = np.column_stack([t, proc.covariates[ii], proc.treatment[ii].astype(float), proc.count_before[ii, kk].astype(float)])
    design = PoissonDesign(
        z=z.reshape(ii.size, 3 + proc.covariates.shape[1]),
        exposure=proc.grid.widths[kk],
        events=jumps(proc, kind)[ii, kk].astype(float),
        subject=ii.astype(np.int64),
        n_subjects=proc.n,
        kind=kind,
    )
    if design.empty:
        log.warning("empty %s design", kind.value)
    return design


def compress(design: PoissonDesign, basis: BasisSpec) -> PoissonDesign:
    """Sum exposures and events of rows sharing subject and basis cell."""
    if design.empty:
        return design
    tk = basis.time_knots
    tcell = np.searchsorted(tk, design.z[:, basis.time_var], side="right")
    keys = [design.subject, tcell]
    if basis.history_var is not None:
        v = design.z[:, basis.history_var]
        cap = basis.history_cap
        keys.append(v if cap is None else np.minimum(v, cap - 1))
    key = np.column_stack(keys)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    E = np.bincount(inv, weights=design.exposure)
    Y = np.bincount(inv, weights=design.events)
    return PoissonDesign(design.z[first], E, Y, design.subject[first], design.n_subjects, design.kind)
