"""Common interface for fitted intensities evaluated on a pooled grid.

Every fitted model used by the g-computation and targeting code exposes
discrete increments ``table(grid, x, a, J)[i, k, j-1]`` =
ΔΛ(T_(k) | at risk, state j, A = a_i, L = x_i).

Within a grid time the death draw comes first, then the recurrent-event draw
among survivors, then censoring. Accordingly the recurrent and censoring
increments are hazards among subjects still alive at T_(k); in continuous
time the distinction vanishes since events never coincide.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .event_data import EventKind, GridProcesses, PooledGrid

INCREMENT_CLAMP = 1e-8  # increments live in [0, 1 - INCREMENT_CLAMP]


def clamp_increments(inc: np.ndarray, delta: float = INCREMENT_CLAMP) -> np.ndarray:
    return np.clip(inc, 0.0, 1.0 - delta)


@runtime_checkable
class IntensityFit(Protocol):
    kind: EventKind

    @property
    def history_cap(self) -> int | None:
        """Smallest count cap J that captures all history dependence (None: unbounded)."""

    def table(self, grid: PooledGrid, x: np.ndarray, a: np.ndarray, J: int) -> np.ndarray:
        """Increments of shape (n, K, J) for subjects with covariates ``x`` and treatments ``a``."""


def increments(fit: IntensityFit, grid: PooledGrid, j: int, a: int, L) -> np.ndarray:
    """ΔΛ_{k,j}(a, L) for k = 1..K, a single subject."""
    if j < 1:
        raise ValueError("states are 1-based")
    x = np.atleast_2d(np.asarray(L, dtype=float))
    return fit.table(grid, x, np.array([a]), j)[0, :, j - 1]


def effective_cap(J: int, *fits: IntensityFit) -> int:
    """Smallest cap not exceeding J under which the recursion over ``fits`` is exact."""
    caps = [f.history_cap for f in fits]
    if any(c is None for c in caps):
        return J
    return max(1, min(J, max(caps, default=1)))


def risk_set(proc: GridProcesses, kind: EventKind) -> np.ndarray:
    """Subject-time pairs that contribute to the ``kind`` likelihood."""
    if kind is EventKind.DEATH:
        return proc.at_risk
    return proc.at_risk & (proc.death_jump == 0)


def jumps(proc: GridProcesses, kind: EventKind) -> np.ndarray:
    return {
        EventKind.RECURRENT: proc.recurrent_jump,
        EventKind.DEATH: proc.death_jump,
        EventKind.CENSOR: proc.censor_jump,
    }[kind]


def observed_increments(fit: IntensityFit, proc: GridProcesses, a: np.ndarray | None = None, J: int | None = None) -> np.ndarray:
    """Increments along each subject's own observed history, shape (n, K)."""
    a = proc.treatment if a is None else a
    cap = fit.history_cap
    if J is None:
        J = cap if cap is not None else int(proc.count_before.max()) + 1
    elif cap is not None:
        J = min(J, cap)
    tab = fit.table(proc.grid, proc.covariates, a, J)
    state = proc.states(J) - 1
    n, K = state.shape
    return np.take_along_axis(tab, state[:, :, None], axis=2)[:, :, 0] if n else np.zeros((0, K))


class TableFit:
    """Increments looked up from explicit arrays, keyed by baseline covariate vector.

    ``values`` maps ``(a, tuple(L))`` to an array of shape (K, J). States above
    J reuse the last column. Intended for tests and hand-constructed models.
    """

    def __init__(self, kind: EventKind, values: dict, J: int | None = None):
        self.kind = kind
        self.values = {(int(a), tuple(float(v) for v in L)): np.asarray(arr, dtype=float) for (a, L), arr in values.items()}
        shapes = {arr.shape for arr in self.values.values()}
        if len(shapes) != 1:
            raise ValueError("all tables must share one (K, J) shape")
        self._J = shapes.pop()[1] if J is None else J

    @property
    def history_cap(self) -> int:
        return self._J

    def table(self, grid: PooledGrid, x: np.ndarray, a: np.ndarray, J: int) -> np.ndarray:
        x = np.atleast_2d(x)
        a = np.broadcast_to(np.asarray(a), (x.shape[0],))
        out = np.empty((x.shape[0], grid.K, J))
        cols = np.minimum(np.arange(J), self._J - 1)
        for i in range(x.shape[0]):
            arr = self.values[(int(a[i]), tuple(float(v) for v in x[i]))]
            if arr.shape[0] != grid.K:
                raise ValueError("table length does not match grid")
            out[i] = arr[:, cols]
        return out


class ScaledFit:
    """A fit multiplied by exp(epsilon) and re-clamped: the targeting submodel."""

    def __init__(self, base: IntensityFit, epsilon: float, delta: float = INCREMENT_CLAMP):
        self.base = base
        self.kind = base.kind
        self.epsilon = float(epsilon)
        self.delta = delta

    @property
    def history_cap(self):
        return self.base.history_cap

    def table(self, grid, x, a, J):
        return clamp_increments(np.exp(self.epsilon) * self.base.table(grid, x, a, J), self.delta)
