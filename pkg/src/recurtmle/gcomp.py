"""Backward matrix recursion for the g-computation formula.

For a fixed treatment value ``a`` and baseline covariates ``L`` let
``d[k, j]`` and ``y[k, j]`` be the death and recurrent-event increments at
grid time ``T_(k+1)`` (0-based ``k``) for a subject in capped-count state
``j + 1``. The recursion computes

    Z[k, j] = E*[N^y(tau) - N^y(T_(k)-) | at risk at T_(k), state j + 1, a, L]

for k = 0..K with Z[K] = 0, under no censoring. In augmented form
``Z~_k = B~_k Z~_{k+1}`` with a trailing constant coordinate equal to one.

Arrays may carry any leading batch dimensions, e.g. (n, K, J) for the whole
sample under one treatment value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intensity import IntensityFit, clamp_increments
from .event_data import PooledGrid


@dataclass(frozen=True)
class IncrementTable:
    """Death and recurrent-event increments per treatment arm, each of shape (n, K, J)."""

    d: dict
    y: dict

    def __post_init__(self):
        if set(self.d) != set(self.y):
            raise ValueError("death and recurrent tables must cover the same arms")
        for a in self.d:
            if self.d[a].shape != self.y[a].shape:
                raise ValueError(f"shape mismatch for arm {a}")

    @property
    def arms(self) -> list:
        return sorted(self.d)

    @property
    def J(self) -> int:
        return next(iter(self.d.values())).shape[-1]

    @classmethod
    def from_fits(cls, death: IntensityFit, recurrent: IntensityFit, grid: PooledGrid, x: np.ndarray, arms, J: int) -> "IncrementTable":
        n = np.atleast_2d(x).shape[0]
        d, y = {}, {}
        for a in arms:
            av = np.full(n, a)
            d[a] = clamp_increments(death.table(grid, x, av, J))
            y[a] = clamp_increments(recurrent.table(grid, x, av, J))
        return cls(d, y)


@dataclass(frozen=True)
class GcompTable:
    """Z values per arm, shape (n, K+1, J); row K is the terminal zero vector."""

    Z: dict

    def augmented(self, a, i: int) -> np.ndarray:
        """Z~_k for one subject: shape (K+1, J+1) with the trailing coordinate equal to 1."""
        z = self.Z[a][i]
        return np.hstack([z, np.ones((z.shape[0], 1))])

    def z11(self, a) -> np.ndarray:
        return self.Z[a][:, 0, 0]


def build_transition(j: int, d: float, y: float, J: int) -> np.ndarray:
    """Row ``j`` (1-based, j <= J + 1) of the (J+1) x (J+1) matrix B~_k."""
    row = np.zeros(J + 1)
    if j == J + 1:
        row[J] = 1.0
    elif j == J:
        row[J - 1] = 1.0 - d
        row[J] = (1.0 - d) * y
    elif 1 <= j < J:
        row[j - 1] = (1.0 - d) * (1.0 - y)
        row[j] = (1.0 - d) * y
        row[J] = (1.0 - d) * y
    else:
        raise ValueError(f"state {j} outside 1..{J + 1}")
    return row


def transition_matrix(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """B~_k from the length-J increment vectors at one grid time."""
    J = len(d)
    rows = [build_transition(j, d[j - 1], y[j - 1], J) for j in range(1, J + 1)]
    return np.vstack(rows + [build_transition(J + 1, 0.0, 0.0, J)])


def backward_recursion(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Z of shape (..., K+1, J) from increments of shape (..., K, J)."""
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    if d.shape != y.shape or d.ndim < 2:
        raise ValueError("increment arrays must share a shape (..., K, J)")
    *batch, K, J = d.shape
    Z = np.zeros((*batch, K + 1, J))
    for k in range(K - 1, -1, -1):
        nxt = Z[..., k + 1, :]
        dk, yk = d[..., k, :], y[..., k, :]
        cur = Z[..., k, :]
        if J > 1:
            cur[..., :-1] = (1 - dk[..., :-1]) * ((1 - yk[..., :-1]) * nxt[..., :-1] + yk[..., :-1] * (1 + nxt[..., 1:]))
        cur[..., -1] = (1 - dk[..., -1]) * (nxt[..., -1] + yk[..., -1])
    return Z


def backward_recursion_matrix(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Same as :func:`backward_recursion` for one (a, L) via explicit B~_k products; (K+1, J+1)."""
    K, J = d.shape
    Zt = np.zeros((K + 1, J + 1))
    Zt[K, J] = 1.0
    for k in range(K - 1, -1, -1):
        Zt[k] = transition_matrix(d[k], y[k]) @ Zt[k + 1]
    return Zt


def recursion(inc: IncrementTable) -> GcompTable:
    return GcompTable({a: backward_recursion(inc.d[a], inc.y[a]) for a in inc.arms})


def plugin_psi(tables: GcompTable, pistar: dict) -> tuple[float, np.ndarray]:
    """Plug-in estimate and per-subject E*[N^y(tau) | L_i].

    ``pistar`` maps each treatment value to the vector of pi*(a | L_i).
    Arms with positive intervention probability must have a table.
    """
    total = None
    for a, p in pistar.items():
        p = np.asarray(p, dtype=float)
        if np.any(p > 0) and a not in tables.Z:
            raise KeyError(f"no g-computation table for treatment {a}")
        if a not in tables.Z:
            continue
        term = p * tables.z11(a)
        total = term if total is None else total + term
    if total is None:
        raise KeyError("intervention puts no mass on any tabulated arm")
    return float(total.mean()), total


def clever_covariates(Z: np.ndarray, y: np.ndarray, k: int, j: int) -> tuple[float, float]:
    """(h^d, h^y) at 1-based grid time ``k`` for a subject in 1-based state ``j``.

    ``Z`` is the subject's (K+1, J) table and ``y`` its (K, J) recurrent
    increments, both under the subject's observed treatment.
    """
    J = Z.shape[-1]
    if not 1 <= j <= J:
        raise ValueError(f"state {j} outside 1..{J}")
    nxt = Z[k]
    yj = y[k - 1, j - 1]
    if j < J:
        return -((1 - yj) * nxt[j - 1] + yj * (nxt[j] + 1)), nxt[j] + 1 - nxt[j - 1]
    return -(nxt[J - 1] + yj), 1.0


def observed_clever_covariates(Z: np.ndarray, y: np.ndarray, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (h^d, h^y) of shape (n, K) at each subject's observed state.

    ``Z`` is (n, K+1, J), ``y`` is (n, K, J), ``states`` is (n, K) 1-based.
    """
    J = Z.shape[-1]
    s = np.minimum(states, J) - 1
    nxt = Z[:, 1:, :]
    at = lambda arr, idx: np.take_along_axis(arr, idx[:, :, None], axis=2)[:, :, 0]  # noqa: E731
    z_same = at(nxt, s)
    z_up = at(nxt, np.minimum(s + 1, J - 1))
    ys = at(y, s)
    top = s == J - 1
    hy = np.where(top, 1.0, z_up + 1 - z_same)
    hd = np.where(top, -(z_same + ys), -((1 - ys) * z_same + ys * (z_up + 1)))
    return hd, hy
