"""Adapters exposing a DiscreteModel through the package's nuisance interfaces."""

from __future__ import annotations

import numpy as np

from oracles import OUTCOMES, _p_outcome
from recurtmle.event_data import GridProcesses, PooledGrid
from recurtmle.intensity import TableFit
from recurtmle.tmle import Intervention, clever_weights, evaluate, _initial_increments, _pistar


class ModelTreatment:
    """pi(a | L) read off a DiscreteModel, matching subjects by their covariate value."""

    def __init__(self, model):
        self.model = model

    def _index(self, x):
        return [int(np.argmin(np.abs(self.model.support[:, 0] - v))) for v in x[:, 0]]

    def prob(self, a, x):
        return np.array([self.model.pi(int(ai), li) for ai, li in zip(a, self._index(x))])


def model_proc(model, data):
    """GridProcesses on grid 1..K for histories of (death, event, censor) outcomes."""
    K, n = model.K, len(data)
    at = np.zeros((n, K), bool)
    cnt = np.zeros((n, K), np.int64)
    dy, dd, dc = (np.zeros((n, K), np.int8) for _ in range(3))
    for i, (_, _, hist) in enumerate(data):
        c = 0
        for k, (dt, ev, ce) in enumerate(hist):
            at[i, k] = True
            cnt[i, k] = c
            dd[i, k], dy[i, k], dc[i, k] = dt, ev, ce
            c += ev
        cnt[i, len(hist):] = c
    x = np.array([model.support[li] for li, _, _ in data])
    a = np.array([a for _, a, _ in data])
    return GridProcesses(PooledGrid(np.arange(1.0, K + 1), float(K)), at, cnt, dy, dd, dc, x, a, tuple(map(str, range(n))))


def model_fit(model, table, kind):
    return TableFit(kind, {(a, tuple(model.support[li])): table[:, :, a, li] for a in (0, 1) for li in range(len(model.mu))})


def model_intervention(model, pistar1):
    def prob(a, x):
        li = [int(np.argmin(np.abs(model.support[:, 0] - v))) for v in x[:, 0]]
        return pistar1[li] if a == 1 else 1 - pistar1[li]

    return Intervention(prob, [0, 1])


def model_evaluation(nuis, proc, J):
    inc, arms, J = _initial_increments(nuis, proc, J)
    cw = clever_weights(nuis, proc, 1e12)
    return evaluate(inc, proc, cw.weight, _pistar(nuis, proc, arms))


def all_histories(model):
    """Every observable (L, A, history) with its probability under the model."""
    out = []

    def walk(li, a, prefix, p, count):
        if len(prefix) == model.K:
            out.append(((li, a, prefix), p))
            return
        s = min(count, model.J - 1)
        for o in OUTCOMES:
            q = p * _p_outcome(model, len(prefix), s, a, li, o)
            if o[0] or o[2]:
                out.append(((li, a, prefix + (o,)), q))
            else:
                walk(li, a, prefix + (o,), q, count + o[1])

    for li in range(len(model.mu)):
        for a in (0, 1):
            walk(li, a, (), model.mu[li] * model.pi(a, li), 0)
    return out
