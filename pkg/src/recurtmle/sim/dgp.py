"""Multiplicative Weibull intensity models for recurrent events, death and censoring.

For process x in {y, d, c}

    lambda^x(t | F_{t-}) = (k_x / s_x) (t / s_x)^(k_x - 1)
                           * exp(alpha_x + b^x_A A + b^x_L g_x(L1) + b^x_N 1{N^y(t-) >= 1})

with g_y(L1) = L1^2 when ``quadratic`` is set and g_x(L1) = L1 otherwise.
Between recurrent events the multipliers are constant, so the next event
time of each process has a closed-form inverse and the earliest one wins.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..event_data import EventKind, EventRecord, SubjectPath

PROCESSES = ("y", "d", "c")


@dataclass(frozen=True)
class DgpSpec:
    shape: dict = field(default_factory=lambda: {"y": 1.3, "d": 1.3, "c": 1.3})
    scale: dict = field(default_factory=lambda: {"y": 8.0, "d": 9.0, "c": 3.0})
    alpha: dict = field(default_factory=lambda: {"y": 0.0, "d": 0.0, "c": 0.0})
    beta_A: dict = field(default_factory=lambda: {"y": 1.2, "d": 0.7, "c": 0.0})
    beta_L1: dict = field(default_factory=lambda: {"y": 2.1, "d": 0.7, "c": 1.4})
    beta_N: dict = field(default_factory=lambda: {"y": 2.1, "d": 1.4, "c": 1.8})
    tau: float = 1.2
    p_treat: float = 0.5
    quadratic: bool = True
    label: str = "primary"

    def __post_init__(self):
        for name in ("shape", "scale", "alpha", "beta_A", "beta_L1", "beta_N"):
            d = getattr(self, name)
            if set(d) != set(PROCESSES):
                raise ValueError(f"{name} needs entries for {PROCESSES}")
        if any(self.shape[x] <= 0 or self.scale[x] <= 0 for x in PROCESSES):
            raise ValueError("Weibull shapes and scales must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "DgpSpec":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown DGP keys {sorted(unknown)}")
        return cls(**obj)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]

    def with_(self, **changes) -> "DgpSpec":
        """Copy with per-process dict entries merged rather than replaced."""
        out = {}
        for k, v in changes.items():
            cur = getattr(self, k)
            out[k] = {**cur, **v} if isinstance(cur, dict) else v
        return replace(self, **out)


def primary_spec() -> DgpSpec:
    return DgpSpec()


def independent_censoring_spec() -> DgpSpec:
    """Censoring that ignores the recurrent-event history and death free of L1."""
    return DgpSpec().with_(beta_N={"c": 0.0}, beta_L1={"d": 0.0}, label="independent_censoring")


def misspecified_arm_spec() -> DgpSpec:
    """Same law as the primary setting; the misspecification lives in the fitted y-model."""
    return replace(DgpSpec(), label="misspecified_y")


def _multiplier(spec: DgpSpec, x: str, a, l1, has_event):
    g = l1**2 if (x == "y" and spec.quadratic) else l1
    return np.exp(spec.alpha[x] + spec.beta_A[x] * a + spec.beta_L1[x] * g + spec.beta_N[x] * has_event)


def _next_time(t0, mult, shape, scale, e):
    with np.errstate(divide="ignore", over="ignore"):
        h = (t0 / scale) ** shape + e / mult
        return scale * h ** (1.0 / shape)


@dataclass(frozen=True)
class SimArrays:
    """Raw simulation output: baseline data plus a flat list of events."""

    covariates: np.ndarray
    treatment: np.ndarray
    subject: np.ndarray
    time: np.ndarray
    kind: np.ndarray  # 0 censor, 1 recurrent, 2 death

    def counts(self, tau: float) -> np.ndarray:
        m = (self.kind == 1) & (self.time <= tau)
        return np.bincount(self.subject[m], minlength=self.treatment.size)


def simulate_arrays(spec: DgpSpec, n: int, rng: np.random.Generator, treatment=None, censoring: bool = True) -> SimArrays:
    """Vectorized competing-intensity simulation for ``n`` subjects up to ``spec.tau``."""
    L = np.column_stack([rng.uniform(-1, 1, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n)])
    if treatment is None:
        A = (rng.uniform(size=n) < spec.p_treat).astype(np.int64)
    else:
        A = np.full(n, int(treatment), dtype=np.int64)
    t = np.zeros(n)
    has = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    subj, times, kinds = [], [], []
    procs = PROCESSES if censoring else ("y", "d")
    while alive.any():
        idx = np.flatnonzero(alive)
        cand = np.empty((len(procs), idx.size))
        for r, x in enumerate(procs):
            mult = _multiplier(spec, x, A[idx], L[idx, 0], has[idx])
            e = rng.exponential(size=idx.size)
            cand[r] = _next_time(t[idx], mult, spec.shape[x], spec.scale[x], e)
        win = np.argmin(cand, axis=0)
        tn = cand[win, np.arange(idx.size)]
        done = ~(tn <= spec.tau)
        alive[idx[done]] = False
        ev = ~done
        idx, win, tn = idx[ev], win[ev], tn[ev]
        code = np.array([{"y": 1, "d": 2, "c": 0}[x] for x in procs])[win]
        subj.append(idx)
        times.append(tn)
        kinds.append(code)
        t[idx] = tn
        rec = code == 1
        has[idx[rec]] = 1.0
        alive[idx[~rec]] = False
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.empty(0, dt)  # noqa: E731
    s, tm, kd = cat(subj, np.int64), cat(times, float), cat(kinds, np.int64)
    order = np.lexsort((tm, s))
    return SimArrays(L, A, s[order], tm[order], kd[order])


def to_paths(arr: SimArrays, tau: float) -> list[SubjectPath]:
    kinds = {0: EventKind.CENSOR, 1: EventKind.RECURRENT, 2: EventKind.DEATH}
    n = arr.treatment.size
    bounds = np.searchsorted(arr.subject, np.arange(n + 1))
    out = []
    for i in range(n):
        lo, hi = bounds[i], bounds[i + 1]
        recs = tuple(EventRecord(float(arr.time[j]), kinds[int(arr.kind[j])]) for j in range(lo, hi))
        out.append(SubjectPath(str(i + 1), tuple(arr.covariates[i]), int(arr.treatment[i]), recs, admin_end=float(tau)))
    return out


def simulate(spec: DgpSpec, n: int, seed: int, treatment=None, censoring: bool = True) -> list[SubjectPath]:
    """``n`` subject paths; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    return to_paths(simulate_arrays(spec, n, rng, treatment, censoring), spec.tau)


@dataclass(frozen=True)
class TruePsi:
    value: float
    mc_se: float
    mc_size: int


def true_psi(spec: DgpSpec, treatment: int = 1, mc_size: int = 1_000_000, seed: int = 20240101, chunk: int = 250_000) -> TruePsi:
    """Monte Carlo E[N^y(tau)] with treatment forced and censoring switched off."""
    rng = np.random.default_rng(seed)
    s1 = s2 = 0.0
    done = 0
    while done < mc_size:
        m = min(chunk, mc_size - done)
        c = simulate_arrays(spec, m, rng, treatment=treatment, censoring=False).counts(spec.tau).astype(float)
        s1 += c.sum()
        s2 += (c**2).sum()
        done += m
    mean = s1 / mc_size
    var = max(s2 / mc_size - mean**2, 0.0)
    return TruePsi(mean, math.sqrt(var / mc_size), mc_size)
