"""Clever weights, efficient influence curve and iterative targeting.

The targeted fits are the initial death and recurrent-event increments
multiplied by ``exp(eps)`` (then clamped), with one ``eps`` per update.
Treatment and censoring mechanisms are held fixed.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .event_data import EventKind, GridProcesses, SubjectPath, build_grid, on_grid
from .gcomp import IncrementTable, GcompTable, recursion, plugin_psi, observed_clever_covariates
from .intensity import INCREMENT_CLAMP, IntensityFit, effective_cap, observed_increments, risk_set

log = logging.getLogger(__name__)

Z975 = 1.959964


class PositivityError(RuntimeError):
    def __init__(self, message: str, subject: str | None = None):
        super().__init__(message if subject is None else f"subject {subject!r}: {message}")
        self.subject = subject


# --------------------------------------------------------------------------- treatment


class Intervention:
    """Baseline intervention pi*(a | L)."""

    def __init__(self, prob: Callable[[int, np.ndarray], np.ndarray], support: Sequence[int], label: str = "custom"):
        self._prob = prob
        self.support = tuple(int(a) for a in support)
        self.label = label

    def prob(self, a: int, x: np.ndarray) -> np.ndarray:
        n = np.atleast_2d(x).shape[0]
        if int(a) not in self.support:
            return np.zeros(n)
        return np.broadcast_to(np.asarray(self._prob(int(a), np.atleast_2d(x)), dtype=float), (n,)).copy()

    def probs(self, x: np.ndarray) -> dict:
        return {a: self.prob(a, x) for a in self.support}

    @classmethod
    def static(cls, value: int) -> "Intervention":
        v = int(value)
        return cls(lambda a, x: np.ones(x.shape[0]), [v], label=f"a={v}")

    @classmethod
    def bernoulli(cls, p1: float) -> "Intervention":
        return cls(lambda a, x: np.full(x.shape[0], p1 if a == 1 else 1 - p1), [0, 1], label=f"bernoulli({p1:g})")


@dataclass(frozen=True)
class TreatmentModel:
    """pi(a | L): empirical frequencies or a main-terms logistic regression (binary A).

    ``coef`` holds (intercept, slopes) for P(A = 1 | L) when logistic;
    otherwise ``freq`` maps treatment values to marginal frequencies.
    """

    freq: dict | None = None
    coef: np.ndarray | None = None

    @classmethod
    def randomized(cls, treatment: np.ndarray) -> "TreatmentModel":
        vals, counts = np.unique(np.asarray(treatment), return_counts=True)
        return cls(freq={int(v): c / counts.sum() for v, c in zip(vals, counts)})

    @classmethod
    def known(cls, freq: dict) -> "TreatmentModel":
        return cls(freq={int(k): float(v) for k, v in freq.items()})

    @classmethod
    def logistic(cls, x: np.ndarray, treatment: np.ndarray, max_iter: int = 100, tol: float = 1e-10) -> "TreatmentModel":
        a = np.asarray(treatment)
        if not set(np.unique(a)) <= {0, 1}:
            raise ValueError("logistic treatment model needs binary treatment coded 0/1")
        X = np.column_stack([np.ones(len(a)), np.atleast_2d(x).reshape(len(a), -1)])
        beta = np.zeros(X.shape[1])

        def nll(b):
            eta = X @ b
            return float(np.sum(np.logaddexp(0, eta) - a * eta))

        cur = nll(beta)
        for _ in range(max_iter):
            p = 1 / (1 + np.exp(-(X @ beta)))
            grad = X.T @ (p - a)
            H = X.T @ (X * (p * (1 - p))[:, None]) + 1e-10 * np.eye(X.shape[1])
            step = np.linalg.solve(H, grad)
            t = 1.0
            while t > 1e-8:
                cand = nll(beta - t * step)
                if cand <= cur:
                    break
                t /= 2
            beta = beta - t * step
            new = nll(beta)
            done = abs(cur - new) <= tol * (1 + abs(new)) or np.max(np.abs(t * step)) < 1e-10
            cur = new
            if done:
                break
        return cls(coef=beta)

    def prob(self, a: np.ndarray, x: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        if self.freq is not None:
            return np.array([self.freq.get(int(v), 0.0) for v in a.ravel()]).reshape(a.shape)
        X = np.column_stack([np.ones(len(a)), np.atleast_2d(x).reshape(len(a), -1)])
        p1 = 1 / (1 + np.exp(-(X @ self.coef)))
        return np.where(a == 1, p1, 1 - p1)


@dataclass
class NuisanceSet:
    recurrent: IntensityFit
    death: IntensityFit
    censor: IntensityFit | None
    treatment: TreatmentModel
    intervention: Intervention


# --------------------------------------------------------------------------- weights


@dataclass(frozen=True)
class Clever:
    """Clever weights on the observed at-risk set, shape (n, K)."""

    weight: np.ndarray
    raw: np.ndarray
    censor_survival: np.ndarray
    truncated: int
    cap: float


def clever_weights(nuis: NuisanceSet, proc: GridProcesses, cap: float = 50.0) -> Clever:
    """w_ik = pi*(A_i|L_i) / (pi(A_i|L_i) prod_{l<k}(1 - dLambda^c_il)), truncated at ``cap``."""
    n, K = proc.at_risk.shape
    num = np.zeros(n)
    for a in nuis.intervention.support:
        m = proc.treatment == a
        num[m] = nuis.intervention.prob(a, proc.covariates[m])
    pi = nuis.treatment.prob(proc.treatment, proc.covariates)
    if nuis.censor is None:
        c = np.zeros((n, K))
    else:
        c = np.clip(observed_increments(nuis.censor, proc), 0.0, 1.0)
    surv = np.cumprod(np.hstack([np.ones((n, 1)), 1.0 - c[:, :-1]]), axis=1)
    need = proc.at_risk & (num[:, None] > 0)
    denom = pi[:, None] * surv
    bad = need & (denom <= 0)
    if bad.any():
        i = int(np.argwhere(bad)[0, 0])
        raise PositivityError("zero treatment or censoring-survival probability where the intervention needs weight", proc.ids[i] if proc.ids else str(i))
    raw = np.zeros((n, K))
    np.divide(num[:, None] * np.ones((1, K)), denom, out=raw, where=need)
    over = need & (raw > cap)
    w = np.where(over, cap, raw)
    if over.any():
        log.warning("truncated %d of %d clever weights at %g", int(over.sum()), int(need.sum()), cap)
    return Clever(w, raw, surv, int(over.sum()), cap)


def clever_weight(nuis: NuisanceSet, proc: GridProcesses, i: int, k: int, cap: float = 50.0) -> float:
    """Clever weight of subject ``i`` at 1-based grid time ``k``."""
    if not proc.at_risk[i, k - 1]:
        raise ValueError("subject not at risk at this grid time")
    return float(clever_weights(nuis, proc, cap).weight[i, k - 1])


@dataclass(frozen=True)
class PositivityReport:
    max_weight: float
    quantiles: dict
    truncated: int
    truncated_fraction: float
    min_censor_survival: float
    min_treatment_prob: float
    violation: bool
    cap: float

    def to_json(self) -> dict:
        return asdict(self)


def positivity_report(nuis: NuisanceSet, proc: GridProcesses, cap: float = 50.0) -> PositivityReport:
    cw = clever_weights(nuis, proc, cap)
    need = proc.at_risk & (cw.raw > 0)
    vals = cw.raw[need]
    qs = {str(q): float(np.quantile(vals, q)) if vals.size else 0.0 for q in (0.5, 0.9, 0.99, 1.0)}
    pi = nuis.treatment.prob(proc.treatment, proc.covariates)
    rep = PositivityReport(
        max_weight=float(vals.max()) if vals.size else 0.0,
        quantiles=qs,
        truncated=cw.truncated,
        truncated_fraction=cw.truncated / max(1, vals.size),
        min_censor_survival=float(cw.censor_survival[need].min()) if vals.size else 1.0,
        min_treatment_prob=float(pi.min()) if pi.size else 1.0,
        violation=bool(np.any(vals > cap)),
        cap=cap,
    )
    log.info("positivity: max weight %.4g, truncated fraction %.4g", rep.max_weight, rep.truncated_fraction)
    return rep


# --------------------------------------------------------------------------- EIC


@dataclass(frozen=True)
class Evaluation:
    """Plug-in, influence curve and observed clever quantities for one set of increments."""

    psi: float
    conditional_mean: np.ndarray
    phi: np.ndarray
    term_d: np.ndarray
    term_y: np.ndarray
    gtable: GcompTable
    wh_d: np.ndarray
    wh_y: np.ndarray
    lam_d: np.ndarray
    lam_y: np.ndarray


def _observed(inc: IncrementTable, gt: GcompTable, proc: GridProcesses, J: int):
    """Observed-state increments and clever covariates, using each subject's own arm."""
    n, K = proc.at_risk.shape
    states = proc.states(J)
    lam_d, lam_y, hd, hy = (np.zeros((n, K)) for _ in range(4))
    for a in inc.arms:
        m = proc.treatment == a
        if not m.any():
            continue
        s = states[m] - 1
        lam_d[m] = np.take_along_axis(inc.d[a][m], s[:, :, None], axis=2)[:, :, 0]
        lam_y[m] = np.take_along_axis(inc.y[a][m], s[:, :, None], axis=2)[:, :, 0]
        hd[m], hy[m] = observed_clever_covariates(gt.Z[a][m], inc.y[a][m], states[m])
    return lam_d, lam_y, hd, hy


def evaluate(inc: IncrementTable, proc: GridProcesses, weights: np.ndarray, pistar: dict) -> Evaluation:
    """phi_i = sum_k w h^d (dN^d - dLambda^d) + w h^y (dN^y - dLambda^y) + E*[N^y(tau)|L_i] - psi."""
    gt = recursion(inc)
    psi, cond = plugin_psi(gt, pistar)
    lam_d, lam_y, hd, hy = _observed(inc, gt, proc, inc.J)
    rd = risk_set(proc, EventKind.DEATH)
    ry = risk_set(proc, EventKind.RECURRENT)
    wh_d = np.where(rd, weights * hd, 0.0)
    wh_y = np.where(ry, weights * hy, 0.0)
    term_d = np.sum(wh_d * (proc.death_jump - lam_d), axis=1)
    term_y = np.sum(wh_y * (proc.recurrent_jump - lam_y), axis=1)
    phi = term_d + term_y + cond - psi
    return Evaluation(psi, cond, phi, term_d, term_y, gt, wh_d, wh_y, lam_d, lam_y)


def eic(nuis: NuisanceSet, proc: GridProcesses, J: int | None = None, cap: float = 50.0) -> np.ndarray:
    """Per-subject efficient influence curve at the given (untargeted) nuisance fits."""
    inc, arms, J = _initial_increments(nuis, proc, J)
    cw = clever_weights(nuis, proc, cap)
    return evaluate(inc, proc, cw.weight, _pistar(nuis, proc, arms)).phi


# --------------------------------------------------------------------------- targeting


@dataclass(frozen=True)
class Fluctuation:
    epsilon: float
    flag: str | None = None


def _score(eps: float, wh: np.ndarray, dN: np.ndarray, lam: np.ndarray, delta: float) -> float:
    return float(np.sum(wh * (dN - np.minimum(np.exp(eps) * lam, 1 - delta))))


def solve_fluctuation(wh: np.ndarray, dN: np.ndarray, lam: np.ndarray, delta: float = INCREMENT_CLAMP) -> Fluctuation:
    """Solve sum wh (dN - min(e^eps lam, 1 - delta)) = 0 for eps.

    Closed form e^eps = sum(wh dN) / sum(wh lam) when the two sums share a
    sign, refined by Newton if the clamp binds; otherwise damped Newton.
    """
    m = wh != 0
    wh, dN, lam = wh[m], dN[m], lam[m]
    A = float(np.sum(wh * dN))
    B = float(np.sum(wh * lam))
    scale = float(np.sum(np.abs(wh) * (dN + lam))) + 1e-300
    if abs(A) <= 1e-13 * scale and abs(B) <= 1e-13 * scale:
        return Fluctuation(0.0, "degenerate")
    if abs(_score(0.0, wh, dN, lam, delta)) <= 1e-14 * max(scale, 1.0):
        return Fluctuation(0.0)
    eps = math.log(A / B) if A * B > 0 else 0.0
    if A * B > 0 and np.all(np.exp(eps) * lam <= 1 - delta):
        return Fluctuation(eps)

    def deriv(e):
        free = np.exp(e) * lam < 1 - delta
        return -float(np.sum(wh[free] * lam[free])) * math.exp(e)

    for _ in range(50):
        s = _score(eps, wh, dN, lam, delta)
        if abs(s) <= 1e-12 * max(scale, 1.0):
            return Fluctuation(eps)
        g = deriv(eps)
        if g == 0:
            break
        eps -= float(np.clip(s / g, -1.0, 1.0))
    # bracket search when Newton stalls
    s0 = _score(eps, wh, dN, lam, delta)
    for width in (1.0, 2.0, 5.0, 10.0, 20.0):
        lo, hi = eps - width, eps + width
        if _score(lo, wh, dN, lam, delta) * _score(hi, wh, dN, lam, delta) < 0:
            return Fluctuation(optimize.brentq(_score, lo, hi, args=(wh, dN, lam, delta), xtol=1e-14))
    log.warning("fluctuation equation has no root; residual score %.3g", s0)
    return Fluctuation(eps, "no_root")


def target_step(inc: IncrementTable, ev: Evaluation, proc: GridProcesses, kind: EventKind, delta: float = INCREMENT_CLAMP) -> tuple[IncrementTable, Fluctuation]:
    """One multiplicative update of the death or recurrent increments."""
    if kind is EventKind.DEATH:
        fl = solve_fluctuation(ev.wh_d.ravel(), proc.death_jump.ravel().astype(float), ev.lam_d.ravel(), delta)
        scale = lambda t: np.minimum(np.exp(fl.epsilon) * t, 1 - delta)  # noqa: E731
        return IncrementTable({a: scale(v) for a, v in inc.d.items()}, inc.y), fl
    if kind is EventKind.RECURRENT:
        fl = solve_fluctuation(ev.wh_y.ravel(), proc.recurrent_jump.ravel().astype(float), ev.lam_y.ravel(), delta)
        scale = lambda t: np.minimum(np.exp(fl.epsilon) * t, 1 - delta)  # noqa: E731
        return IncrementTable(inc.d, {a: scale(v) for a, v in inc.y.items()}), fl
    raise ValueError("only death and recurrent intensities are targeted")


class StopReason(str, enum.Enum):
    CRITERION = "Criterion"
    MAX_ITER = "MaxIter"


@dataclass
class TmleReport:
    psi_hat: float
    se: float
    ci95: tuple
    iterations: int
    pn_eic: float
    stopped_by: StopReason
    truncated_weights: int
    threshold: float = float("nan")
    initial_psi: float = float("nan")
    epsilons: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    eic: np.ndarray | None = field(default=None, repr=False)
    increments: IncrementTable | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "psi_hat": self.psi_hat,
            "se": self.se,
            "ci95": [self.ci95[0], self.ci95[1]],
            "iterations": self.iterations,
            "pn_eic": self.pn_eic,
            "stopped_by": self.stopped_by.value,
            "truncated_weights": self.truncated_weights,
        }


def _pistar(nuis: NuisanceSet, proc: GridProcesses, arms) -> dict:
    return {a: nuis.intervention.prob(a, proc.covariates) for a in arms}


def _initial_increments(nuis: NuisanceSet, proc: GridProcesses, J: int | None):
    if J is None:
        J = int(proc.count_before.max(initial=0)) + 1
    J = effective_cap(J, nuis.death, nuis.recurrent)
    arms = [a for a in nuis.intervention.support if np.any(nuis.intervention.prob(a, proc.covariates) > 0)]
    if not arms:
        raise ValueError("intervention puts no mass on any treatment value")
    inc = IncrementTable.from_fits(nuis.death, nuis.recurrent, proc.grid, proc.covariates, arms, J)
    return inc, arms, J


def report_from(ev: Evaluation, n: int, **kw) -> TmleReport:
    se = math.sqrt(float(np.mean(ev.phi**2)) / n)
    return TmleReport(
        psi_hat=ev.psi,
        se=se,
        ci95=(ev.psi - Z975 * se, ev.psi + Z975 * se),
        pn_eic=float(np.mean(ev.phi)),
        eic=ev.phi,
        **kw,
    )


def run_tmle(
    data: Sequence[SubjectPath] | GridProcesses,
    tau: float | None,
    nuis: NuisanceSet,
    max_iter: int = 20,
    weight_cap: float = 50.0,
    J: int | None = None,
) -> TmleReport:
    """Alternate death and recurrent-event updates until |P_n phi| <= sigma_n / (sqrt(n) log n)."""
    proc = data if isinstance(data, GridProcesses) else on_grid(data, build_grid(data, tau))
    n = proc.n
    inc, arms, J = _initial_increments(nuis, proc, J)
    cw = clever_weights(nuis, proc, weight_cap)
    pistar = _pistar(nuis, proc, arms)
    ev = evaluate(inc, proc, cw.weight, pistar)
    initial_psi = ev.psi
    sigma = math.sqrt(float(np.mean(ev.phi**2)))
    threshold = sigma / (math.sqrt(n) * math.log(n)) if n > 1 else math.inf
    eps_hist, flags = [], []
    it = 0
    while abs(float(np.mean(ev.phi))) > threshold and it < max_iter:
        inc, fd = target_step(inc, ev, proc, EventKind.DEATH)
        ev = evaluate(inc, proc, cw.weight, pistar)
        inc, fy = target_step(inc, ev, proc, EventKind.RECURRENT)
        ev = evaluate(inc, proc, cw.weight, pistar)
        eps_hist.append((fd.epsilon, fy.epsilon))
        flags.extend(f for f in (fd.flag, fy.flag) if f)
        it += 1
    stop = StopReason.CRITERION if abs(float(np.mean(ev.phi))) <= threshold else StopReason.MAX_ITER
    if stop is StopReason.MAX_ITER and max_iter > 0:
        log.warning("targeting stopped at max_iter=%d with |P_n phi| = %.3g > %.3g", max_iter, abs(np.mean(ev.phi)), threshold)
    return report_from(
        ev,
        n,
        iterations=it,
        stopped_by=stop,
        truncated_weights=cw.truncated,
        threshold=threshold,
        initial_psi=initial_psi,
        epsilons=eps_hist,
        flags=flags,
        increments=inc,
    )


def difference(r1: TmleReport, r0: TmleReport) -> dict:
    """psi^1 - psi^0 with the standard error from the per-subject EIC difference."""
    diff = r1.eic - r0.eic
    se = math.sqrt(float(np.mean(diff**2)) / diff.size)
    est = r1.psi_hat - r0.psi_hat
    return {"estimate": est, "se": se, "ci95": [est - Z975 * se, est + Z975 * se]}
