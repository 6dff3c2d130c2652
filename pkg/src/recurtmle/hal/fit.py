"""Cross-validated penalized Poisson fits and the resulting intensity model."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..event_data import EventKind, GridProcesses, PooledGrid
from ..intensity import INCREMENT_CLAMP
from .basis import BasisSpec, HalConfig, make_basis, variable_names
from .design import PoissonDesign, compress, expand_design
from .solver import lambda_max, null_beta, solve

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-12


class NonConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class CvSummary:
    lambdas: list
    cv_loss: list
    intercept_loss: float
    selected: int | None  # None: the intercept-only model won

    @property
    def selected_loss(self) -> float:
        return self.intercept_loss if self.selected is None else self.cv_loss[self.selected]


@dataclass(frozen=True)
class HalFit:
    """Fitted log-linear intensity exp(f_beta(t, v, x)) on an indicator basis."""

    basis: BasisSpec
    coefficients: np.ndarray
    penalty: float
    kind: EventKind
    converged: bool = True
    cv: CvSummary | None = field(default=None, compare=False)

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.coefficients[1:])))

    @property
    def history_cap(self) -> int | None:
        nz = [t for t, b in zip(self.basis.terms, self.coefficients) if b != 0]
        hv = self.basis.history_var
        if hv is None:
            return 1
        used = [(v, k) for t in nz for v, k in t if v == hv]
        if not used:
            return 1
        if any(k is None or k != round(k) for _, k in used):
            return None
        return int(max(k for _, k in used)) + 1

    def linear_predictor(self, z: np.ndarray) -> np.ndarray:
        return self.basis.evaluate(z) @ self.coefficients

    def rate(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(np.exp(np.minimum(self.linear_predictor(z), 700.0)), RATE_FLOOR)

    def table(self, grid: PooledGrid, x: np.ndarray, a: np.ndarray, J: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=float), (n,))
        cap = self.history_cap
        Je = J if cap is None else min(J, cap)
        tk = self.basis.time_knots
        cell = np.searchsorted(tk, grid.times, side="right")
        cells, pos = np.unique(cell, return_inverse=True)
        rep = np.where(cells == 0, (tk[0] - 1.0) if tk.size else grid.times[0], tk[np.maximum(cells - 1, 0)] if tk.size else 0.0)
        C = cells.size
        cols = [np.repeat(np.tile(rep, n), Je)]
        cols.append(np.repeat(np.repeat(x, C, axis=0), Je, axis=0))
        cols.append(np.repeat(np.repeat(a, C), Je))
        if self.basis.history_var is not None:
            cols.append(np.tile(np.arange(Je, dtype=float), n * C))
        z = np.column_stack([c if c.ndim == 2 else c[:, None] for c in cols])
        r = self.rate(z).reshape(n, C, Je)
        inc = r[:, pos, :] * grid.widths[None, :, None]
        if Je < J:
            inc = np.concatenate([inc, np.repeat(inc[:, :, -1:], J - Je, axis=2)], axis=2)
        return np.clip(inc, 0.0, 1.0 - INCREMENT_CLAMP)

    def to_json(self) -> dict:
        nz = np.flatnonzero(self.coefficients)
        return {
            "schema": "recurtmle.halfit/1",
            "kind": self.kind.value,
            "penalty": self.penalty,
            "converged": self.converged,
            "basis": self.basis.to_json(),
            "n_terms": self.basis.size,
            "coefficients": {"index": nz.tolist(), "value": self.coefficients[nz].tolist()},
        }

    @classmethod
    def from_json(cls, obj: dict | str) -> "HalFit":
        if isinstance(obj, str):
            obj = json.loads(obj)
        basis = BasisSpec.from_json(obj["basis"])
        beta = np.zeros(basis.size)
        beta[np.asarray(obj["coefficients"]["index"], dtype=int)] = obj["coefficients"]["value"]
        return cls(basis, beta, float(obj["penalty"]), EventKind(obj["kind"]), bool(obj.get("converged", True)))


def _fold_ids(n_subjects: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_subjects)
    ids = np.empty(n_subjects, dtype=np.int64)
    ids[perm] = np.arange(n_subjects) % folds
    return ids


def _heldout_loss(X, E, Y, beta) -> float:
    eta = np.minimum(X @ beta, 700.0)
    return float(np.sum(E * np.exp(eta) - Y * eta))


def default_path(X, E, Y, n_subjects, n: int = 50, ratio: float = 1e-4) -> np.ndarray:
    lm = lambda_max(X, E, Y, n_subjects)
    if lm <= 0:
        return np.array([0.0])
    return lm * np.logspace(0, math.log10(ratio), n)


def fit_penalized_poisson(
    design: PoissonDesign,
    basis: BasisSpec,
    penalty_path: np.ndarray | None = None,
    folds: int = 5,
    seed: int = 0,
    patience: int = 8,
    tol: float = 1e-7,
    n_lambdas: int = 50,
    lambda_min_ratio: float = 1e-4,
) -> HalFit:
    """Penalized Poisson fit with the penalty chosen by subject-grouped cross-validation.

    With a single penalty or ``folds <= 1`` no cross-validation is done and
    the fit at the last penalty of the path is returned.
    """
    if design.empty:
        raise ValueError("empty design")
    X = np.asfortranarray(design.matrix(basis))
    E, Y, N = design.exposure, design.events, design.n_subjects
    p = X.shape[1]
    if Y.sum() == 0:
        log.warning("no %s events: intercept-only fit at the rate floor", design.kind.value)
        return HalFit(basis, null_beta(E, Y, p), math.inf, design.kind)
    path = default_path(X, E, Y, N, n_lambdas, lambda_min_ratio) if penalty_path is None else np.asarray(penalty_path, dtype=float)
    if np.any(np.diff(path) > 0) or np.any(path < 0):
        raise ValueError("penalties must be non-negative and decreasing")

    def run_path(Xs, Es, Ys, Ns, lambdas):
        beta = null_beta(Es, Ys, p)
        for lam in lambdas:
            res = solve(Xs, Es, Ys, lam, Ns, beta0=beta, tol=tol)
            beta = res.beta
            yield lam, res

    if folds <= 1 or path.size == 1:
        res = None
        for _, res in run_path(X, E, Y, N, path):
            pass
        if not res.converged:
            log.warning("solver did not converge; last coefficient change %.3g", res.last_change)
        return HalFit(basis, res.beta, float(path[-1]), design.kind, res.converged)

    fold = _fold_ids(N, folds, seed)[design.subject]
    parts = []
    for f in range(folds):
        tr, te = fold != f, fold == f
        n_tr = int(np.unique(design.subject[tr]).size)
        parts.append((np.asfortranarray(X[tr]), E[tr], Y[tr], max(n_tr, 1), X[te], E[te], Y[te]))
    intercept_loss = 0.0
    for Xtr, Etr, Ytr, ntr, Xte, Ete, Yte in parts:
        intercept_loss += _heldout_loss(Xte, Ete, Yte, null_beta(Etr, Ytr, p))
    intercept_loss /= N
    gens = [run_path(Xtr, Etr, Ytr, ntr, path) for Xtr, Etr, Ytr, ntr, *_ in parts]
    losses: list[float] = []
    best, worse = math.inf, 0
    for _ in path:
        tot = 0.0
        for g, (_, _, _, _, Xte, Ete, Yte) in zip(gens, parts):
            _, res = next(g)
            tot += _heldout_loss(Xte, Ete, Yte, res.beta)
        loss = tot / N
        losses.append(loss)
        if not losses[:-1] or loss < best - 1e-12 * abs(best):
            best, worse = loss, 0
        else:
            worse += 1
            if worse >= patience:
                break
    k = int(np.argmin(losses))
    cv = CvSummary(path[: len(losses)].tolist(), losses, intercept_loss, k if losses[k] < intercept_loss else None)
    if cv.selected is None:
        return HalFit(basis, null_beta(E, Y, p), math.inf, design.kind, True, cv)
    res = None
    for _, res in run_path(X, E, Y, N, path[: k + 1]):
        pass
    if not res.converged:
        log.warning("solver did not converge at the selected penalty; last change %.3g", res.last_change)
    return HalFit(basis, res.beta, float(path[k]), design.kind, res.converged, cv)


def fit_hal(
    proc: GridProcesses,
    kind: EventKind,
    config: HalConfig = HalConfig(),
    basis: BasisSpec | None = None,
    covariate_names=None,
    history: bool = True,
    penalty_path=None,
) -> HalFit:
    """Build the design and basis for ``kind`` on a pooled grid and fit it by cross-validated HAL."""
    design = expand_design(proc, None, kind)
    if basis is None:
        names = covariate_names or [f"l{i + 1}" for i in range(proc.covariates.shape[1])]
        cov = np.column_stack([proc.covariates, proc.treatment.astype(float)])
        basis = make_basis(variable_names(names, history), proc.grid.times, cov, config, history=history)
    if basis.history_var is None:
        design = PoissonDesign(design.z[:, :-1], design.exposure, design.events, design.subject, design.n_subjects, kind)
    design = compress(design, basis)
    return fit_penalized_poisson(
        design,
        basis,
        penalty_path=penalty_path,
        folds=config.n_folds,
        seed=config.seed,
        patience=config.patience,
        tol=config.tol,
        n_lambdas=config.n_lambdas,
        lambda_min_ratio=config.lambda_min_ratio,
    )
