"""L1-penalized Poisson regression with an unpenalized intercept column.

Minimizes

    F(beta) = (1/N) sum_i [E_i exp(x_i beta) - Y_i x_i beta] + sum_j lam_j |beta_j|

where ``N`` is the number of subjects (rows may be aggregated). The outer
loop is a proximal Newton step: a quadratic model of the smooth part is
minimized by cyclic coordinate descent with soft-thresholding over an active
set, followed by a KKT sweep of the remaining coordinates. An exact Newton
solve on the resulting support with signs held fixed polishes the step. An
Armijo backtracking search on F guarantees monotone decrease.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

COEF_BOX = 30.0
ETA_MAX = 700.0


@njit(cache=True)
def _smooth(eta, E, Y, N):
    s = 0.0
    for i in range(eta.size):
        e = eta[i] if eta[i] < ETA_MAX else ETA_MAX
        s += E[i] * math.exp(e) - Y[i] * eta[i]
    return s / N


@njit(cache=True)
def _penalty(beta, lam):
    s = 0.0
    for j in range(beta.size):
        s += lam[j] * abs(beta[j])
    return s


@njit(cache=True)
def _col_dot(X, j, v):
    s = 0.0
    for i in range(X.shape[0]):
        s += X[i, j] * v[i]
    return s


@njit(cache=True)
def _soft(z, g):
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


@njit(cache=True)
def _quad_value(g, w, u, beta, bnew, lam):
    """Model change g.delta + 0.5 delta' H delta + penalty change, with u = X delta."""
    lin = 0.0
    for j in range(beta.size):
        lin += g[j] * (bnew[j] - beta[j]) + lam[j] * (abs(bnew[j]) - abs(beta[j]))
    quad = 0.0
    for i in range(u.size):
        quad += w[i] * u[i] * u[i]
    return lin + 0.5 * quad


@njit(cache=True)
def _solve_one(X, E, Y, N, beta, lam, box, tol, max_outer, max_sweeps, polish, inner_cap):
    """Returns (beta, n_outer, sweeps, converged, monotone, last_change)."""
    m, p = X.shape
    beta = beta.copy()
    eta = np.zeros(m)
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(m):
                eta[i] += X[i, j] * beta[j]
    F = _smooth(eta, E, Y, N) + _penalty(beta, lam)
    sweeps = 0
    converged = False
    monotone = True
    last_change = np.inf
    g = np.zeros(p)
    hdiag = np.zeros(p)
    w = np.zeros(m)
    r = np.zeros(m)
    n_outer = 0
    for outer in range(max_outer):
        n_outer = outer + 1
        for i in range(m):
            e = eta[i] if eta[i] < ETA_MAX else ETA_MAX
            mu = E[i] * math.exp(e)
            w[i] = mu / N
            r[i] = (mu - Y[i]) / N
        for j in range(p):
            gj = 0.0
            hj = 0.0
            for i in range(m):
                x = X[i, j]
                if x != 0.0:
                    gj += x * r[i]
                    hj += x * x * w[i]
            g[j] = gj
            hdiag[j] = hj
        bnew = beta.copy()
        u = np.zeros(m)
        wu = np.zeros(m)
        active = np.zeros(p, dtype=np.bool_)
        for j in range(p):
            active[j] = beta[j] != 0.0 or lam[j] == 0.0 or abs(g[j]) > lam[j]
        while True:
            for sweep in range(inner_cap):
                sweeps += 1
                maxchg = 0.0
                for j in range(p):
                    if not active[j] or hdiag[j] <= 0.0:
                        continue
                    gj = g[j] + _col_dot(X, j, wu)
                    z = bnew[j] - gj / hdiag[j]
                    new = _soft(z, lam[j] / hdiag[j])
                    if new > box:
                        new = box
                    elif new < -box:
                        new = -box
                    chg = new - bnew[j]
                    if chg != 0.0:
                        for i in range(m):
                            xc = X[i, j] * chg
                            u[i] += xc
                            wu[i] += w[i] * xc
                        bnew[j] = new
                        if abs(chg) > maxchg:
                            maxchg = abs(chg)
                if maxchg < tol * 0.1:
                    break
            added = False
            for j in range(p):
                if active[j] or hdiag[j] <= 0.0:
                    continue
                gj = g[j] + _col_dot(X, j, wu)
                if abs(gj) > lam[j] * (1.0 + 1e-12) + 1e-15:
                    active[j] = True
                    added = True
            if not added:
                break
        if polish:
            # exact minimizer of the quadratic model on the support, signs fixed
            S = np.zeros(p, dtype=np.bool_)
            ns = 0
            for j in range(p):
                if (bnew[j] != 0.0 or lam[j] == 0.0) and hdiag[j] > 0.0:
                    S[j] = True
                    ns += 1
            if 0 < ns <= 400:
                idx = np.empty(ns, dtype=np.int64)
                c = 0
                for j in range(p):
                    if S[j]:
                        idx[c] = j
                        c += 1
                u_off = np.zeros(m)
                for j in range(p):
                    if not S[j] and beta[j] != 0.0:
                        for i in range(m):
                            u_off[i] -= X[i, j] * beta[j]
                w_off = w * u_off
                H = np.zeros((ns, ns))
                rhs = np.zeros(ns)
                for a in range(ns):
                    ja = idx[a]
                    sgn = 0.0
                    if lam[ja] > 0.0:
                        sgn = 1.0 if bnew[ja] > 0 else -1.0
                    rhs[a] = -(g[ja] + lam[ja] * sgn + _col_dot(X, ja, w_off))
                    for b in range(a, ns):
                        jb = idx[b]
                        s = 0.0
                        for i in range(m):
                            s += X[i, ja] * X[i, jb] * w[i]
                        H[a, b] = s
                        H[b, a] = s
                for a in range(ns):
                    H[a, a] += 1e-12 * (1.0 + H[a, a])
                delta = np.linalg.solve(H, rhs)
                cand = beta.copy()
                ok = True
                for j in range(p):
                    if not S[j]:
                        cand[j] = 0.0
                for a in range(ns):
                    ja = idx[a]
                    v = beta[ja] + delta[a]
                    if lam[ja] > 0.0 and (v > 0) != (bnew[ja] > 0):
                        ok = False
                    if abs(v) > box:
                        ok = False
                    cand[ja] = v
                if ok:
                    u_c = u_off.copy()
                    for a in range(ns):
                        ja = idx[a]
                        d = cand[ja] - beta[ja]
                        for i in range(m):
                            u_c[i] += X[i, ja] * d
                    if _quad_value(g, w, u_c, beta, cand, lam) <= _quad_value(g, w, u, beta, bnew, lam):
                        bnew = cand
                        u = u_c
        # Armijo backtracking on the true objective
        dlt = 0.0
        for j in range(p):
            dlt += g[j] * (bnew[j] - beta[j]) + lam[j] * (abs(bnew[j]) - abs(beta[j]))
        t = 1.0
        accepted = False
        F_t = F
        for _ in range(60):
            eta_t = eta + t * u
            b_t = beta + t * (bnew - beta)
            F_t = _smooth(eta_t, E, Y, N) + _penalty(b_t, lam)
            if F_t <= F + 1e-4 * t * min(dlt, 0.0) + 1e-14 * (1.0 + abs(F)):
                accepted = True
                break
            t *= 0.5
        step = 0.0
        for j in range(p):
            step = max(step, abs(t * (bnew[j] - beta[j])))
        if not accepted:
            last_change = step
            break
        if F_t > F + 1e-10 * (1.0 + abs(F)):
            monotone = False
        beta = beta + t * (bnew - beta)
        eta = eta + t * u
        F = F_t
        last_change = step
        if step < tol:
            converged = True
            break
        if sweeps >= max_sweeps:
            break
    return beta, n_outer, sweeps, converged, monotone, last_change


@dataclass(frozen=True)
class SolveResult:
    beta: np.ndarray
    converged: bool
    outer_iterations: int
    sweeps: int
    last_change: float
    monotone: bool


def penalty_vector(p: int, lam: float, intercept: int | None = 0) -> np.ndarray:
    v = np.full(p, float(lam))
    if intercept is not None:
        v[intercept] = 0.0
    return v


def objective(X, E, Y, N, beta, lam_vec) -> float:
    eta = np.minimum(X @ beta, ETA_MAX)
    return float(np.sum(E * np.exp(eta) - Y * (X @ beta)) / N + np.sum(lam_vec * np.abs(beta)))


def solve(
    X: np.ndarray,
    E: np.ndarray,
    Y: np.ndarray,
    lam: float,
    n_subjects: float,
    beta0: np.ndarray | None = None,
    tol: float = 1e-7,
    max_outer: int = 500,
    max_sweeps: int = 10_000,
    box: float = COEF_BOX,
    polish: bool = True,
    inner_cap: int = 20,
) -> SolveResult:
    """Penalized Poisson fit at one penalty; column 0 is the unpenalized intercept."""
    X = np.asfortranarray(X, dtype=np.float64)
    p = X.shape[1]
    beta0 = null_beta(E, Y, p) if beta0 is None else np.asarray(beta0, dtype=np.float64)
    lam_vec = penalty_vector(p, lam)
    beta, n_outer, sweeps, conv, mono, last = _solve_one(
        X, np.asarray(E, float), np.asarray(Y, float), float(n_subjects), beta0, lam_vec, box, tol, max_outer, max_sweeps, polish, inner_cap
    )
    return SolveResult(beta, bool(conv), int(n_outer), int(sweeps), float(last), bool(mono))


def null_beta(E: np.ndarray, Y: np.ndarray, p: int, box: float = COEF_BOX) -> np.ndarray:
    """Intercept-only MLE log(sum Y / sum E), floored at -box when there are no events."""
    b = np.zeros(p)
    tot_y, tot_e = float(np.sum(Y)), float(np.sum(E))
    b[0] = max(math.log(tot_y / tot_e), -box) if tot_y > 0 else -box
    return b


def lambda_max(X: np.ndarray, E: np.ndarray, Y: np.ndarray, n_subjects: float) -> float:
    """Smallest penalty at which every non-intercept coefficient is zero."""
    b0 = null_beta(E, Y, X.shape[1])[0]
    score = X[:, 1:].T @ (Y - E * math.exp(b0)) / n_subjects
    return float(np.max(np.abs(score))) if score.size else 0.0


def kkt_residual(X, E, Y, n_subjects, beta, lam) -> float:
    """Largest violation of the lasso subgradient conditions (intercept unpenalized)."""
    score = X.T @ (Y - E * np.exp(np.minimum(X @ beta, ETA_MAX))) / n_subjects
    res = abs(score[0])
    pen = score[1:]
    b = beta[1:]
    active = b != 0
    res = max(res, float(np.max(np.abs(pen[active] - lam * np.sign(b[active])), initial=0.0)))
    res = max(res, float(np.max(np.abs(pen[~active]) - lam, initial=0.0)))
    return res
