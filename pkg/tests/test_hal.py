import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recurtmle.event_data import EventKind, EventRecord, PooledGrid, SubjectPath, build_grid, on_grid
from recurtmle.hal import (
    RATE_FLOOR,
    BasisSpec,
    HalConfig,
    HalFit,
    PoissonDesign,
    compress,
    expand_design,
    fit_hal,
    fit_penalized_poisson,
    kkt_residual,
    lambda_max,
    make_basis,
    quantile_knots,
    solve,
)
from recurtmle.hal.solver import objective, penalty_vector
from recurtmle.intensity import INCREMENT_CLAMP, increments
from recurtmle.sim.dgp import primary_spec, simulate
from recurtmle.sim.harness import simulation_config

R, D, C = EventKind.RECURRENT, EventKind.DEATH, EventKind.CENSOR
GRID = PooledGrid(np.array([0.5, 1.0]), 1.0)


def path(pid, events, admin_end=1.0, x=(0.0,), a=1):
    return SubjectPath(str(pid), x, a, tuple(EventRecord(t, k) for t, k in events), admin_end)


def intercept_basis(knots=()):
    return BasisSpec(("t", "l1", "a", "n_prev"), ((),) + tuple(((0, k),) for k in knots), history_var=3)


def random_design(rng, rows=60, cols=8):
    X = np.column_stack([np.ones(rows), rng.uniform(size=(rows, cols - 1)) < rng.uniform(0.2, 0.8, cols - 1)]).astype(float)
    E = rng.uniform(0.1, 1.0, rows)
    Y = rng.poisson(E * np.exp(X[:, 1:] @ rng.normal(0, 0.7, cols - 1) - 0.5)).astype(float)
    return X, E, Y


# --------------------------------------------------------------------------- design


def test_design_rows_for_one_death():
    design = expand_design([path(1, [(1.0, D)])], GRID, D)
    X = design.matrix(intercept_basis())
    assert X.tolist() == [[1.0], [1.0]]
    assert design.exposure.tolist() == [0.5, 0.5]
    assert design.events.tolist() == [0.0, 1.0]


def test_subject_censored_before_first_grid_time_contributes_nothing():
    design = expand_design([path(1, [(0.4, C)])], GRID, D)
    assert design.empty and design.rows == 0


def test_time_knot_indicator_is_inclusive():
    design = expand_design([path(1, [(1.0, D)])], GRID, D)
    assert design.matrix(intercept_basis([0.5]))[:, 1].tolist() == [1.0, 1.0]


def test_recurrent_design_excludes_death_time_and_tracks_history():
    design = expand_design([path(1, [(0.5, R), (1.0, D)])], GRID, R)
    assert design.rows == 1 and design.events.tolist() == [1.0]
    design = expand_design([path(1, [(0.5, R)])], GRID, R)
    assert design.z[:, -1].tolist() == [0.0, 1.0]


def test_compression_preserves_likelihood():
    rng = np.random.default_rng(0)
    paths = simulate(primary_spec(), 60, seed=4)
    proc = on_grid(paths, build_grid(paths, 1.2))
    design = expand_design(proc, None, R)
    cov = np.column_stack([proc.covariates, proc.treatment])
    basis = make_basis(("t", "l1", "l2", "l3", "a", "n_prev"), proc.grid.times, cov, HalConfig(n_time_knots=5, n_covariate_knots=3))
    small = compress(design, basis)
    assert small.rows < design.rows
    beta = rng.normal(0, 0.3, basis.size)
    loss = lambda d: float(np.sum(d.exposure * np.exp(d.matrix(basis) @ beta) - d.events * (d.matrix(basis) @ beta)))  # noqa: E731
    assert loss(small) == pytest.approx(loss(design), rel=1e-12)


def test_basis_invariants():
    with pytest.raises(ValueError):
        BasisSpec(("t",), (((0, np.inf),),))
    with pytest.raises(ValueError):
        BasisSpec(("t",), (((0, None),),))
    b = make_basis(("t", "l1", "a", "n_prev"), np.linspace(0.1, 1, 10), np.random.default_rng(1).uniform(size=(30, 2)), HalConfig(n_time_knots=4))
    assert b.terms[0] == () and np.all(np.diff(b.time_knots) > 0)
    assert max(len(t) for t in b.terms) == 2
    assert quantile_knots(np.array([3.0, 1.0, 2.0, 2.0]), 10).tolist() == [2.0, 3.0]


# --------------------------------------------------------------------------- solver


def test_kkt_on_random_designs():
    rng = np.random.default_rng(2)
    for _ in range(20):
        X, E, Y = random_design(rng)
        lam = lambda_max(X, E, Y, 20) * rng.uniform(0.05, 0.6)
        res = solve(X, E, Y, lam, 20, tol=1e-10)
        assert res.converged and res.monotone
        assert kkt_residual(X, E, Y, 20, res.beta, lam) <= 1e-6


def test_huge_penalty_gives_events_over_exposure():
    rng = np.random.default_rng(3)
    X, E, Y = random_design(rng)
    design = PoissonDesign(np.column_stack([np.zeros(len(E)), X[:, 1:]]), E, Y, np.arange(len(E)), len(E), R)
    basis = BasisSpec(("t", *[f"x{i}" for i in range(1, X.shape[1])]), ((),) + tuple(((i, 1.0),) for i in range(1, X.shape[1])))
    fit = fit_penalized_poisson(design, basis, penalty_path=np.array([1e6]), folds=1)
    assert not fit.coefficients[1:].any()
    assert np.exp(fit.coefficients[0]) == pytest.approx(Y.sum() / E.sum(), rel=1e-12)


def test_two_row_separable_example():
    design = PoissonDesign(np.array([[1.0, 0.0], [1.0, 1.0]]), np.ones(2), np.array([0.0, 1.0]), np.arange(2), 2, R)
    basis = BasisSpec(("t", "x"), ((), ((1, 1.0),)))
    fit = fit_penalized_poisson(design, basis, penalty_path=np.array([0.0]), folds=1)
    rates = fit.rate(design.z)
    assert rates[0] <= 1e-6
    assert rates[1] == pytest.approx(1.0, abs=1e-6)
    assert fit.rate(np.array([[1.0, 0.0]]))[0] >= RATE_FLOOR


def test_l1_norm_decreases_along_increasing_penalties():
    rng = np.random.default_rng(4)
    for _ in range(5):
        X, E, Y = random_design(rng)
        lm = lambda_max(X, E, Y, 20)
        norms = [np.abs(solve(X, E, Y, lm * f, 20, tol=1e-10).beta[1:]).sum() for f in (0.02, 0.05, 0.1, 0.3, 0.7)]
        assert np.all(np.diff(norms) <= 1e-8)


def test_solver_never_increases_objective():
    rng = np.random.default_rng(5)
    X, E, Y = random_design(rng, rows=100, cols=12)
    lam = lambda_max(X, E, Y, 30) * 0.1
    start = np.zeros(X.shape[1])
    res = solve(X, E, Y, lam, 30, beta0=start)
    pv = penalty_vector(X.shape[1], lam)
    assert res.monotone
    assert objective(X, E, Y, 30, res.beta, pv) <= objective(X, E, Y, 30, start, pv) + 1e-10


def test_all_zero_events_give_floored_intercept_fit():
    design = PoissonDesign(np.zeros((3, 2)), np.ones(3), np.zeros(3), np.arange(3), 3, D)
    fit = fit_penalized_poisson(design, BasisSpec(("t", "x"), ((), ((1, 1.0),))))
    assert np.all(fit.rate(design.z) <= 1e-12 * 1.0001)


def test_empty_design_rejected():
    design = expand_design([path(1, [(0.4, C)])], GRID, D)
    with pytest.raises(ValueError, match="empty"):
        fit_penalized_poisson(design, intercept_basis())


# --------------------------------------------------------------------------- increments


def hist_fit(beta_v, coeffs=None):
    basis = BasisSpec(("t", "l1", "a", "n_prev"), ((), ((3, 1.0),), ((0, 0.5),), ((1, 0.0),)), history_var=3)
    beta = np.array([0.0, beta_v, 0.0, 0.0]) if coeffs is None else np.asarray(coeffs, float)
    return HalFit(basis, beta, 0.0, R)


def test_zero_coefficients_give_interval_lengths():
    fit = hist_fit(0.0)
    np.testing.assert_allclose(increments(fit, GRID, 1, 1, [0.3]), GRID.widths)
    unit = PooledGrid(np.array([1.0, 2.0, 3.0]), 3.0)
    np.testing.assert_allclose(increments(fit, unit, 2, 0, [0.3]), 1 - INCREMENT_CLAMP)


def test_history_indicator_scales_by_exp_beta():
    fit = hist_fit(0.4)
    j1, j2 = increments(fit, GRID, 1, 1, [0.2]), increments(fit, GRID, 2, 1, [0.2])
    np.testing.assert_allclose(j2 / j1, np.exp(0.4), rtol=1e-14)
    assert fit.history_cap == 2
    tab = fit.table(GRID, np.array([[0.2]]), np.array([1]), 5)
    # states beyond the last history knot share one cell
    for j in range(2, 5):
        np.testing.assert_array_equal(tab[..., j], tab[..., 1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.integers(0, 3), st.floats(0.01, 0.5))
def test_increments_monotone_in_active_coefficient(coeffs, which, bump):
    fit = hist_fit(0.0, coeffs)
    up = np.array(coeffs)
    up[which] += bump
    base = fit.table(GRID, np.array([[0.2]]), np.array([1]), 2)
    new = HalFit(fit.basis, up, 0.0, R).table(GRID, np.array([[0.2]]), np.array([1]), 2)
    assert np.all(new >= base - 1e-15)


def test_halfit_json_round_trip():
    fit = hist_fit(0.0, [0.1, -0.2, 0.0, 0.7])
    back = HalFit.from_json(json.dumps(fit.to_json()))
    assert back.basis == fit.basis and back.kind is fit.kind and back.penalty == fit.penalty
    np.testing.assert_array_equal(back.coefficients, fit.coefficients)
    assert fit.to_json()["coefficients"] == {"index": [0, 1, 3], "value": [0.1, -0.2, 0.7]}
    assert HalConfig.from_json(HalConfig().to_json()) == HalConfig()
    with pytest.raises(ValueError, match="unknown"):
        HalConfig.from_json({"bogus": 1})


def test_cv_selected_model_beats_intercept_on_simulated_data():
    paths = simulate(primary_spec(), 200, seed=31)
    proc = on_grid(paths, build_grid(paths, 1.2))
    fit = fit_hal(proc, R, simulation_config().hal)
    assert fit.cv.selected_loss <= fit.cv.intercept_loss
    assert fit.cv.selected is not None
    assert fit.l1_norm > 0
