import io
import math

import numpy as np
import pytest
from scipy import integrate

from recurtmle.event_data import EventKind, write_csv
from recurtmle.sim import harness
from recurtmle.sim.dgp import DgpSpec, TruePsi, independent_censoring_spec, primary_spec, simulate, true_psi
from recurtmle.sim.harness import EstimatorRuns, load, replicate_study, replication_seed, save

NO_EVENTS = {"y": -1e3, "d": -1e3, "c": -1e3}
TRUTH = TruePsi(1.98, 0.0, 1)


def test_vanishing_intensities_give_no_events():
    paths = simulate(primary_spec().with_(alpha=NO_EVENTS), 100, seed=1)
    assert all(not p.records for p in paths)
    assert all(p.count(1.2) == 0 and p.end_time == 1.2 for p in paths)


def test_simulate_is_deterministic():
    spec = primary_spec()
    a, b = simulate(spec, 80, seed=7), simulate(spec, 80, seed=7)
    assert a == b
    out = []
    for paths in (a, b):
        buf = io.StringIO()
        write_csv(paths, buf, ["l1", "l2", "l3"])
        out.append(buf.getvalue())
    assert out[0] == out[1]
    assert simulate(spec, 80, seed=8) != a


def test_censoring_off_produces_no_censor_records():
    paths = simulate(primary_spec(), 500, seed=2, censoring=False)
    assert not any(r.kind is EventKind.CENSOR for p in paths for r in p.records)
    assert any(r.kind is EventKind.CENSOR for p in simulate(primary_spec(), 500, seed=2) for r in p.records)


def test_forced_treatment():
    assert {p.treatment for p in simulate(primary_spec(), 50, seed=3, treatment=0)} == {0}


def history_free_mean(spec: DgpSpec, a: int = 1) -> float:
    """int_0^tau E[S^d(t | A, L1) lambda^y(t | A, L1)] dt by quadrature over L1 ~ U(-1, 1)."""

    def mult(x, l1):
        g = l1**2 if (x == "y" and spec.quadratic) else l1
        return math.exp(spec.alpha[x] + spec.beta_A[x] * a + spec.beta_L1[x] * g)

    def cum(x, t):
        return (t / spec.scale[x]) ** spec.shape[x]

    def rate(x, t):
        k, s = spec.shape[x], spec.scale[x]
        return k / s * (t / s) ** (k - 1)

    def inner(l1):
        f = lambda t: math.exp(-mult("d", l1) * cum("d", t)) * mult("y", l1) * rate("y", t)  # noqa: E731
        return integrate.quad(f, 0, spec.tau, epsabs=1e-12)[0]

    return integrate.quad(inner, -1, 1, epsabs=1e-12)[0] / 2


def test_history_free_truth_matches_quadrature():
    spec = primary_spec().with_(beta_N={"y": 0.0, "d": 0.0})
    mc = true_psi(spec, treatment=1, mc_size=200_000, seed=5)
    assert abs(mc.value - history_free_mean(spec)) <= 4 * mc.mc_se


def test_true_psi_properties():
    zero = true_psi(primary_spec().with_(alpha=NO_EVENTS), mc_size=100_000)
    assert zero.value == 0.0 and zero.mc_se == 0.0
    base = true_psi(primary_spec(), mc_size=100_000, seed=3)
    other = true_psi(primary_spec().with_(alpha={"c": 2.0}, beta_N={"c": 0.0}, beta_L1={"c": 0.0}), mc_size=100_000, seed=3)
    assert base.value == other.value
    # se shrinks as 1/sqrt(draws); at 10^6 draws it is below 0.01
    assert base.mc_se / math.sqrt(10) < 0.01


def test_spec_validation_and_json():
    with pytest.raises(ValueError):
        DgpSpec(shape={"y": 1.0, "d": 0.0, "c": 1.0})
    with pytest.raises(ValueError):
        DgpSpec(tau=0.0)
    with pytest.raises(ValueError, match="unknown"):
        DgpSpec.from_json({"bogus": 1})
    spec = independent_censoring_spec()
    assert DgpSpec.from_json(spec.to_json()) == spec
    assert spec.beta_N["c"] == 0.0 and spec.beta_L1["d"] == 0.0 and spec.beta_N["y"] == 2.1


def test_replication_seeds_are_distinct_and_stable():
    seeds = [replication_seed(5, r) for r in range(100)]
    assert len(set(seeds)) == 100 and seeds == [replication_seed(5, r) for r in range(100)]


# --------------------------------------------------------------------------- harness


def test_zero_replications_give_empty_result():
    res = replicate_study(primary_spec(), 50, 0, ["unadjusted"], truth=TRUTH)
    assert res["unadjusted"].R == 0 and math.isnan(res["unadjusted"].bias)


def test_mse_identity():
    rng = np.random.default_rng(0)
    r = EstimatorRuns("x", 1.5, psi_hat=list(rng.normal(1.6, 0.3, 37)))
    assert r.mse == pytest.approx(r.bias**2 + r.sd**2 * (r.R - 1) / r.R, rel=1e-12)


def test_failures_are_counted_not_hidden(monkeypatch):
    real = harness.estimate
    calls = {"n": 0}

    def flaky(proc, name, iv, cfg, nuis=None):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("boom")
        return real(proc, name, iv, cfg, nuis=nuis)

    monkeypatch.setattr(harness, "estimate", flaky)
    res = replicate_study(primary_spec(), 80, 3, ["unadjusted"], truth=TRUTH)
    runs = res["unadjusted"]
    assert runs.R == 2 and runs.rep == [0, 2]
    assert runs.failures == [(1, "RuntimeError: boom")]
    assert res.summary()[0]["failures"] == 1


def test_small_study_round_trip(tmp_path):
    res = replicate_study(primary_spec(), 120, 3, ["unadjusted", "tmle_oracle_form"], seed=9, truth=TRUTH)
    for runs in res.runs.values():
        assert runs.R == 3 and 0 <= runs.coverage <= 1
    save(res, tmp_path / "r.json")
    back = load(tmp_path / "r.json")
    assert back.to_json() == res.to_json()
    res.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 1 + 6 and lines[0].startswith("estimator,rep,psi_hat")
    again = replicate_study(primary_spec(), 120, 3, ["unadjusted", "tmle_oracle_form"], seed=9, truth=TRUTH)
    assert again.to_json(timing=False) == res.to_json(timing=False)


def test_unknown_estimator_rejected():
    with pytest.raises(ValueError, match="unknown estimators"):
        replicate_study(primary_spec(), 10, 1, ["nope"], truth=TRUTH)
