"""Monte Carlo replication studies comparing the estimators against a simulated truth."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..estimators import ESTIMATORS, TRUE_FORMS, EstimatorConfig, estimate, fit_nuisances, without_history
from ..event_data import build_grid, on_grid
from ..hal import HalConfig
from ..tmle import Intervention, StopReason
from .dgp import DgpSpec, TruePsi, simulate, true_psi

log = logging.getLogger(__name__)


def simulation_config(**changes) -> EstimatorConfig:
    """Estimator settings used for the replication studies.

    The working model is the parametric form without the past-event
    indicator, and HAL uses a reduced knot budget so that hundreds of
    replications fit on a single core.
    """
    base = EstimatorConfig(
        hal=HalConfig(n_time_knots=20, n_covariate_knots=10, n_interaction_knots=4),
        working_forms=without_history(TRUE_FORMS),
    )
    return EstimatorConfig.from_json({**base.to_json(), **changes})


@dataclass
class EstimatorRuns:
    """Per-replication output of one estimator; failed replications are kept out of the arrays."""

    name: str
    psi0: float
    rep: list = field(default_factory=list)
    psi_hat: list = field(default_factory=list)
    se: list = field(default_factory=list)
    covered: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    solved: list = field(default_factory=list)  # |P_n phi| <= threshold at exit
    truncated: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (rep, message)

    @property
    def R(self) -> int:
        return len(self.psi_hat)

    @property
    def bias(self) -> float:
        return float(np.mean(self.psi_hat) - self.psi0) if self.R else math.nan

    @property
    def sd(self) -> float:
        return float(np.std(self.psi_hat, ddof=1)) if self.R > 1 else math.nan

    @property
    def mse(self) -> float:
        return float(np.mean((np.asarray(self.psi_hat) - self.psi0) ** 2)) if self.R else math.nan

    @property
    def coverage(self) -> float:
        return float(np.mean(self.covered)) if self.R else math.nan

    @property
    def solved_fraction(self) -> float:
        return float(np.mean(self.solved)) if self.R else math.nan

    def summary(self) -> dict:
        return {
            "estimator": self.name,
            "replications": self.R,
            "failures": len(self.failures),
            "bias": self.bias,
            "sd": self.sd,
            "mse": self.mse,
            "coverage": self.coverage,
            "mean_se": float(np.mean(self.se)) if self.R else math.nan,
            "solved_fraction": self.solved_fraction,
        }


@dataclass
class ReplicationResult:
    spec: DgpSpec
    n: int
    reps: int
    seed: int
    truth: TruePsi
    config: EstimatorConfig
    runs: dict  # estimator name -> EstimatorRuns
    arm: int = 1
    seconds: float = 0.0

    def __getitem__(self, name: str) -> EstimatorRuns:
        return self.runs[name]

    def summary(self) -> list[dict]:
        return [r.summary() for r in self.runs.values()]

    def to_json(self, timing: bool = True) -> dict:
        """Full record; ``timing=False`` drops wall-clock fields so reruns are byte-identical."""
        runs = {}
        for name, r in self.runs.items():
            runs[name] = {k: getattr(r, k) for k in ("rep", "psi_hat", "se", "covered", "iterations", "solved", "truncated")}
            if timing:
                runs[name]["seconds"] = r.seconds
            runs[name]["failures"] = [list(f) for f in r.failures]
            runs[name]["summary"] = r.summary()
        return {
            "schema": "recurtmle.replication/1",
            "spec": self.spec.to_json(),
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "arm": self.arm,
            "truth": {"value": self.truth.value, "mc_se": self.truth.mc_se, "mc_size": self.truth.mc_size},
            "config": self.config.to_json(),
            "runs": runs,
            **({"seconds": self.seconds} if timing else {}),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReplicationResult":
        truth = TruePsi(**obj["truth"])
        runs = {}
        for name, d in obj["runs"].items():
            r = EstimatorRuns(name, truth.value)
            for k in ("rep", "psi_hat", "se", "covered", "iterations", "solved", "truncated"):
                setattr(r, k, list(d[k]))
            r.seconds = list(d.get("seconds", []))
            r.failures = [tuple(f) for f in d["failures"]]
            runs[name] = r
        return cls(
            DgpSpec.from_json(obj["spec"]),
            obj["n"],
            obj["reps"],
            obj["seed"],
            truth,
            EstimatorConfig.from_json(obj["config"]),
            runs,
            obj.get("arm", 1),
            obj.get("seconds", 0.0),
        )

    def write_csv(self, path) -> None:
        """One row per (estimator, successful replication)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["estimator", "rep", "psi_hat", "se", "covered", "iterations", "solved", "truncated"])
            for name, r in self.runs.items():
                for row in zip(r.rep, r.psi_hat, r.se, r.covered, r.iterations, r.solved, r.truncated):
                    w.writerow([name, *row])


def replication_seed(seed: int, rep: int) -> int:
    """Independent per-replication seed derived from the study seed."""
    return int(np.random.SeedSequence([seed, rep]).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def replicate_study(
    spec: DgpSpec,
    n: int,
    reps: int,
    estimators: Sequence[str],
    seed: int = 0,
    cfg: EstimatorConfig | None = None,
    truth: TruePsi | None = None,
    arm: int = 1,
    progress: Callable[[int, dict], None] | None = None,
) -> ReplicationResult:
    """Simulate ``reps`` datasets of size ``n`` and apply each estimator of psi under static ``arm``.

    A failure of one estimator on one replication is logged, counted and
    excluded from that estimator's aggregates.
    """
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimators {unknown}; choose from {ESTIMATORS}")
    cfg = simulation_config() if cfg is None else cfg
    truth = true_psi(spec, treatment=arm) if truth is None else truth
    runs = {e: EstimatorRuns(e, truth.value) for e in estimators}
    start = time.perf_counter()
    intervention = Intervention.static(arm)
    for rep in range(reps):
        paths = simulate(spec, n, replication_seed(seed, rep))
        proc = on_grid(paths, build_grid(paths, spec.tau))
        for name in estimators:
            r = runs[name]
            t0 = time.perf_counter()
            try:
                nuis = fit_nuisances(proc, name, intervention, cfg)
                rep_out = estimate(proc, name, intervention, cfg, nuis=nuis)
            except Exception as exc:  # recorded, never silent
                log.warning("replication %d, %s failed: %s", rep, name, exc)
                r.failures.append((rep, f"{type(exc).__name__}: {exc}"))
                continue
            lo, hi = rep_out.ci95
            r.rep.append(rep)
            r.psi_hat.append(rep_out.psi_hat)
            r.se.append(rep_out.se)
            r.covered.append(bool(lo <= truth.value <= hi))
            r.iterations.append(rep_out.iterations)
            r.solved.append(rep_out.stopped_by is StopReason.CRITERION)
            r.truncated.append(rep_out.truncated_weights)
            r.seconds.append(time.perf_counter() - t0)
        if progress is not None:
            progress(rep, {k: v.psi_hat[-1] if v.rep and v.rep[-1] == rep else None for k, v in runs.items()})
    return ReplicationResult(spec, n, reps, seed, truth, cfg, runs, arm, time.perf_counter() - start)


def save(result: ReplicationResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_json(), fh, indent=1)


def load(path) -> ReplicationResult:
    with open(path) as fh:
        return ReplicationResult.from_json(json.load(fh))
