"""Named replication studies with on-disk caching keyed by study definition and source code."""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from .dgp import DgpSpec, TruePsi, independent_censoring_spec, misspecified_arm_spec, primary_spec, true_psi
from .harness import ReplicationResult, load, replicate_study, save, simulation_config

log = logging.getLogger(__name__)

PACKAGE_ROOT = Path(__file__).resolve().parents[1]


@dataclass(frozen=True)
class Study:
    name: str
    spec: Callable[[], DgpSpec]
    n: int
    reps: int
    estimators: tuple
    seed: int

    def definition(self) -> dict:
        return {
            "name": self.name,
            "spec": self.spec().to_json(),
            "n": self.n,
            "reps": self.reps,
            "estimators": list(self.estimators),
            "seed": self.seed,
            "config": simulation_config().to_json(),
        }


FOUR = ("unadjusted", "working_tmle", "tmle_oracle_form", "hal_tmle")

STUDIES = {
    s.name: s
    for s in (
        Study("primary", primary_spec, 500, 200, FOUR, 5001),
        Study("independent", independent_censoring_spec, 500, 200, ("unadjusted", "working_tmle", "tmle_oracle_form"), 5002),
        Study("dr_n200", misspecified_arm_spec, 200, 100, ("tmle_misspecified", "tmle_oracle_form"), 5003),
        Study("dr_n800", misspecified_arm_spec, 800, 100, ("tmle_misspecified", "tmle_oracle_form"), 5004),
    )
}


def source_digest() -> str:
    """Hash of the package modules a study depends on; cached results are invalid once it changes."""
    h = hashlib.sha256()
    for p in sorted(PACKAGE_ROOT.rglob("*.py")):
        if p.name == "cli.py":
            continue
        h.update(p.relative_to(PACKAGE_ROOT).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def cached_truth(spec: DgpSpec, results: Path, mc_size: int = 1_000_000, seed: int = 20240101) -> TruePsi:
    results.mkdir(parents=True, exist_ok=True)
    key = _digest({"spec": spec.to_json(), "mc_size": mc_size, "seed": seed, "source": source_digest()})
    path = results / f"truth_{key}.json"
    if path.exists():
        return TruePsi(**json.loads(path.read_text()))
    t = true_psi(spec, 1, mc_size, seed)
    path.write_text(json.dumps({"value": t.value, "mc_se": t.mc_se, "mc_size": t.mc_size}))
    return t


def manifest(study: Study) -> dict:
    import numba
    import scipy

    return {
        "study": study.definition(),
        "study_digest": _digest(study.definition()),
        "source_digest": source_digest(),
        "versions": {
            "recurtmle": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }


def run_or_load(name: str, results: str | Path = "results", force: bool = False, progress=None) -> ReplicationResult:
    """Cached result of study ``name`` if its manifest matches the current code, else run it."""
    study = STUDIES[name]
    results = Path(results)
    results.mkdir(parents=True, exist_ok=True)
    out, man = results / f"{name}.json", results / f"{name}.manifest.json"
    want = manifest(study)
    if not force and out.exists() and man.exists():
        have = json.loads(man.read_text())
        if have.get("study_digest") == want["study_digest"] and have.get("source_digest") == want["source_digest"]:
            return load(out)
        log.info("cached %s is stale; rerunning", name)
    spec = study.spec()
    truth = cached_truth(spec, results)
    res = replicate_study(spec, study.n, study.reps, study.estimators, study.seed, simulation_config(), truth, progress=progress)
    save(res, out)
    res.write_csv(results / f"{name}.csv")
    man.write_text(json.dumps(want, indent=1))
    return res
