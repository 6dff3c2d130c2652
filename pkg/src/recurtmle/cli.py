"""Command-line entry point.

    recurtmle estimate --data visits.csv --tau 1825 --treat 1 --treat 0
    recurtmle simulate --n 500 --seed 1 --out sim/
    recurtmle replicate --config study.json --out results/
    recurtmle inspect-weights --data visits.csv --tau 1825 --treat 1

Configuration is a JSON object whose keys are listed in ``CONFIG_KEYS``;
command-line flags override config values. Exit codes: 0 success, 1 invalid
input or configuration, 2 positivity failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .estimators import ESTIMATORS, EstimatorConfig, estimate, fit_nuisances
from .event_data import ColumnSpec, DataValidationError, DegenerateGridError, build_grid, ingest_csv, on_grid, write_csv
from .hal import HalConfig
from .sim.dgp import DgpSpec, simulate, true_psi
from .sim.harness import replicate_study, simulation_config
from .tmle import Intervention, PositivityError, difference, positivity_report

log = logging.getLogger("recurtmle")

COMMANDS = ("estimate", "simulate", "replicate", "inspect-weights")
DEFAULT_ESTIMATORS = {
    "estimate": ("unadjusted", "working_tmle", "hal_tmle"),
    "replicate": ("unadjusted", "working_tmle", "tmle_oracle_form", "hal_tmle"),
    "inspect-weights": ("hal_tmle",),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved settings for one command; JSON keys match the field names."""

    data: str | None = None
    tau: float | None = None
    treat: list = field(default_factory=lambda: [1, 0])
    estimators: list | None = None  # None: the command's default list
    out: str = "out"
    seed: int = 0
    threads: int | None = None
    weight_cap: float = 50.0
    cap_J: int | None = None
    max_iter: int = 20
    treatment_model: str = "randomized"
    hal: dict = field(default_factory=dict)
    forms: dict | None = None
    columns: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)
    n: int = 500
    reps: int = 10
    mc_size: int = 1_000_000

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self) -> str:
        """Hash of every setting that can change results; the output location is excluded."""
        keyed = {k: v for k, v in self.to_json().items() if k != "out"}
        return hashlib.sha256(json.dumps(keyed, sort_keys=True).encode()).hexdigest()[:16]


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))

_TYPES = {
    "data": (str, type(None)),
    "tau": (int, float, type(None)),
    "treat": list,
    "estimators": (list, type(None)),
    "out": str,
    "seed": int,
    "threads": (int, type(None)),
    "weight_cap": (int, float),
    "cap_J": (int, type(None)),
    "max_iter": int,
    "treatment_model": str,
    "hal": dict,
    "forms": (dict, type(None)),
    "columns": dict,
    "spec": dict,
    "n": int,
    "reps": int,
    "mc_size": int,
}


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Merge a JSON config file with flag overrides (flags win) and validate."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    for k, v in merged.items():
        if isinstance(v, bool) or not isinstance(v, _TYPES[k]):
            raise ConfigError(f"config key {k!r} has invalid value {v!r}")
    cfg = RunConfig(**merged)
    bad = [e for e in cfg.estimators or () if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimator(s) {bad}; choose from {list(ESTIMATORS)}")
    if cfg.tau is not None and not cfg.tau > 0:
        raise ConfigError("tau must be positive")
    if not cfg.weight_cap > 0:
        raise ConfigError("weight_cap must be positive")
    if cfg.cap_J is not None and cfg.cap_J < 1:
        raise ConfigError("cap_J must be at least 1")
    if cfg.n < 1 or cfg.reps < 0 or cfg.mc_size < 1:
        raise ConfigError("n and mc_size must be positive and reps non-negative")
    try:
        cfg.treat = [int(a) for a in cfg.treat]
        HalConfig.from_json(cfg.hal)
        DgpSpec.from_json(cfg.spec) if cfg.spec else None
        _columns(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _estimator_config(cfg: RunConfig, base: EstimatorConfig | None = None) -> EstimatorConfig:
    base = EstimatorConfig() if base is None else base
    hal = HalConfig.from_json({**base.hal.to_json(), "seed": cfg.seed, **cfg.hal})
    changes = {"hal": hal.to_json(), "weight_cap": float(cfg.weight_cap), "max_iter": cfg.max_iter, "J": cfg.cap_J, "treatment_model": cfg.treatment_model}
    if cfg.forms is not None:
        changes["forms"] = cfg.forms
    return EstimatorConfig.from_json({**base.to_json(), **changes})


def _columns(cfg: RunConfig) -> ColumnSpec:
    cols = dict(cfg.columns)
    if cols.get("covariates") is not None:
        cols["covariates"] = tuple(cols["covariates"])
    return ColumnSpec(**cols)


def _spec(cfg: RunConfig) -> DgpSpec:
    spec = DgpSpec.from_json(cfg.spec) if cfg.spec else DgpSpec()
    return spec if cfg.tau is None else spec.with_(tau=float(cfg.tau))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    if not out.exists():
        out.mkdir(parents=True)
        print(f"created output directory {out}", file=sys.stderr)
    return out


def _write_manifest(out: Path, command: str, cfg: RunConfig) -> None:
    import numba
    import scipy

    man = {
        "command": command,
        "config": cfg.to_json(),
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "versions": {
            "recurtmle": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    (out / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    print(f"wrote {path}")


def _g(x: float) -> str:
    return f"{x:.6g}"


def _load_data(cfg: RunConfig):
    if cfg.data is None:
        raise ConfigError("--data is required")
    if cfg.tau is None:
        raise ConfigError("--tau is required")
    try:
        with open(cfg.data, "rb") as fh:
            paths = ingest_csv(fh, _columns(cfg))
    except OSError as exc:
        raise ConfigError(f"cannot read data: {exc}") from None
    if not paths:
        raise ConfigError("data file holds no subjects")
    last = max((r.time for p in paths for r in p.records), default=0.0)
    if cfg.tau > last:
        log.warning("tau=%s exceeds the last event time %s; the grid ends at %s", _g(cfg.tau), _g(last), _g(last))
    proc = on_grid(paths, build_grid(paths, cfg.tau))
    return paths, proc


# --------------------------------------------------------------------------- commands


def cmd_estimate(cfg: RunConfig) -> int:
    _, proc = _load_data(cfg)
    ecfg = _estimator_config(cfg)
    out = _out_dir(cfg)
    reports: dict = {}
    rows = []
    for name in cfg.estimators or DEFAULT_ESTIMATORS["estimate"]:
        base = fit_nuisances(proc, name, Intervention.static(cfg.treat[0]), ecfg)
        per_arm = {}
        for a in cfg.treat:
            nuis = replace(base, intervention=Intervention.static(a))
            per_arm[a] = estimate(proc, name, nuis.intervention, ecfg, nuis=nuis)
            r = per_arm[a]
            rows.append((name, f"a'={a}", r.psi_hat, r.se, *r.ci95))
        entry = {str(a): r.to_json() for a, r in per_arm.items()}
        if len(cfg.treat) == 2:
            a1, a0 = cfg.treat
            diff = difference(per_arm[a1], per_arm[a0])
            entry[f"difference_{a1}_minus_{a0}"] = diff
            rows.append((name, f"{a1} - {a0}", diff["estimate"], diff["se"], *diff["ci95"]))
        reports[name] = entry
    print(f"{'estimator':<18} {'contrast':<10} {'psi_hat':>10} {'se':>10} {'ci_lo':>10} {'ci_hi':>10}")
    for name, lab, psi, se, lo, hi in rows:
        print(f"{name:<18} {lab:<10} {_g(psi):>10} {_g(se):>10} {_g(lo):>10} {_g(hi):>10}")
    _dump(out / "reports.json", {"n": proc.n, "tau": cfg.tau, "K": proc.grid.K, "reports": reports})
    _write_manifest(out, "estimate", cfg)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    spec = _spec(cfg)
    out = _out_dir(cfg)
    paths = simulate(spec, cfg.n, cfg.seed)
    target = out / "simulated.csv"
    with open(target, "w", newline="") as fh:
        write_csv(paths, fh, [f"l{i + 1}" for i in range(3)])
    print(f"wrote {target}")
    died = sum(p.died for p in paths)
    cens = sum(p.terminal is not None and p.terminal.kind.name == "CENSOR" for p in paths)
    events = sum(len(p.recurrent_times) for p in paths)
    print(f"n={cfg.n} recurrent events {events} (mean {_g(events / cfg.n)}), deaths {died}, censored {cens}")
    _write_manifest(out, "simulate", cfg)
    return 0


def cmd_replicate(cfg: RunConfig) -> int:
    spec = _spec(cfg)
    names = cfg.estimators or list(DEFAULT_ESTIMATORS["replicate"])
    ecfg = _estimator_config(cfg, simulation_config())
    out = _out_dir(cfg)
    truth = true_psi(spec, treatment=cfg.treat[0], mc_size=cfg.mc_size)
    res = replicate_study(spec, cfg.n, cfg.reps, names, cfg.seed, ecfg, truth, arm=cfg.treat[0])
    res.write_csv(out / "replications.csv")
    print(f"wrote {out / 'replications.csv'}")
    summary = res.summary()
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]) if summary else ["estimator"])
        w.writeheader()
        w.writerows(summary)
    print(f"wrote {out / 'summary.csv'}")
    _dump(out / "replication.json", res.to_json(timing=False))
    print(f"psi0 = {_g(truth.value)} (MC se {_g(truth.mc_se)}, {truth.mc_size} draws)")
    print(f"{'estimator':<18} {'R':>4} {'bias':>10} {'sd':>10} {'mse':>10} {'coverage':>9} {'failures':>8}")
    for s in summary:
        print(f"{s['estimator']:<18} {s['replications']:>4} {_g(s['bias']):>10} {_g(s['sd']):>10} {_g(s['mse']):>10} {_g(s['coverage']):>9} {s['failures']:>8}")
    _write_manifest(out, "replicate", cfg)
    return 0


def cmd_inspect_weights(cfg: RunConfig) -> int:
    _, proc = _load_data(cfg)
    ecfg = _estimator_config(cfg)
    out = _out_dir(cfg)
    name = (cfg.estimators or DEFAULT_ESTIMATORS["inspect-weights"])[0]
    result = {}
    for a in cfg.treat:
        nuis = fit_nuisances(proc, name, Intervention.static(a), ecfg)
        rep = positivity_report(nuis, proc, cfg.weight_cap)
        result[str(a)] = rep.to_json()
        print(
            f"a'={a}: max weight {_g(rep.max_weight)}, truncated {rep.truncated} ({_g(rep.truncated_fraction)}), "
            f"min censoring survival {_g(rep.min_censor_survival)}, min P(A|L) {_g(rep.min_treatment_prob)}"
            + ("  [weights exceed cap]" if rep.violation else "")
        )
    _dump(out / "positivity.json", {"estimator": name, "reports": result})
    _write_manifest(out, "inspect-weights", cfg)
    return 0


HANDLERS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "replicate": cmd_replicate, "inspect-weights": cmd_inspect_weights}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recurtmle", description="Targeted estimation of expected recurrent-event counts.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--data", help="counting-process CSV (id, tstart, tstop, event, a, covariates)")
        p.add_argument("--tau", type=float, help="time horizon")
        p.add_argument("--treat", type=int, action="append", help="static intervention value a' (repeatable)")
        p.add_argument("--estimator", dest="estimators", action="append", choices=ESTIMATORS, help="estimator (repeatable)")
        p.add_argument("--out", help="output directory (created when missing)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker threads for compiled kernels")
        p.add_argument("--weight-cap", dest="weight_cap", type=float)
        p.add_argument("--cap-J", dest="cap_J", type=int, help="cap on the tracked recurrent-event count")
        if name in ("simulate", "replicate"):
            p.add_argument("--n", type=int, help="subjects per dataset")
        if name == "replicate":
            p.add_argument("--reps", type=int)
            p.add_argument("--mc-size", dest="mc_size", type=int, help="Monte Carlo draws for the true value")
    return ap


def _set_threads(n: int | None) -> None:
    """Cap compiled-kernel threads; without the flag numba keeps its machine-wide default."""
    if n is None:
        return
    import numba

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides)
        _set_threads(cfg.threads)
        return HANDLERS[args.command](cfg)
    except PositivityError as exc:
        print(f"error: positivity failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DataValidationError, DegenerateGridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
