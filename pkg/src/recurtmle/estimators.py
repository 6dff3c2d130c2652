"""Named estimators: nuisance fitting recipes feeding the targeting engine.

``unadjusted``        stratified Nelson-Aalen / Kaplan-Meier plug-in
``working_tmle``      TMLE with intensity models that ignore the recurrent-event history
``tmle_oracle_form``  TMLE with user-supplied parametric forms (e.g. the true model terms)
``hal_tmle``          TMLE with HAL fits over (L, A) and 1{N^y(t-) >= 1}
``tmle_misspecified`` like ``tmle_oracle_form`` with the ``misspecified`` forms

Parametric forms are small formulas: a list of tokens per process among
``"A"``, ``"L<i>"``, ``"L<i>^2"`` and ``"V"`` (past-event indicator), always
combined with a piecewise-constant baseline in time.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .event_data import EventKind, GridProcesses
from .hal import BasisSpec, HalConfig, compress, expand_design, fit_hal, fit_penalized_poisson, quantile_knots
from .intensity import jumps
from .np_estimators import StratifiedHazardFit
from .tmle import Intervention, NuisanceSet, TmleReport, TreatmentModel, run_tmle

log = logging.getLogger(__name__)

ESTIMATORS = ("unadjusted", "working_tmle", "tmle_oracle_form", "hal_tmle", "tmle_misspecified")
KIND_KEYS = {"y": EventKind.RECURRENT, "d": EventKind.DEATH, "c": EventKind.CENSOR}

# the simulation DGP: L1^2 in the recurrent model, linear L1 elsewhere
TRUE_FORMS = {"y": ["A", "L1^2", "V"], "d": ["A", "L1", "V"], "c": ["A", "L1", "V"]}
MISSPECIFIED_FORMS = {"y": ["A", "L1", "V"], "d": ["A", "L1", "V"], "c": ["A", "L1", "V"]}


def without_history(forms: dict) -> dict:
    return {k: [t for t in v if t != "V"] for k, v in forms.items()}


@dataclass(frozen=True)
class EstimatorConfig:
    hal: HalConfig = field(default_factory=HalConfig)
    forms: dict = field(default_factory=lambda: dict(TRUE_FORMS))
    misspecified: dict = field(default_factory=lambda: dict(MISSPECIFIED_FORMS))
    working_forms: dict | None = None  # None: HAL without history
    n_time_knots: int = 20
    weight_cap: float = 50.0
    max_iter: int = 20
    J: int | None = None
    treatment_model: str = "randomized"  # or "logistic"

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["hal"] = self.hal.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EstimatorConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown estimator settings {sorted(unknown)}")
        obj = dict(obj)
        if "hal" in obj:
            obj["hal"] = HalConfig.from_json(obj["hal"])
        return cls(**obj)


_TOKEN = re.compile(r"^(A|V|L(\d+)(\^2)?)$")


def formula_basis(n_covariates: int, times: np.ndarray, tokens, n_time_knots: int) -> BasisSpec:
    """Indicator time baseline plus the listed parametric terms."""
    names = ("t", *[f"l{i + 1}" for i in range(n_covariates)], "a", "n_prev")
    a_var, v_var = n_covariates + 1, n_covariates + 2
    terms = [((0, k),) for k in quantile_knots(times, n_time_knots)]
    for tok in tokens:
        m = _TOKEN.match(tok)
        if not m:
            raise ValueError(f"unknown model term {tok!r}")
        if tok == "A":
            terms.append(((a_var, 1.0),))
        elif tok == "V":
            terms.append(((v_var, 1.0),))
        else:
            i = int(m.group(2))
            if not 1 <= i <= n_covariates:
                raise ValueError(f"term {tok!r} refers to a missing covariate")
            terms.append(((i, None), (i, None)) if m.group(3) else ((i, None),))
    return BasisSpec(names, tuple(terms), time_var=0, history_var=v_var, max_interaction_order=1)


def fit_formula(proc: GridProcesses, kind: EventKind, tokens, n_time_knots: int):
    """Unpenalized Poisson fit of a parametric intensity form.

    Baseline knots sit at quantiles of the times of this kind of event, so
    every baseline cell holds at least one event and the MLE is finite.
    """
    times = proc.grid.times[np.nonzero(jumps(proc, kind).any(axis=0))[0]]
    basis = formula_basis(proc.covariates.shape[1], times, tokens, n_time_knots)
    design = compress(expand_design(proc, None, kind), basis)
    return fit_penalized_poisson(design, basis, penalty_path=np.array([0.0]), folds=1)


def treatment_model(proc: GridProcesses, how: str) -> TreatmentModel:
    if how == "randomized":
        return TreatmentModel.randomized(proc.treatment)
    if how == "logistic":
        return TreatmentModel.logistic(proc.covariates, proc.treatment)
    raise ValueError(f"unknown treatment model {how!r}")


def fit_nuisances(proc: GridProcesses, name: str, intervention: Intervention, cfg: EstimatorConfig = EstimatorConfig()) -> NuisanceSet:
    pi = treatment_model(proc, cfg.treatment_model)
    if name == "unadjusted":
        fits = {k: StratifiedHazardFit(proc, kind) for k, kind in KIND_KEYS.items()}
        pi = TreatmentModel.randomized(proc.treatment)
    elif name in ("tmle_oracle_form", "tmle_misspecified") or (name == "working_tmle" and cfg.working_forms is not None):
        forms = {"tmle_oracle_form": cfg.forms, "tmle_misspecified": cfg.misspecified}.get(name, cfg.working_forms)
        fits = {k: fit_formula(proc, kind, forms[k], cfg.n_time_knots) for k, kind in KIND_KEYS.items()}
    elif name in ("hal_tmle", "working_tmle"):
        hist = name == "hal_tmle"
        fits = {k: fit_hal(proc, kind, cfg.hal, history=hist) for k, kind in KIND_KEYS.items()}
    else:
        raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    return NuisanceSet(fits["y"], fits["d"], fits["c"], pi, intervention)


def estimate(proc: GridProcesses, name: str, intervention: Intervention, cfg: EstimatorConfig = EstimatorConfig(), nuis: NuisanceSet | None = None) -> TmleReport:
    """Fit nuisances for ``name`` (unless given) and run targeting.

    The unadjusted estimator is reported untargeted: its stratified hazards
    are already the nonparametric MLE within each arm.
    """
    nuis = fit_nuisances(proc, name, intervention, cfg) if nuis is None else nuis
    max_iter = 0 if name == "unadjusted" else cfg.max_iter
    return run_tmle(proc, None, nuis, max_iter=max_iter, weight_cap=cfg.weight_cap, J=cfg.J)


def estimate_arms(proc: GridProcesses, name: str, arms, cfg: EstimatorConfig = EstimatorConfig()) -> dict:
    """Reports for each static intervention a' in ``arms``, sharing one set of nuisance fits."""
    base = fit_nuisances(proc, name, Intervention.static(arms[0]), cfg)
    out = {}
    for a in arms:
        nuis = replace(base, intervention=Intervention.static(a))
        out[a] = estimate(proc, name, nuis.intervention, cfg, nuis=nuis)
    return out
