"""Zero-order spline (indicator) tensor basis.

Inputs are rows z = (t, x_1, ..., x_p, v): the grid time, baseline
covariates and treatment, and the recurrent-event count just before t. A
basis function is a product of factors; a factor ``(var, knot)`` is
``1{z_var >= knot}`` and ``(var, None)`` is the raw value ``z_var``. Linear
factors exist only to express parametric comparison models; time must enter
through indicators so that fits are piecewise constant in t.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

Factor = tuple  # (variable index, knot or None)


@dataclass(frozen=True)
class BasisSpec:
    """Ordered list of basis terms over named variables; term 0 is the intercept (empty product)."""

    variables: tuple[str, ...]
    terms: tuple[tuple[Factor, ...], ...]
    time_var: int = 0
    history_var: int | None = None
    max_interaction_order: int = 2

    def __post_init__(self):
        terms = tuple(tuple((int(v), None if k is None else float(k)) for v, k in t) for t in self.terms)
        if not terms or terms[0] != ():
            terms = ((),) + tuple(t for t in terms if t != ())
        for t in terms:
            for v, k in t:
                if not 0 <= v < len(self.variables):
                    raise ValueError(f"factor variable {v} out of range")
                if k is not None and not np.isfinite(k):
                    raise ValueError("knots must be finite")
                if v == self.time_var and k is None:
                    raise ValueError("time may only enter through indicator factors")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def size(self) -> int:
        return len(self.terms)

    def knots(self, var: int) -> np.ndarray:
        """Sorted distinct indicator knots used anywhere on variable ``var``."""
        ks = {k for t in self.terms for v, k in t if v == var and k is not None}
        return np.array(sorted(ks))

    @property
    def time_knots(self) -> np.ndarray:
        return self.knots(self.time_var)

    @property
    def history_linear(self) -> bool:
        return self.history_var is not None and any(v == self.history_var and k is None for t in self.terms for v, k in t)

    @property
    def history_cap(self) -> int | None:
        """Number of capped-count states that resolves the history dependence exactly."""
        if self.history_var is None:
            return 1
        if self.history_linear:
            return None
        ks = self.knots(self.history_var)
        if ks.size and np.any(ks != np.round(ks)):
            return None
        return int(max(ks.max(initial=0.0), 0.0)) + 1

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Design matrix of shape (rows, size)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.ones((z.shape[0], self.size))
        for c, t in enumerate(self.terms):
            for v, k in t:
                out[:, c] *= z[:, v] if k is None else (z[:, v] >= k)
        return out

    def to_json(self) -> dict:
        return {
            "variables": list(self.variables),
            "time_var": self.time_var,
            "history_var": self.history_var,
            "max_interaction_order": self.max_interaction_order,
            "terms": [[[v, k] for v, k in t] for t in self.terms],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BasisSpec":
        return cls(
            variables=tuple(obj["variables"]),
            terms=tuple(tuple((v, k) for v, k in t) for t in obj["terms"]),
            time_var=obj["time_var"],
            history_var=obj["history_var"],
            max_interaction_order=obj.get("max_interaction_order", 2),
        )


@dataclass(frozen=True)
class HalConfig:
    """Knot budget and penalty search for HAL fits.

    The defaults follow the usual HAL recipe at desk scale; ``history_knots``
    are count thresholds m giving factors 1{N^y(t-) >= m}.
    """

    n_time_knots: int = 100
    n_covariate_knots: int = 10
    n_interaction_knots: int = 5
    history_knots: tuple[int, ...] = (1,)
    max_order: int = 2
    interact_time: bool = True
    n_lambdas: int = 50
    lambda_min_ratio: float = 1e-4
    n_folds: int = 5
    patience: int = 8
    seed: int = 0
    tol: float = 1e-7

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "HalConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown HAL settings {sorted(unknown)}")
        obj = dict(obj)
        if "history_knots" in obj:
            obj["history_knots"] = tuple(int(v) for v in obj["history_knots"])
        return cls(**obj)


def quantile_knots(values: np.ndarray, n: int) -> np.ndarray:
    """Up to ``n`` knots at empirical quantiles of the distinct values, excluding the minimum."""
    u = np.unique(np.asarray(values, dtype=float))
    if u.size <= 1 or n <= 0:
        return np.empty(0)
    cand = u[1:]
    if cand.size <= n:
        return cand
    idx = np.unique(np.round(np.linspace(0, cand.size - 1, n)).astype(int))
    return cand[idx]


def thin(knots: np.ndarray, n: int) -> np.ndarray:
    if knots.size <= n:
        return knots
    idx = np.unique(np.round(np.linspace(0, knots.size - 1, n + 2)[1:-1]).astype(int))
    return knots[idx]


def make_basis(
    variables: tuple[str, ...],
    time_values: np.ndarray,
    covariate_values: np.ndarray,
    config: HalConfig = HalConfig(),
    history: bool = True,
) -> BasisSpec:
    """HAL basis with main terms and interactions up to ``config.max_order``.

    ``time_values`` are the grid times (knots at their quantiles) and
    ``covariate_values`` the (subjects, p) matrix of baseline covariates and
    treatment. Interaction terms use a thinned knot set per variable.
    """
    cov = np.atleast_2d(covariate_values)
    p = cov.shape[1]
    hist_var = p + 1 if history else None
    main: dict[int, np.ndarray] = {0: quantile_knots(time_values, config.n_time_knots)}
    for c in range(p):
        main[c + 1] = quantile_knots(cov[:, c], config.n_covariate_knots)
    if history:
        main[hist_var] = np.array(sorted(set(config.history_knots)), dtype=float)
    terms: list[tuple[Factor, ...]] = [()]
    for v, ks in main.items():
        terms.extend(((v, k),) for k in ks)
    thinned = {v: thin(ks, config.n_interaction_knots) for v, ks in main.items()}
    if history:
        thinned[hist_var] = main[hist_var]
    vars_ = [v for v in main if main[v].size and (v != 0 or config.interact_time)]
    for order in range(2, config.max_order + 1):
        for combo in itertools.combinations(vars_, order):
            for knots in itertools.product(*(thinned[v] for v in combo)):
                terms.append(tuple(zip(combo, knots)))
    return BasisSpec(tuple(variables), tuple(terms), time_var=0, history_var=hist_var, max_interaction_order=config.max_order)


def variable_names(covariate_names, history: bool = True) -> tuple[str, ...]:
    names = ("t", *covariate_names, "a")
    return names + ("n_prev",) if history else names
