"""Simulation laboratory: data-generating processes, Monte Carlo truth and replication studies."""

from .dgp import (
    DgpSpec,
    SimArrays,
    TruePsi,
    independent_censoring_spec,
    misspecified_arm_spec,
    primary_spec,
    simulate,
    simulate_arrays,
    to_paths,
    true_psi,
)
from .harness import EstimatorRuns, ReplicationResult, load, replicate_study, replication_seed, save, simulation_config

__all__ = [
    "DgpSpec",
    "EstimatorRuns",
    "ReplicationResult",
    "SimArrays",
    "TruePsi",
    "independent_censoring_spec",
    "load",
    "misspecified_arm_spec",
    "primary_spec",
    "replicate_study",
    "replication_seed",
    "save",
    "simulate",
    "simulate_arrays",
    "simulation_config",
    "to_paths",
    "true_psi",
]
