"""Decentralized stochastic gradient tracking (DSGT) laboratory.

Library modules:

* :mod:`dsgtlab.topology` - graphs, mixing matrices, ``rho``
* :mod:`dsgtlab.problems` - least-squares / logistic problems, sampling, exact constants
* :mod:`dsgtlab.algorithms` - DSGT, D-PSGD, D^2, centralized SGD, stepsizes
* :mod:`dsgtlab.metrics` - ``R(k)``, ``R_c(k)`` and the rate bounds
* :mod:`dsgtlab.engine` - configs, runs, sweeps, persisted traces
"""

from .algorithms import (
    ALGORITHMS,
    AlgoState,
    Diverged,
    GradientOracle,
    StepSchedule,
    d2_companion,
    dsgt_step,
    init_state,
    theorem_cap,
)
from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text, serialize
from .engine import run_experiment, run_sweep
from .metrics import BoundConstants, MetricsTracker, make_bound_constants, rate_fit, theorem1_bound
from .problems import LocalDataset, Problem, centralized_reference, sigma_s_oracle
from .topology import MixingMatrix, Topology, build_topology, fixture3, metropolis_weights

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AlgoState",
    "BoundConstants",
    "ConfigError",
    "Diverged",
    "ExperimentConfig",
    "GradientOracle",
    "LocalDataset",
    "MetricsTracker",
    "MixingMatrix",
    "Problem",
    "StepSchedule",
    "Topology",
    "build_topology",
    "centralized_reference",
    "d2_companion",
    "dsgt_step",
    "fixture3",
    "init_state",
    "make_bound_constants",
    "metropolis_weights",
    "parse_config",
    "parse_config_text",
    "rate_fit",
    "run_experiment",
    "run_sweep",
    "serialize",
    "sigma_s_oracle",
    "theorem1_bound",
    "theorem_cap",
]
