"""Amortized Bayesian decision making for stochastic simulators.

Two algorithms over a shared simulation budget: NPE-MC (conditional density
estimation followed by Monte-Carlo cost averaging) and BAM (direct
regression of the posterior-expected cost), with ground-truth oracles and a
reproducible benchmark harness.
"""

from .core import Dataset, SimPair, TaskId, read_dataset, rescale_linear, split_seed, write_dataset
from .costs import CostSpec, incurred_cost
from .inference import (
    ActionSpace,
    CostRegressor,
    PosteriorEstimator,
    TrainConfig,
    bam_expected_cost,
    npe_mc_expected_cost,
    optimize_action,
    train_bam,
    train_npe,
)
from .oracles import (
    GridPosterior,
    MCMCChain,
    cost_gap,
    expected_cost_oracle,
    posterior_linear_gaussian,
    posterior_quadrature_toy,
)
from .simulators import Zone, classify_zone, generate_dataset, simulate_toy, summarize_epileptor

__version__ = "0.1.0"

__all__ = [
    "ActionSpace",
    "CostRegressor",
    "CostSpec",
    "Dataset",
    "GridPosterior",
    "MCMCChain",
    "PosteriorEstimator",
    "SimPair",
    "TaskId",
    "TrainConfig",
    "Zone",
    "bam_expected_cost",
    "classify_zone",
    "cost_gap",
    "expected_cost_oracle",
    "generate_dataset",
    "incurred_cost",
    "npe_mc_expected_cost",
    "optimize_action",
    "posterior_linear_gaussian",
    "posterior_quadrature_toy",
    "read_dataset",
    "rescale_linear",
    "simulate_toy",
    "split_seed",
    "summarize_epileptor",
    "train_bam",
    "train_npe",
    "write_dataset",
]
