"""Sparse topology inference for linear stochastic dynamics."""
from .baseline import LAMBDA_GRID, run_em_lasso
from .basis import BasisMatrices, MeshSpec, build_basis
from .bench import (
    NoiseSpec,
    RingSpec,
    enumerate_posterior,
    generate_transport_matrix,
    score_auroc_auprec,
    simulate_series,
)
from .core import ContractError, NumericalError, PriorConfig, rng_stream
from .dynamic import DynamicChain, HyperState, SamplerConfig, Schedule, TimeSeriesSet, run_dynamic_mcmc
from .estimators import DynamicTopologySampler, EMLasso, SparseRegressionSelector
from .regression import RegressionData, log_marginal, run_regression_mcmc
from .tempering import Ladder, run_heuristic_tempering, run_parallel_tempering

__all__ = [
    "BasisMatrices", "ContractError", "DynamicChain", "DynamicTopologySampler", "EMLasso",
    "HyperState", "LAMBDA_GRID", "Ladder", "MeshSpec", "NoiseSpec", "NumericalError",
    "PriorConfig", "RegressionData", "RingSpec", "SamplerConfig", "Schedule",
    "SparseRegressionSelector", "TimeSeriesSet", "build_basis", "enumerate_posterior",
    "generate_transport_matrix", "log_marginal", "rng_stream", "run_dynamic_mcmc",
    "run_em_lasso", "run_heuristic_tempering", "run_parallel_tempering", "run_regression_mcmc",
    "score_auroc_auprec", "simulate_series",
]
