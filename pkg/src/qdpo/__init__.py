"""Dynamic portfolio optimization as a QUBO, solved with simulated variational circuits.

The package turns closing prices into per-period return and covariance
tensors, builds the binary quadratic objective, optimizes a Real Amplitudes
style ansatz with differential evolution on an exact statevector simulator,
repairs the sampled strings with configuration recovery, and scores the
resulting strategies.
"""
__version__ = "0.1.0"

from .analytics import (
    FinancialReport,
    WeightNormalizer,
    efficient_frontier,
    financial_scores,
    normalize_weights,
    scores_from_weights,
)
from .baselines import exhaustive_solve, pct_below_offset, random_baseline, simulated_annealing
from .isqr import ISQR, IsqrConfig, isqr_run, learn_pattern
from .market import MarketTensors, PriceSeries, load_prices, market_tensors
from .model import (
    DpoProblem,
    QuadraticForm,
    Strategy,
    build_qubo,
    build_single_time_qubo,
    evaluate_cost,
    ising_to_qubo,
    qubo_to_ising,
    weights_from_bits,
)
from .simulator import AnsatzSpec, SampleSet, build_ansatz, expectation, sample, simulate
from .variational import DeConfig, VQECSolver, VQESolver, vqe_solve, vqec_solve

__all__ = [
    "AnsatzSpec", "DeConfig", "DpoProblem", "FinancialReport", "ISQR", "IsqrConfig",
    "MarketTensors", "PriceSeries", "QuadraticForm", "SampleSet", "Strategy", "VQECSolver",
    "VQESolver", "WeightNormalizer", "build_ansatz", "build_qubo", "build_single_time_qubo",
    "efficient_frontier", "evaluate_cost", "exhaustive_solve", "expectation",
    "financial_scores", "ising_to_qubo", "isqr_run", "learn_pattern", "load_prices",
    "market_tensors", "normalize_weights", "pct_below_offset", "qubo_to_ising",
    "random_baseline", "sample", "scores_from_weights", "simulate", "simulated_annealing",
    "vqe_solve", "vqec_solve", "weights_from_bits",
]
