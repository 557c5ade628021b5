"""Multi-fidelity active learning of high-dimensional PDE solution fields.

Deep latent-chained surrogates over parameterized PDE solvers, with
cost-normalized mutual-information acquisition computed by delta-method
posterior propagation and low-rank log-determinant identities.
"""

from .acquisition import OptimizerConfig, QueryDecision, optimize_query
from .belief import GaussianBelief, latent_delta_posterior, pairwise_mutual_information
from .dataset import MultiFidelityDataset
from .loop import CostLedger, LoopConfig, RunHistory, average_cost, run_active_learning
from .pde import FidelitySpec, FieldSample, PdeProblem, make_problem, query_oracle
from .surrogate import SurrogateModel, SurrogateSpec

__all__ = [
    "CostLedger",
    "FidelitySpec",
    "FieldSample",
    "GaussianBelief",
    "LoopConfig",
    "MultiFidelityDataset",
    "OptimizerConfig",
    "PdeProblem",
    "QueryDecision",
    "RunHistory",
    "SurrogateModel",
    "SurrogateSpec",
    "average_cost",
    "latent_delta_posterior",
    "make_problem",
    "optimize_query",
    "pairwise_mutual_information",
    "query_oracle",
    "run_active_learning",
]

__version__ = "0.1.0"
