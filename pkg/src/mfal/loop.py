"""Active-learning orchestration: initial design, query-retrain cycles,
cost accounting, and nRMSE evaluation against a dense-mesh test set."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import acquisition, pde, surrogate
from .acquisition import OptimizerConfig
from .dataset import MultiFidelityDataset
from .errors import ZeroNormalizer
from .pde import generate_test_set, query_oracle, sample_inputs
from .surrogate import SurrogateModel, SurrogateSpec

# Initial-design sizes per fidelity, keyed by the number of fidelities.
INITIAL_DESIGN_COUNTS = {1: (10,), 2: (10, 2), 3: (10, 5, 2)}


@dataclass
class LoopConfig:
    """Hyperparameters of one active-learning run."""

    latent_dim: int = 5
    hidden_widths: tuple = None  # per fidelity; default (32, 32) each
    epochs: int = 2000
    refit_epochs: int = None  # defaults to epochs
    learning_rate: float = 5e-3
    num_test: int = 200
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    include_initial_cost: bool = False
    cache_dir: str = None

    def resolved_refit_epochs(self):
        return self.epochs if self.refit_epochs is None else self.refit_epochs


@dataclass(frozen=True)
class RunRecord:
    step: int
    input: np.ndarray
    fidelity: int
    cost_lambda: float
    cumulative_cost: float
    nrmse_after_retrain: float


@dataclass
class RunHistory:
    records: list
    config_snapshot: dict
    seed: int


@dataclass(frozen=True)
class CostLedger:
    active_learning_cost: float
    prediction_cost_per_solution: float


def average_cost(ledger, n_solutions):
    """Average cost per acquired solution, training cost amortized over n."""
    if n_solutions < 1:
        raise ValueError("n_solutions must be >= 1")
    return (
        ledger.active_learning_cost
        + n_solutions * ledger.prediction_cost_per_solution
    ) / n_solutions


def initialize_design(problem, rng):
    """Initial uniform design with the standard per-fidelity counts."""
    counts = INITIAL_DESIGN_COUNTS[problem.num_fidelities]
    dataset = MultiFidelityDataset(problem.num_fidelities)
    for m, n in enumerate(counts, start=1):
        for x in sample_inputs(problem, n, rng):
            dataset.add(query_oracle(problem, x, m))
    return dataset


def evaluate_nrmse(model, test_set):
    """RMSE over all test output coordinates divided by the scalar mean of
    the test outputs (predictions at the highest fidelity)."""
    M = model.spec.num_fidelities
    truths = np.array([y for _, y in test_set])
    normalizer = float(truths.mean())
    if abs(normalizer) < 1e-12:
        raise ZeroNormalizer("mean of test outputs is (near) zero")
    sq = 0.0
    for x, y in test_set:
        mean, _ = surrogate.predict(model, x, M)
        sq += float(np.sum((mean - y) ** 2))
    rmse = np.sqrt(sq / truths.size)
    return rmse / normalizer


def cached_test_set(problem, n, seed, cache_dir=None):
    """Test set generation with an optional on-disk npz cache."""
    if cache_dir is None:
        return generate_test_set(problem, n, seed)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"test_{problem.equation}_{problem.num_fidelities}f_{n}_{seed}.npz"
    if path.exists():
        data = np.load(path)
        return list(zip(data["inputs"], data["outputs"]))
    pairs = generate_test_set(problem, n, seed)
    np.savez_compressed(
        path,
        inputs=np.array([x for x, _ in pairs]),
        outputs=np.array([y for _, y in pairs]),
    )
    return pairs


def build_model(problem, config, seed):
    spec = SurrogateSpec(
        num_fidelities=problem.num_fidelities,
        input_dim=problem.input_dim,
        latent_dim=config.latent_dim,
        output_dims=tuple(f.output_dim for f in problem.fidelities),
        hidden_widths=config.hidden_widths,
    )
    return SurrogateModel(spec, problem.input_box, seed=seed)


def run_active_learning(problem, strategy, num_queries, seed, config=None):
    """One sequential active-learning run; deterministic given the seed."""
    if num_queries < 1:
        raise ValueError("num_queries must be >= 1")
    config = config or LoopConfig()
    acquisition.parse_strategy(strategy)
    rng = np.random.default_rng(seed)
    test_set = cached_test_set(problem, config.num_test, seed, config.cache_dir)
    dataset = initialize_design(problem, rng)
    model = build_model(problem, config, seed=int(rng.integers(2**31)))
    surrogate.fit(model, dataset, config.epochs, config.learning_rate,
                  seed=int(rng.integers(2**31)))

    records = []
    cum_cost = 0.0
    if config.include_initial_cost:
        counts = INITIAL_DESIGN_COUNTS[problem.num_fidelities]
        cum_cost = sum(
            n * f.cost_lambda for n, f in zip(counts, problem.fidelities)
        )
    refit_epochs = config.resolved_refit_epochs()
    for step in range(1, num_queries + 1):
        decision = acquisition.optimize_query(
            model, problem, strategy, rng, config.optimizer
        )
        sample = query_oracle(problem, decision.input, decision.fidelity)
        dataset.add(sample)
        surrogate.fit(model, dataset, refit_epochs, config.learning_rate,
                      seed=int(rng.integers(2**31)))
        nrmse = evaluate_nrmse(model, test_set)
        cum_cost += sample.cost
        records.append(RunRecord(step, sample.input, sample.fidelity_index,
                                 sample.cost, cum_cost, nrmse))

    snapshot = {
        "strategy": strategy,
        "num_queries": num_queries,
        "latent_dim": config.latent_dim,
        "hidden_widths": [list(w) for w in (
            config.hidden_widths or [(32, 32)] * problem.num_fidelities)],
        "epochs": config.epochs,
        "refit_epochs": refit_epochs,
        "learning_rate": config.learning_rate,
        "num_test": config.num_test,
        "include_initial_cost": config.include_initial_cost,
        "optimizer": asdict(config.optimizer),
        "equation": problem.equation,
        "num_fidelities": problem.num_fidelities,
    }
    return RunHistory(records, snapshot, seed)


def save_history(history, problem, directory):
    """Write history.csv and manifest.json to a run directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    p = problem.input_dim
    with (directory / "history.csv").open("w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "fidelity", "cost", "cum_cost", "nrmse"]
                        + [f"x_{i}" for i in range(p)])
        for r in history.records:
            writer.writerow(
                [r.step, r.fidelity, f"{r.cost_lambda:.17g}",
                 f"{r.cumulative_cost:.17g}", f"{r.nrmse_after_retrain:.17g}"]
                + [f"{v:.17g}" for v in r.input]
            )
    manifest = {
        "seed": history.seed,
        "config": history.config_snapshot,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_history_csv(path):
    """Rows of a history.csv as a list of dicts with float fields."""
    rows = []
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append({
                "step": int(row["step"]),
                "fidelity": int(row["fidelity"]),
                "cost": float(row["cost"]),
                "cum_cost": float(row["cum_cost"]),
                "nrmse": float(row["nrmse"]),
            })
    return rows
