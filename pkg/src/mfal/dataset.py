"""Per-fidelity training collections and their on-disk CSV format.

One CSV per fidelity with header x_0..x_{p-1},y_0..y_{d-1} and
17-significant-digit floats, plus a JSON sidecar recording the equation,
fidelity specs, and generating seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pde import FidelitySpec, PdeProblem


@dataclass
class MultiFidelityDataset:
    """Lists of (input, flat output) pairs, one list per fidelity level."""

    num_fidelities: int
    inputs: list = None   # inputs[m] is a list of 1-D arrays
    outputs: list = None

    def __post_init__(self):
        if self.inputs is None:
            self.inputs = [[] for _ in range(self.num_fidelities)]
        if self.outputs is None:
            self.outputs = [[] for _ in range(self.num_fidelities)]

    def add(self, sample):
        """Append a FieldSample at its fidelity."""
        m = sample.fidelity_index - 1
        self.inputs[m].append(np.asarray(sample.input, dtype=np.float64))
        self.outputs[m].append(np.asarray(sample.values, dtype=np.float64))

    def count(self, m):
        """Number of examples at 1-based fidelity m."""
        return len(self.inputs[m - 1])

    def arrays(self, m):
        """(X, Y) stacked arrays at 1-based fidelity m."""
        return (
            np.array(self.inputs[m - 1], dtype=np.float64),
            np.array(self.outputs[m - 1], dtype=np.float64),
        )


def _fmt(v):
    return f"{v:.17g}"


def save_dataset(dataset, problem, seed, directory):
    """Write fidelity_<m>.csv files and a dataset.json sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for m in range(1, dataset.num_fidelities + 1):
        X, Y = dataset.arrays(m)
        path = directory / f"fidelity_{m}.csv"
        with path.open("w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            p = problem.input_dim
            d = problem.fidelities[m - 1].output_dim
            writer.writerow([f"x_{i}" for i in range(p)] + [f"y_{j}" for j in range(d)])
            for x, y in zip(X, Y):
                writer.writerow([_fmt(v) for v in x] + [_fmt(v) for v in y])
    sidecar = {
        "equation": problem.equation,
        "seed": seed,
        "input_box": [list(b) for b in problem.input_box],
        "fidelities": [
            {
                "mesh_nx": f.mesh_nx,
                "mesh_nt_or_ny": f.mesh_nt_or_ny,
                "cost_lambda": f.cost_lambda,
            }
            for f in problem.fidelities
        ],
    }
    (directory / "dataset.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_dataset(directory):
    """Read a dataset directory back; returns (dataset, problem, seed)."""
    directory = Path(directory)
    sidecar = json.loads((directory / "dataset.json").read_text())
    problem = PdeProblem(
        sidecar["equation"],
        tuple(tuple(b) for b in sidecar["input_box"]),
        tuple(
            FidelitySpec(f["mesh_nx"], f["mesh_nt_or_ny"], f["cost_lambda"])
            for f in sidecar["fidelities"]
        ),
    )
    dataset = MultiFidelityDataset(problem.num_fidelities)
    p = problem.input_dim
    for m in range(1, problem.num_fidelities + 1):
        path = directory / f"fidelity_{m}.csv"
        with path.open() as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                vals = np.array(row, dtype=np.float64)
                dataset.inputs[m - 1].append(vals[:p])
                dataset.outputs[m - 1].append(vals[p:])
    return dataset, problem, sidecar["seed"]
