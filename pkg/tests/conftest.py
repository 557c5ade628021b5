"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from mfal import surrogate
from mfal.dataset import MultiFidelityDataset
from mfal.numkit import MlpParams


def random_mlp(rng, dims, activation="tanh"):
    """MlpParams with N(0, 1/sqrt(fan_in)) weights for the given layer dims."""
    Ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        Ws.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_out, fan_in)))
        bs.append(rng.normal(0.0, 0.1, fan_out))
    return MlpParams(Ws, bs, activation)


def random_spd(rng, n, scale=1.0):
    """Random well-conditioned SPD matrix."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = scale * (0.1 + rng.random(n))
    return (Q * eigs) @ Q.T


def linear_dataset(rng, n, input_dim, output_dim, box):
    """Single-fidelity dataset from a noiseless random linear map."""
    C = rng.standard_normal((output_dim, input_dim))
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    X = lo + (hi - lo) * rng.random((n, input_dim))
    dataset = MultiFidelityDataset(1)
    for x in X:
        dataset.inputs[0].append(x)
        dataset.outputs[0].append(C @ x)
    return dataset, C


@pytest.fixture(scope="session")
def tiny_fitted_model():
    """A small fitted two-fidelity model shared by belief/acquisition tests.

    Two fidelities with output dims 6 and 10, latent dim 2, trained briefly
    on a smooth synthetic target so the posterior is meaningful but cheap.
    """
    rng = np.random.default_rng(7)
    box = ((0.0, 1.0), (0.0, 1.0))
    spec = surrogate.SurrogateSpec(
        num_fidelities=2, input_dim=2, latent_dim=2,
        output_dims=(6, 10), hidden_widths=((8,), (8,)),
    )
    model = surrogate.SurrogateModel(spec, box, seed=3)
    dataset = MultiFidelityDataset(2)

    def field(x, d):
        grid = np.linspace(0.0, 1.0, d)
        return np.sin(np.pi * (x[0] + grid)) + x[1] * grid

    for _ in range(12):
        x = rng.random(2)
        dataset.inputs[0].append(x)
        dataset.outputs[0].append(field(x, 6))
    for _ in range(6):
        x = rng.random(2)
        dataset.inputs[1].append(x)
        dataset.outputs[1].append(field(x, 10))
    surrogate.fit(model, dataset, epochs=300, learning_rate=5e-3, seed=11)
    return model
