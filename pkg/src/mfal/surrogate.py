"""Deep multi-fidelity Bayesian surrogate.

One small MLP per fidelity produces a k-dimensional latent output; net 1
sees the (normalized) input x, net m >= 2 sees [x; h_{m-1}]. A learned
d_m x k projection lifts each latent to the full field. A mean-field
Gaussian posterior over all network weights is fit by single-sample
reparameterized ELBO ascent with ADAM; projections and noise variances are
point-estimated so the output posterior stays linear-Gaussian given the
latent belief.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkit
from .errors import NonFiniteLoss, NotFitted, ShapeMismatch
from .numkit import MlpParams

DEFAULT_LATENT_GRID = (5, 10, 15, 20)
DEFAULT_WIDTH_GRID = (8, 16, 32, 64, 128)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
INIT_LOG_STD = -3.0
INIT_LOG_NOISE = float(np.log(0.01))


@dataclass
class SurrogateSpec:
    """Architecture of the latent-chained multi-fidelity model."""

    num_fidelities: int
    input_dim: int
    latent_dim: int
    output_dims: tuple
    hidden_widths: tuple = None  # per fidelity, tuple of hidden layer widths
    activation: str = "tanh"

    def __post_init__(self):
        if self.hidden_widths is None:
            self.hidden_widths = tuple((32, 32) for _ in range(self.num_fidelities))
        self.output_dims = tuple(self.output_dims)
        self.hidden_widths = tuple(tuple(w) for w in self.hidden_widths)
        if len(self.output_dims) != self.num_fidelities:
            raise ShapeMismatch("output_dims length != num_fidelities")
        if len(self.hidden_widths) != self.num_fidelities:
            raise ShapeMismatch("hidden_widths length != num_fidelities")

    def net_input_dim(self, m):
        """Input width of net m (1-based)."""
        return self.input_dim if m == 1 else self.input_dim + self.latent_dim


class SurrogateModel:
    """Mutable surrogate state: net shapes, variational posterior over the
    flattened net weights, projections, noise variances, standardizers."""

    def __init__(self, spec, input_box, seed=0):
        self.spec = spec
        self.input_box = tuple(tuple(b) for b in input_box)
        if len(self.input_box) != spec.input_dim:
            raise ShapeMismatch("input_box length != input_dim")
        rng = np.random.default_rng(seed)
        self.nets = []
        for m in range(1, spec.num_fidelities + 1):
            widths = [spec.net_input_dim(m), *spec.hidden_widths[m - 1], spec.latent_dim]
            Ws, bs = [], []
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                Ws.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_out, fan_in)))
                bs.append(np.zeros(fan_out))
            self.nets.append(MlpParams(Ws, bs, spec.activation))
        self.net_slices = []
        off = 0
        for net in self.nets:
            self.net_slices.append(slice(off, off + net.num_params))
            off += net.num_params
        self.num_weights = off
        self.post_mean = np.concatenate([net.flatten() for net in self.nets])
        self.post_log_std = np.full(off, INIT_LOG_STD)
        self.projections = [
            rng.normal(0.0, 0.1, (d, spec.latent_dim)) for d in spec.output_dims
        ]
        self.noise_log_vars = np.full(spec.num_fidelities, INIT_LOG_NOISE)
        self.out_means = np.zeros(spec.num_fidelities)
        self.out_stds = np.ones(spec.num_fidelities)
        self.fitted = False
        self._adam_state = None

    # -- helpers -----------------------------------------------------------

    def require_fitted(self):
        if not self.fitted:
            raise NotFitted("model has not been fit")

    def normalize_input(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        lo = np.array([b[0] for b in self.input_box])
        hi = np.array([b[1] for b in self.input_box])
        return (x - lo) / (hi - lo)

    def net_params(self, weights, m):
        """MlpParams of net m (1-based) at the given flat weight vector."""
        return self.nets[m - 1].with_flat(weights[self.net_slices[m - 1]])

    def weight_variances(self):
        return np.exp(2.0 * self.post_log_std)

    def noise_var(self, m):
        return float(np.exp(self.noise_log_vars[m - 1]))

    def gram(self, m):
        """A_m^T A_m, cached per fit."""
        if not hasattr(self, "_gram") or self._gram is None:
            self._gram = {}
        if m not in self._gram:
            A = self.projections[m - 1]
            self._gram[m] = A.T @ A
        return self._gram[m]

    def invalidate_caches(self):
        self._gram = None


# ---------------------------------------------------------------------------
# Forward / backward through the fidelity chain

def _chain_forward_batch(model, weights, Xn, upto_m):
    """Latents H_1..H_upto_m for normalized inputs Xn; returns (latents, caches)."""
    latents, caches = [], []
    H = None
    for m in range(1, upto_m + 1):
        net = model.net_params(weights, m)
        inp = Xn if m == 1 else np.hstack([Xn, H])
        H, acts = numkit.mlp_forward_batch(net, inp)
        latents.append(H)
        caches.append((net, acts))
    return latents, caches


def _chain_backward_batch(model, caches, upstream, grad_out=None):
    """Accumulate d<upstream, H_m>/d(flat weights) through the chain.

    upstream: (n, k) cotangent at the last cached latent. Returns a flat
    gradient over all model weights (nets beyond the chain stay zero).
    """
    if grad_out is None:
        grad_out = np.zeros(model.num_weights)
    G = upstream
    p = model.spec.input_dim
    for m in range(len(caches), 0, -1):
        net, acts = caches[m - 1]
        g_params, g_input = numkit.mlp_backward(net, acts, G)
        grad_out[model.net_slices[m - 1]] += g_params
        if m > 1:
            G = g_input[:, p:]
    return grad_out


def forward_latents(model, weights, x):
    """Latent outputs h_1..h_M at flat weights for a single raw input x."""
    Xn = model.normalize_input(x)
    latents, _ = _chain_forward_batch(model, weights, Xn, model.spec.num_fidelities)
    return [H[0] for H in latents]


def latent_chain_jacobian(model, weights, x, m):
    """(latents, J) with J the (k, P) Jacobian of h_m w.r.t. all flat weights.

    Columns belonging to nets m+1..M are exactly zero. One backward pass per
    latent coordinate over a shared forward cache.
    """
    Xn = model.normalize_input(x)
    latents, caches = _chain_forward_batch(model, weights, Xn, m)
    k = model.spec.latent_dim
    J = np.zeros((k, model.num_weights))
    eye = np.eye(k)
    for j in range(k):
        _chain_backward_batch(model, caches, eye[j][None, :], grad_out=J[j])
    return [H[0] for H in latents], J


# ---------------------------------------------------------------------------
# Prediction

def predict(model, x, m):
    """(mean field, diagonal predictive variance) at fidelity m, original units."""
    model.require_fitted()
    from . import belief  # local import; belief builds on this module

    post = belief.latent_delta_posterior(model, x, m)
    A = model.projections[m - 1]
    std = model.out_stds[m - 1]
    mean = (A @ post.mean) * std + model.out_means[m - 1]
    var_std = np.einsum("ij,jk,ik->i", A, post.cov, A) + model.noise_var(m)
    return mean, var_std * std**2


# ---------------------------------------------------------------------------
# ELBO and training

def _standardized_groups(model, dataset):
    """Per-fidelity (Xn, Y_standardized) for fidelities with data."""
    groups = {}
    for m in range(1, model.spec.num_fidelities + 1):
        if dataset.count(m) == 0:
            continue
        X, Y = dataset.arrays(m)
        Ys = (Y - model.out_means[m - 1]) / model.out_stds[m - 1]
        groups[m] = (model.normalize_input(X), Ys)
    return groups


def kl_to_standard_normal(mean, log_std):
    """KL( N(mean, diag exp(2 log_std)) || N(0, I) )."""
    var = np.exp(2.0 * log_std)
    return 0.5 * float(np.sum(var + mean**2 - 1.0 - 2.0 * log_std))


def elbo_and_grads(model, groups, eps, kl_scale=1.0):
    """Single-sample reparameterized ELBO and its gradients.

    groups: fidelity -> (Xn, standardized Y). eps: fixed reparameterization
    noise. kl_scale tempers the KL term relative to the likelihood (see fit).
    Returns (elbo, grads dict with mu, log_std, A (per fidelity), log_noise).
    """
    sigma_w = np.exp(model.post_log_std)
    w = model.post_mean + sigma_w * eps
    gw = np.zeros(model.num_weights)
    gA = [np.zeros_like(A) for A in model.projections]
    g_log_noise = np.zeros(model.spec.num_fidelities)
    loglik = 0.0
    for m, (Xn, Ys) in groups.items():
        latents, caches = _chain_forward_batch(model, w, Xn, m)
        H = latents[-1]
        A = model.projections[m - 1]
        s2 = model.noise_var(m)
        R = Ys - H @ A.T
        n, d = Ys.shape
        sq = float(np.sum(R**2))
        loglik += -0.5 * n * d * np.log(2.0 * np.pi * s2) - 0.5 * sq / s2
        gA[m - 1] += (R.T @ H) / s2
        g_log_noise[m - 1] += -0.5 * n * d + 0.5 * sq / s2
        _chain_backward_batch(model, caches, (R @ A) / s2, grad_out=gw)
    kl = kl_to_standard_normal(model.post_mean, model.post_log_std)
    elbo = loglik - kl_scale * kl
    grads = {
        "mu": gw - kl_scale * model.post_mean,
        "log_std": gw * eps * sigma_w
        - kl_scale * (np.exp(2.0 * model.post_log_std) - 1.0),
        "A": gA,
        "log_noise": g_log_noise,
    }
    return elbo, grads


def elbo_estimate(model, dataset, rng):
    """Single-sample ELBO estimate on the full dataset (diagnostic)."""
    groups = _standardized_groups(model, dataset)
    if not groups:
        raise ShapeMismatch("dataset is empty")
    eps = rng.standard_normal(model.num_weights)
    elbo, _ = elbo_and_grads(model, groups, eps)
    return elbo


class _Adam:
    def __init__(self, shapes, lr):
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params, grads):
        """Ascent step (gradients point uphill)."""
        self.t += 1
        b1c = 1.0 - ADAM_BETA1**self.t
        b2c = 1.0 - ADAM_BETA2**self.t
        for key, g in grads.items():
            self.m[key] = ADAM_BETA1 * self.m[key] + (1 - ADAM_BETA1) * g
            self.v[key] = ADAM_BETA2 * self.v[key] + (1 - ADAM_BETA2) * g**2
            mhat = self.m[key] / b1c
            vhat = self.v[key] / b2c
            params[key] += self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def fit(model, dataset, epochs, learning_rate, seed, warm_start=True,
        kl_scale=None):
    """Full-batch ELBO ascent with ADAM; deterministic given the seed.

    Refreshes the per-fidelity output standardizers from the dataset before
    training. Warm start reuses the current parameters (the default); pass
    warm_start=False to also reset the ADAM moments.

    kl_scale defaults to 1/num_examples. With far more weights than
    examples the untempered objective is maximized by collapsing the
    posterior onto the prior and inflating the noise variance, which
    destroys both the fit and every posterior-based diagnostic; tempering
    the KL keeps the posterior likelihood-driven. Pass kl_scale=1.0 for the
    untempered objective.
    """
    if dataset.count(model.spec.num_fidelities) == 0:
        raise ShapeMismatch("need at least one example at the highest fidelity")
    for m in range(1, model.spec.num_fidelities + 1):
        if dataset.count(m) == 0:
            continue
        _, Y = dataset.arrays(m)
        model.out_means[m - 1] = float(Y.mean())
        std = float(Y.std())
        model.out_stds[m - 1] = std if std > 1e-12 else 1.0
    groups = _standardized_groups(model, dataset)
    if kl_scale is None:
        kl_scale = 1.0 / sum(Xn.shape[0] for Xn, _ in groups.values())
    rng = np.random.default_rng(seed)

    shapes = {"mu": model.num_weights, "log_std": model.num_weights,
              "log_noise": model.spec.num_fidelities}
    shapes.update({f"A{m}": model.projections[m - 1].shape
                   for m in range(1, model.spec.num_fidelities + 1)})
    if model._adam_state is None or not warm_start:
        model._adam_state = _Adam(shapes, learning_rate)
    opt = model._adam_state
    opt.lr = learning_rate

    for _ in range(epochs):
        eps = rng.standard_normal(model.num_weights)
        elbo, grads = elbo_and_grads(model, groups, eps, kl_scale=kl_scale)
        if not np.isfinite(elbo):
            raise NonFiniteLoss(f"ELBO became non-finite ({elbo})")
        flat_grads = {"mu": grads["mu"], "log_std": grads["log_std"],
                      "log_noise": grads["log_noise"]}
        flat_params = {"mu": model.post_mean, "log_std": model.post_log_std,
                       "log_noise": model.noise_log_vars}
        for m in range(1, model.spec.num_fidelities + 1):
            flat_grads[f"A{m}"] = grads["A"][m - 1]
            flat_params[f"A{m}"] = model.projections[m - 1]
        opt.step(flat_params, flat_grads)

    # Keep net templates in sync with the posterior mean.
    for m in range(1, model.spec.num_fidelities + 1):
        self_net = model.net_params(model.post_mean, m)
        model.nets[m - 1] = self_net
    model.invalidate_caches()
    model.fitted = True
    return model


# ---------------------------------------------------------------------------
# Dropout sampling

def dropout_latent_samples(model, x, n, rate, rng):
    """n latent-chain samples under Bernoulli dropout of hidden units.

    Evaluated at the posterior mean weights; kept activations are rescaled
    by 1/(1-rate). Returns an (n, M, k) array.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must be in (0, 1)")
    Xn = model.normalize_input(x)
    M = model.spec.num_fidelities
    k = model.spec.latent_dim
    out = np.empty((n, M, k))
    nets = [model.net_params(model.post_mean, m) for m in range(1, M + 1)]
    keep = 1.0 - rate
    for i in range(n):
        h = None
        for m, net in enumerate(nets, start=1):
            a = Xn[0] if m == 1 else np.concatenate([Xn[0], h])
            L = len(net.layer_weights)
            for l, (W, b) in enumerate(zip(net.layer_weights, net.layer_biases)):
                z = W @ a + b
                if l < L - 1:
                    a = np.tanh(z) if net.activation == "tanh" else z
                    mask = rng.random(a.shape) < keep
                    a = a * mask / keep
                else:
                    a = z
            h = a
            out[i, m - 1] = h
    return out


# ---------------------------------------------------------------------------
# Checkpointing

CHECKPOINT_MAGIC = "mfal-surrogate-v1"


def save_model(model, directory):
    """JSON manifest plus a little-endian float64 blob of all parameters.

    Blob order: posterior mean, posterior log_std, A_1..A_M row-major,
    noise log-variances, output standardizer means then stds.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = model.spec
    manifest = {
        "format": CHECKPOINT_MAGIC,
        "num_fidelities": spec.num_fidelities,
        "input_dim": spec.input_dim,
        "latent_dim": spec.latent_dim,
        "output_dims": list(spec.output_dims),
        "hidden_widths": [list(w) for w in spec.hidden_widths],
        "activation": spec.activation,
        "input_box": [list(b) for b in model.input_box],
        "fitted": model.fitted,
    }
    (directory / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")
    parts = [model.post_mean, model.post_log_std]
    parts += [A.ravel() for A in model.projections]
    parts += [model.noise_log_vars, model.out_means, model.out_stds]
    blob = np.concatenate(parts).astype("<f8")
    (directory / "model.bin").write_bytes(blob.tobytes())


def load_model(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "model.json").read_text())
    if manifest.get("format") != CHECKPOINT_MAGIC:
        raise ValueError("unrecognized checkpoint format")
    spec = SurrogateSpec(
        manifest["num_fidelities"],
        manifest["input_dim"],
        manifest["latent_dim"],
        tuple(manifest["output_dims"]),
        tuple(tuple(w) for w in manifest["hidden_widths"]),
        manifest["activation"],
    )
    model = SurrogateModel(spec, manifest["input_box"])
    blob = np.frombuffer((directory / "model.bin").read_bytes(), dtype="<f8")
    off = 0

    def take(n):
        nonlocal off
        out = blob[off:off + n].copy()
        off += n
        return out

    model.post_mean = take(model.num_weights)
    model.post_log_std = take(model.num_weights)
    for m in range(1, spec.num_fidelities + 1):
        A = model.projections[m - 1]
        model.projections[m - 1] = take(A.size).reshape(A.shape)
    model.noise_log_vars = take(spec.num_fidelities)
    model.out_means = take(spec.num_fidelities)
    model.out_stds = take(spec.num_fidelities)
    for m in range(1, spec.num_fidelities + 1):
        model.nets[m - 1] = model.net_params(model.post_mean, m)
    model.fitted = bool(manifest["fitted"])
    model.invalidate_caches()
    return model
