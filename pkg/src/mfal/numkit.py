"""Dense linear algebra and small-MLP forward/backward machinery.

Matrices are plain float64 numpy arrays (row-major). Networks are lists of
(weight, bias) layers with tanh on hidden layers and identity on the output
layer; everything needed for weight-space Jacobians is computed by explicit
backward passes, so no autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite, ShapeMismatch

# Escalation sequence applied on top of the caller's jitter when a Cholesky
# pivot fails; delta-method covariances J diag(v) J^T are often rank-deficient.
JITTER_LADDER = (1e-10, 1e-8, 1e-6, 1e-4)
MAX_JITTER = 1e-4


def cholesky_logdet(S, jitter=0.0):
    """Cholesky factor and log-determinant of S + jitter*I.

    Escalates the jitter through JITTER_LADDER if a pivot fails; raises
    NotPositiveDefinite once the ladder is exhausted.

    Returns (L, logdet) with L lower-triangular, L @ L.T = S + jitter_eff*I.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"expected square matrix, got {S.shape}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    scale = np.abs(S).max()
    if scale > 0 and np.abs(S - S.T).max() > 1e-10 * scale:
        raise ShapeMismatch("matrix is not symmetric within 1e-10 relative")

    n = S.shape[0]
    eye = np.eye(n)
    candidates = [jitter] + [j for j in JITTER_LADDER if j > jitter]
    for j in candidates:
        try:
            L = np.linalg.cholesky(S + j * eye)
        except np.linalg.LinAlgError:
            continue
        return L, 2.0 * float(np.sum(np.log(np.diag(L))))
    raise NotPositiveDefinite(
        f"Cholesky failed for {n}x{n} matrix even with jitter {MAX_JITTER}"
    )


@dataclass
class MlpParams:
    """Weights of a fully connected network.

    layer_weights[l] has shape (out_l, in_l); hidden layers use `activation`
    (tanh or identity), the final layer is always identity.
    """

    layer_weights: list = field(default_factory=list)
    layer_biases: list = field(default_factory=list)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layer_weights) != len(self.layer_biases):
            raise ShapeMismatch("weights/biases length mismatch")
        for l, (W, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            if W.shape[0] != b.shape[0]:
                raise ShapeMismatch(f"layer {l}: bias length {b.shape[0]} != rows {W.shape[0]}")
            if l > 0 and W.shape[1] != self.layer_weights[l - 1].shape[0]:
                raise ShapeMismatch(f"layer {l}: input width does not compose")

    @property
    def input_dim(self):
        return self.layer_weights[0].shape[1]

    @property
    def output_dim(self):
        return self.layer_weights[-1].shape[0]

    @property
    def num_params(self):
        return sum(W.size + b.size for W, b in zip(self.layer_weights, self.layer_biases))

    def flatten(self):
        """Concatenate all parameters: per layer, row-major W then b."""
        parts = []
        for W, b in zip(self.layer_weights, self.layer_biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta):
        """New MlpParams with the same shapes, values taken from flat vector."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise ShapeMismatch(f"expected {self.num_params} params, got {theta.shape}")
        Ws, bs = [], []
        off = 0
        for W, b in zip(self.layer_weights, self.layer_biases):
            Ws.append(theta[off:off + W.size].reshape(W.shape).copy())
            off += W.size
            bs.append(theta[off:off + b.size].copy())
            off += b.size
        return MlpParams(Ws, bs, self.activation)


def _act(params, z):
    return np.tanh(z) if params.activation == "tanh" else z


def mlp_forward(params, x):
    """Forward pass. Returns (output, activations) where activations[l] is the
    input to layer l (activations[0] == x) followed by the final output."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ShapeMismatch(f"input shape {x.shape}, expected ({params.input_dim},)")
    acts = [x]
    a = x
    L = len(params.layer_weights)
    for l, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        z = W @ a + b
        a = z if l == L - 1 else _act(params, z)
        acts.append(a)
    return a, acts


def mlp_forward_batch(params, X):
    """Vectorized forward over rows of X (n, input_dim)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeMismatch(f"batch shape {X.shape}, expected (n, {params.input_dim})")
    acts = [X]
    A = X
    L = len(params.layer_weights)
    for l, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        Z = A @ W.T + b
        A = Z if l == L - 1 else _act(params, Z)
        acts.append(A)
    return A, acts


def _backward_from_cache(params, acts, upstream):
    """Shared backward pass. upstream: (k,) or (n, k) matching acts.

    Returns (flat param gradient, gradient w.r.t. the network input).
    Batched inputs sum the parameter gradient over the batch.
    """
    batched = acts[0].ndim == 2
    L = len(params.layer_weights)
    grads_W = [None] * L
    grads_b = [None] * L
    delta = upstream
    for l in range(L - 1, -1, -1):
        a_in = acts[l]
        if batched:
            grads_W[l] = delta.T @ a_in
            grads_b[l] = delta.sum(axis=0)
        else:
            grads_W[l] = np.outer(delta, a_in)
            grads_b[l] = delta
        delta = delta @ params.layer_weights[l]
        if l > 0 and params.activation == "tanh":
            delta = delta * (1.0 - a_in ** 2)
    flat = np.concatenate(
        [np.concatenate([gW.ravel(), gb]) for gW, gb in zip(grads_W, grads_b)]
    )
    return flat, delta


def mlp_param_gradient(params, x, upstream):
    """Gradient of <upstream, mlp_forward(params, x)> w.r.t. flat parameters."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (params.output_dim,):
        raise ShapeMismatch(f"upstream shape {upstream.shape}, expected ({params.output_dim},)")
    _, acts = mlp_forward(params, x)
    flat, _ = _backward_from_cache(params, acts, upstream)
    return flat

def mlp_backward(params, acts, upstream):
    """Backward pass from a forward cache; returns (param grad, input grad)."""
    return _backward_from_cache(params, acts, upstream)


def latent_weight_jacobian(params, x):
    """Jacobian of the network output w.r.t. flat parameters, shape (k, P).

    Row j is mlp_param_gradient with upstream e_j; one backward pass per row,
    sharing a single forward cache.
    """
    _, acts = mlp_forward(params, x)
    k = params.output_dim
    J = np.empty((k, params.num_params))
    eye = np.eye(k)
    for j in range(k):
        J[j], _ = _backward_from_cache(params, acts, eye[j])
    return J
