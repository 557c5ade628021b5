"""Gaussian belief propagation for the latent outputs.

Delta-method posteriors (Jacobian pushforward of the mean-field weight
posterior), moment-matched joint beliefs over [h_m; h_M], output-space
entropies and mutual information evaluated in k-dimensional latent space via
the identity det(I + AB) = det(I + BA), and the first/second-order Taylor
ratio diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit, surrogate
from .errors import DegenerateExpansion, NegativeMI, ShapeMismatch

MI_CLAMP = 1e-6
HVP_STEP = 1e-5


@dataclass
class GaussianBelief:
    """Mean and symmetric PSD covariance over a latent (or stacked) output."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ShapeMismatch("covariance shape does not match mean")

    @property
    def dim(self):
        return self.mean.size


def latent_delta_posterior(model, x, m):
    """Delta-method belief over h_m: mean h_m(mu, x), cov J diag(var) J^T."""
    model.require_fitted()
    latents, J = surrogate.latent_chain_jacobian(model, model.post_mean, x, m)
    v = model.weight_variances()
    Jv = J * v
    return GaussianBelief(latents[m - 1], Jv @ J.T)


def joint_latent_posterior(model, x, m):
    """Belief over [h_m; h_M] from the stacked shared-weight Jacobian.

    For m = M the two blocks share the same map, so the covariance is
    [[S, S], [S, S]].
    """
    model.require_fitted()
    M = model.spec.num_fidelities
    latents, J_M = surrogate.latent_chain_jacobian(model, model.post_mean, x, M)
    if m == M:
        J = np.vstack([J_M, J_M])
        mean = np.concatenate([latents[-1], latents[-1]])
    else:
        _, J_m = surrogate.latent_chain_jacobian(model, model.post_mean, x, m)
        J = np.vstack([J_m, J_M])
        mean = np.concatenate([latents[m - 1], latents[-1]])
    v = model.weight_variances()
    return GaussianBelief(mean, (J * v) @ J.T)


def logdet_I_plus_SG(S, G):
    """log det(I + S G) for symmetric PSD S and G, evaluated stably.

    Splits G = R^T R through its eigendecomposition so the determinant
    becomes det(I + R S R^T), which is SPD and safe to factor.
    """
    w, U = np.linalg.eigh(G)
    w = np.clip(w, 0.0, None)
    R = (U * np.sqrt(w)).T
    B = R @ S @ R.T
    B = 0.5 * (B + B.T)
    _, logdet = numkit.cholesky_logdet(np.eye(B.shape[0]) + B, jitter=0.0)
    return logdet


def output_entropy_wa(belief, A, sigma2):
    """Entropy (nats) of y = A h + noise, via the low-rank log-det identity.

    H = (d/2) log(2 pi e sigma2) + 1/2 logdet(I_k + (A^T A) S / sigma2),
    computed entirely in k x k space.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    A = np.asarray(A, dtype=np.float64)
    d, k = A.shape
    if belief.dim != k:
        raise ShapeMismatch("projection latent width does not match belief")
    ld = logdet_I_plus_SG(belief.cov, (A.T @ A) / sigma2)
    return 0.5 * d * np.log(2.0 * np.pi * np.e * sigma2) + 0.5 * ld


def pairwise_mutual_information(joint, A_m, A_M, sigma2_m, sigma2_M):
    """MI (nats) between the two noisy projected views of a 2k joint belief.

    MI = H(y_m) + H(y_M) - H(y_m, y_M); the d log(sigma2) terms cancel, so
    only the three k- and 2k-dimensional log-determinants remain.
    """
    if sigma2_m <= 0 or sigma2_M <= 0:
        raise ValueError("noise variances must be positive")
    k = A_m.shape[1]
    if joint.dim != 2 * k or A_M.shape[1] != k:
        raise ShapeMismatch("joint belief must have dimension 2k")
    S = joint.cov
    G_m = (A_m.T @ A_m) / sigma2_m
    G_M = (A_M.T @ A_M) / sigma2_M
    ld_m = logdet_I_plus_SG(S[:k, :k], G_m)
    ld_M = logdet_I_plus_SG(S[k:, k:], G_M)
    G_joint = np.zeros((2 * k, 2 * k))
    G_joint[:k, :k] = G_m
    G_joint[k:, k:] = G_M
    ld_joint = logdet_I_plus_SG(S, G_joint)
    mi = 0.5 * (ld_m + ld_M - ld_joint)
    if mi < -MI_CLAMP:
        raise NegativeMI(f"mutual information {mi} below -{MI_CLAMP}")
    return max(mi, 0.0)


def taylor_ratio(net, post_mean, post_log_std, X, n_weight_samples, rng,
                 output_scale=1.0, output_shift=0.0):
    """Mean and std of |first-order| / |second-order| Taylor expansions of a
    scalar-output network over sampled weights and the given inputs.

    The second-order term uses one Hessian-vector product per sample,
    computed by central differences of analytic gradients along the sampled
    weight displacement. output_scale/output_shift let the ratio be taken on
    an affinely rescaled output (e.g. the de-standardized prediction), which
    matters because the ratio is not shift-invariant.
    """
    if net.output_dim != 1:
        raise ShapeMismatch("taylor_ratio requires a scalar-output network")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    sigma = np.exp(post_log_std)
    upstream = np.array([1.0])
    ratios = []
    for x in X:
        mean_net = net.with_flat(post_mean)
        f_mu, _ = numkit.mlp_forward(mean_net, x)
        f_mu = output_scale * float(f_mu[0]) + output_shift
        g = numkit.mlp_param_gradient(mean_net, x, upstream) * output_scale
        for _ in range(n_weight_samples):
            delta = sigma * rng.standard_normal(post_mean.size)
            first = f_mu + float(g @ delta)
            norm = np.linalg.norm(delta)
            if norm == 0.0:
                ratios.append(1.0)
                continue
            u = delta / norm
            h = HVP_STEP
            g_plus = numkit.mlp_param_gradient(net.with_flat(post_mean + h * u), x, upstream)
            g_minus = numkit.mlp_param_gradient(net.with_flat(post_mean - h * u), x, upstream)
            hvp = (g_plus - g_minus) / (2.0 * h) * norm * output_scale
            second = first + 0.5 * float(delta @ hvp)
            if abs(second) < 1e-12:
                raise DegenerateExpansion("second-order expansion vanished")
            ratios.append(abs(first) / abs(second))
    ratios = np.array(ratios)
    return float(ratios.mean()), float(ratios.std())
