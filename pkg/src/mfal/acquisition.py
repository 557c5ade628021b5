"""Acquisition scoring and continuous query optimization.

Scores are information measures per unit query cost; the optimizer is a
seeded multi-start coordinate pattern search over the unit input box, run
separately for every fidelity, with deterministic tie-breaking (lowest start
index, then lowest fidelity).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import belief, surrogate
from .errors import ShapeMismatch

SCORE_STRATEGIES = ("dmfal", "mf_bald", "mf_predvar", "dropout_latent")
RANDOM_STRATEGIES = ("mf_random",)
DROPOUT_SHRINKAGE = 1e-6
DEFAULT_DROPOUT_SAMPLES = 100


@dataclass(frozen=True)
class QueryDecision:
    input: np.ndarray
    fidelity: int
    score: float
    strategy: str


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 64
    n_refine: int = 5
    n_iters: int = 40
    init_step: float = 0.05
    dropout_rate: float = 0.2
    dropout_samples: int = DEFAULT_DROPOUT_SAMPLES


def parse_strategy(name):
    """Returns (kind, fixed_fidelity or None); accepts 'fixed_fidelity(m)'."""
    m = re.fullmatch(r"fixed_fidelity\((\d+)\)", name)
    if m:
        return "fixed_fidelity", int(m.group(1))
    if name in SCORE_STRATEGIES + RANDOM_STRATEGIES:
        return name, None
    raise ValueError(f"unknown strategy {name!r}")


# ---------------------------------------------------------------------------
# Scores

def score_dmfal(model, x, m, cost_lambda):
    """Cost-normalized mutual information between y_m(x) and y_M(x)."""
    joint = belief.joint_latent_posterior(model, x, m)
    M = model.spec.num_fidelities
    mi = belief.pairwise_mutual_information(
        joint,
        model.projections[m - 1],
        model.projections[M - 1],
        model.noise_var(m),
        model.noise_var(M),
    )
    return mi / cost_lambda


def score_mf_bald(model, x, m, cost_lambda):
    """Cost-normalized BALD: output entropy minus the conditional (pure
    noise) entropy, which reduces to half the latent log-determinant."""
    post = belief.latent_delta_posterior(model, x, m)
    A = model.projections[m - 1]
    s2 = model.noise_var(m)
    d = A.shape[0]
    H = belief.output_entropy_wa(post, A, s2)
    return (H - 0.5 * d * np.log(2.0 * np.pi * np.e * s2)) / cost_lambda


def score_mf_predvar(model, x, m, cost_lambda):
    """Cost-normalized mean predictive variance (standardized output units)."""
    post = belief.latent_delta_posterior(model, x, m)
    A = model.projections[m - 1]
    var = np.einsum("ij,jk,ik->i", A, post.cov, A) + model.noise_var(m)
    return float(var.mean()) / cost_lambda


def dropout_joint_belief(model, x, m, n_samples, rate, rng):
    """Moment-matched Gaussian over [h_m; h_M] from dropout chain samples,
    with diagonal shrinkage so the empirical covariance factors."""
    M = model.spec.num_fidelities
    samples = surrogate.dropout_latent_samples(model, x, n_samples, rate, rng)
    stacked = np.hstack([samples[:, m - 1, :], samples[:, M - 1, :]])
    mean = stacked.mean(axis=0)
    centered = stacked - mean
    cov = centered.T @ centered / n_samples
    cov += DROPOUT_SHRINKAGE * np.eye(cov.shape[0])
    return belief.GaussianBelief(mean, cov)


def score_dropout_latent(model, x, m, cost_lambda, rng, config):
    joint = dropout_joint_belief(
        model, x, m, config.dropout_samples, config.dropout_rate, rng
    )
    M = model.spec.num_fidelities
    mi = belief.pairwise_mutual_information(
        joint,
        model.projections[m - 1],
        model.projections[M - 1],
        model.noise_var(m),
        model.noise_var(M),
    )
    return mi / cost_lambda


# ---------------------------------------------------------------------------
# Optimization

def _box_arrays(problem):
    lo = np.array([b[0] for b in problem.input_box])
    hi = np.array([b[1] for b in problem.input_box])
    return lo, hi


def pattern_search(score_fn, u0, f0, n_iters, init_step):
    """Projected coordinate-wise pattern search on the unit box.

    Each iteration evaluates all +/- coordinate moves at the current step,
    takes the best strictly improving one, and halves the step when none
    improves. Never returns a value below f0.
    """
    u = np.clip(np.asarray(u0, dtype=np.float64), 0.0, 1.0)
    f = f0
    step = init_step
    p = u.size
    for _ in range(n_iters):
        best_f, best_u = f, None
        for j in range(p):
            for sign in (1.0, -1.0):
                cand = u.copy()
                cand[j] = min(1.0, max(0.0, cand[j] + sign * step))
                fc = score_fn(cand)
                if fc > best_f:
                    best_f, best_u = fc, cand
        if best_u is None:
            step *= 0.5
        else:
            u, f = best_u, best_f
    return u, f


def optimize_query(model, problem, strategy, rng, config=None):
    """Choose the next (input, fidelity) query for the given strategy."""
    model.require_fitted()
    config = config or OptimizerConfig()
    kind, fixed_m = parse_strategy(strategy)
    lo, hi = _box_arrays(problem)
    p = problem.input_dim
    M = problem.num_fidelities

    if kind == "fixed_fidelity":
        if not 1 <= fixed_m <= M:
            raise ValueError(f"fixed fidelity {fixed_m} not in 1..{M}")
        u = rng.random(p)
        return QueryDecision(lo + (hi - lo) * u, fixed_m, 0.0, strategy)
    if kind == "mf_random":
        m = int(rng.integers(1, M + 1))
        u = rng.random(p)
        return QueryDecision(lo + (hi - lo) * u, m, 0.0, strategy)

    def make_score(m):
        lam = problem.fidelities[m - 1].cost_lambda
        if kind == "dmfal":
            return lambda u: score_dmfal(model, lo + (hi - lo) * u, m, lam)
        if kind == "mf_bald":
            return lambda u: score_mf_bald(model, lo + (hi - lo) * u, m, lam)
        if kind == "mf_predvar":
            return lambda u: score_mf_predvar(model, lo + (hi - lo) * u, m, lam)
        return lambda u: score_dropout_latent(
            model, lo + (hi - lo) * u, m, lam, rng, config
        )

    best = None  # (score, fidelity, u); strict > keeps earliest tie
    for m in range(1, M + 1):
        score_fn = make_score(m)
        starts = rng.random((config.n_starts, p))
        values = np.array([score_fn(u) for u in starts])
        order = np.argsort(-values, kind="stable")[: config.n_refine]
        for idx in order:
            u, f = pattern_search(
                score_fn, starts[idx], values[idx], config.n_iters, config.init_step
            )
            if best is None or f > best[0]:
                best = (f, m, u)
    f, m, u = best
    if not np.isfinite(f):
        raise ShapeMismatch(f"non-finite acquisition score {f}")
    return QueryDecision(lo + (hi - lo) * u, m, float(f), strategy)
