"""Gaussian belief propagation: delta posteriors, entropies, mutual
information, and the Taylor-ratio diagnostic."""

import numpy as np
import pytest

from conftest import random_mlp, random_spd
from mfal import belief, numkit, surrogate
from mfal.belief import GaussianBelief
from mfal.errors import DegenerateExpansion, NotFitted, ShapeMismatch
from mfal.surrogate import SurrogateModel, SurrogateSpec


def direct_gaussian_entropy(cov):
    """Dense d-dimensional Gaussian entropy, the independent oracle."""
    sign, logdet = np.linalg.slogdet(2.0 * np.pi * np.e * cov)
    assert sign > 0
    return 0.5 * logdet


class TestGaussianBelief:
    def test_shape_validation(self):
        with pytest.raises(ShapeMismatch):
            GaussianBelief(np.zeros(3), np.eye(2))

    def test_dim(self):
        assert GaussianBelief(np.zeros(4), np.eye(4)).dim == 4


def linear_single_layer_model(seed=0, p=2, k=3):
    """One-fidelity model whose net is a single affine layer, so the latent
    is exactly linear in the weights and the delta method is exact."""
    spec = SurrogateSpec(1, p, k, (k + 1,), hidden_widths=((),))
    model = SurrogateModel(spec, ((0.0, 1.0),) * p, seed=seed)
    model.fitted = True
    return model


class TestDeltaPosterior:
    def test_exact_for_single_layer_net(self):
        # h = Wx + b is linear in (W, b): cov has closed form
        # Var(h_j) = sum_i v_{W_ji} x_i^2 + v_{b_j} with no cross terms.
        model = linear_single_layer_model(seed=1)
        rng = np.random.default_rng(2)
        model.post_log_std[:] = rng.uniform(-3.0, -1.0, model.num_weights)
        x = np.array([0.3, 0.8])
        post = belief.latent_delta_posterior(model, x, 1)
        v = model.weight_variances()
        k, p = 3, 2
        expected = np.zeros((k, k))
        for j in range(k):
            w_var = v[j * p:(j + 1) * p]
            b_var = v[k * p + j]
            expected[j, j] = float(w_var @ x**2) + b_var
        assert post.cov == pytest.approx(expected, rel=1e-12)
        W = model.nets[0].layer_weights[0]
        b = model.nets[0].layer_biases[0]
        assert post.mean == pytest.approx(W @ x + b, rel=1e-12)

    def test_matches_monte_carlo_of_linearized_map(self):
        spec = SurrogateSpec(1, 2, 2, (4,), hidden_widths=((6,),))
        model = SurrogateModel(spec, ((0.0, 1.0),) * 2, seed=3)
        model.post_log_std[:] = -2.5
        model.fitted = True
        x = np.array([0.6, 0.2])
        post = belief.latent_delta_posterior(model, x, 1)
        _, J = surrogate.latent_chain_jacobian(model, model.post_mean, x, 1)
        rng = np.random.default_rng(0)
        n = 50000
        deltas = rng.standard_normal((n, model.num_weights)) * np.exp(
            model.post_log_std)
        H = deltas @ J.T
        mc_cov = H.T @ H / n
        rel = np.linalg.norm(post.cov - mc_cov) / np.linalg.norm(post.cov)
        assert rel < 0.05

    def test_requires_fitted(self):
        model = linear_single_layer_model()
        model.fitted = False
        with pytest.raises(NotFitted):
            belief.latent_delta_posterior(model, np.array([0.5, 0.5]), 1)


class TestJointPosterior:
    def test_top_fidelity_joint_is_duplicated_block(self):
        spec = SurrogateSpec(2, 2, 2, (3, 4), hidden_widths=((5,), (5,)))
        model = SurrogateModel(spec, ((0.0, 1.0),) * 2, seed=4)
        model.fitted = True
        x = np.array([0.5, 0.3])
        joint = belief.joint_latent_posterior(model, x, 2)
        single = belief.latent_delta_posterior(model, x, 2)
        k = 2
        assert joint.cov[:k, :k] == pytest.approx(single.cov, rel=1e-12)
        assert joint.cov[k:, k:] == pytest.approx(single.cov, rel=1e-12)
        assert joint.cov[:k, k:] == pytest.approx(single.cov, rel=1e-12)
        assert joint.mean[:k] == pytest.approx(joint.mean[k:])

    def test_cross_fidelity_blocks_match_stacked_jacobian(self):
        spec = SurrogateSpec(2, 2, 2, (3, 4), hidden_widths=((5,), (5,)))
        model = SurrogateModel(spec, ((0.0, 1.0),) * 2, seed=5)
        model.fitted = True
        x = np.array([0.1, 0.9])
        joint = belief.joint_latent_posterior(model, x, 1)
        _, J1 = surrogate.latent_chain_jacobian(model, model.post_mean, x, 1)
        _, J2 = surrogate.latent_chain_jacobian(model, model.post_mean, x, 2)
        v = model.weight_variances()
        assert joint.cov[:2, :2] == pytest.approx((J1 * v) @ J1.T, rel=1e-12)
        assert joint.cov[2:, 2:] == pytest.approx((J2 * v) @ J2.T, rel=1e-12)
        assert joint.cov[:2, 2:] == pytest.approx((J1 * v) @ J2.T, rel=1e-12)
        diag1 = belief.latent_delta_posterior(model, x, 1)
        assert joint.mean[:2] == pytest.approx(diag1.mean)


class TestLogdetIdentity:
    def test_matches_direct_slogdet(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            k = int(rng.integers(2, 8))
            S = random_spd(rng, k)
            G = random_spd(rng, k)
            ld = belief.logdet_I_plus_SG(S, G)
            _, direct = np.linalg.slogdet(np.eye(k) + S @ G)
            assert ld == pytest.approx(direct, rel=1e-10, abs=1e-12)

    def test_rank_deficient_g(self):
        rng = np.random.default_rng(7)
        S = random_spd(rng, 5)
        a = rng.standard_normal((5, 2))
        G = a @ a.T
        ld = belief.logdet_I_plus_SG(S, G)
        _, direct = np.linalg.slogdet(np.eye(5) + S @ G)
        assert ld == pytest.approx(direct, rel=1e-10)


class TestOutputEntropy:
    def test_equals_dense_output_space_entropy(self):
        rng = np.random.default_rng(8)
        for d, k in [(6, 2), (12, 3), (20, 5)]:
            S = random_spd(rng, k)
            A = rng.standard_normal((d, k))
            sigma2 = float(rng.uniform(0.01, 1.0))
            post = GaussianBelief(np.zeros(k), S)
            H = belief.output_entropy_wa(post, A, sigma2)
            direct = direct_gaussian_entropy(A @ S @ A.T + sigma2 * np.eye(d))
            assert H == pytest.approx(direct, rel=1e-10)

    def test_invalid_noise_raises(self):
        post = GaussianBelief(np.zeros(2), np.eye(2))
        with pytest.raises(ValueError):
            belief.output_entropy_wa(post, np.ones((4, 2)), 0.0)

    def test_projection_width_mismatch_raises(self):
        post = GaussianBelief(np.zeros(2), np.eye(2))
        with pytest.raises(ShapeMismatch):
            belief.output_entropy_wa(post, np.ones((4, 3)), 1.0)


def joint_belief(k, S):
    return GaussianBelief(np.zeros(2 * k), S)


class TestMutualInformation:
    def test_independent_views_have_zero_mi(self):
        rng = np.random.default_rng(9)
        k = 3
        S = np.zeros((2 * k, 2 * k))
        S[:k, :k] = random_spd(rng, k)
        S[k:, k:] = random_spd(rng, k)
        A = rng.standard_normal((5, k))
        mi = belief.pairwise_mutual_information(
            joint_belief(k, S), A, A, 0.5, 0.5)
        assert mi == pytest.approx(0.0, abs=1e-10)

    def test_closed_form_scalar_case(self):
        # k=1, d=1, A=[1], sigma2=1, latent correlation rho:
        # MI = 0.5 log(4 / (4 - rho^2)).
        for rho in (0.0, 0.5, 1.0):
            S = np.array([[1.0, rho], [rho, 1.0]])
            A = np.array([[1.0]])
            mi = belief.pairwise_mutual_information(
                joint_belief(1, S), A, A, 1.0, 1.0)
            assert mi == pytest.approx(0.5 * np.log(4.0 / (4.0 - rho**2)),
                                       abs=1e-12)

    def test_matches_dense_entropy_difference(self):
        rng = np.random.default_rng(10)
        k, d_m, d_M = 2, 5, 8
        S = random_spd(rng, 2 * k)
        A_m = rng.standard_normal((d_m, k))
        A_M = rng.standard_normal((d_M, k))
        s2m, s2M = 0.3, 0.7
        mi = belief.pairwise_mutual_information(
            joint_belief(k, S), A_m, A_M, s2m, s2M)
        # Dense oracle in output space.
        P = np.zeros((d_m + d_M, 2 * k))
        P[:d_m, :k] = A_m
        P[d_m:, k:] = A_M
        noise = np.diag([s2m] * d_m + [s2M] * d_M)
        C = P @ S @ P.T + noise
        H_m = direct_gaussian_entropy(C[:d_m, :d_m])
        H_M = direct_gaussian_entropy(C[d_m:, d_m:])
        H_joint = direct_gaussian_entropy(C)
        assert mi == pytest.approx(H_m + H_M - H_joint, rel=1e-9, abs=1e-10)

    def test_symmetric_in_the_two_views(self):
        rng = np.random.default_rng(11)
        k = 2
        S = random_spd(rng, 2 * k)
        A1 = rng.standard_normal((4, k))
        A2 = rng.standard_normal((6, k))
        perm = np.r_[np.arange(k, 2 * k), np.arange(k)]
        S_swapped = S[np.ix_(perm, perm)]
        mi_a = belief.pairwise_mutual_information(
            joint_belief(k, S), A1, A2, 0.2, 0.9)
        mi_b = belief.pairwise_mutual_information(
            joint_belief(k, S_swapped), A2, A1, 0.9, 0.2)
        assert mi_a == pytest.approx(mi_b, rel=1e-10)

    def test_decreasing_in_noise(self):
        rng = np.random.default_rng(12)
        k = 2
        S = random_spd(rng, 2 * k) + 0.5  # positive cross-covariance
        S = 0.5 * (S + S.T)
        S += 2 * k * np.eye(2 * k)
        A = rng.standard_normal((5, k))
        mis = [
            belief.pairwise_mutual_information(joint_belief(k, S), A, A, s2, s2)
            for s2 in (0.1, 1.0, 10.0)
        ]
        assert mis[0] > mis[1] > mis[2]

    def test_nonnegative_clamp(self):
        # Exactly independent blocks can come out at -1e-16; result is 0.
        k = 2
        S = np.eye(2 * k)
        A = np.eye(k)
        mi = belief.pairwise_mutual_information(joint_belief(k, S), A, A, 1.0, 1.0)
        assert mi >= 0.0

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ShapeMismatch):
            belief.pairwise_mutual_information(
                GaussianBelief(np.zeros(3), np.eye(3)),
                np.ones((2, 1)), np.ones((2, 1)), 1.0, 1.0)

    def test_invalid_noise_raises(self):
        with pytest.raises(ValueError):
            belief.pairwise_mutual_information(
                joint_belief(1, np.eye(2)), np.ones((1, 1)), np.ones((1, 1)),
                -1.0, 1.0)


class TestTaylorRatio:
    def test_exactly_one_for_affine_network(self):
        # Single affine layer: the second-order term vanishes identically.
        rng = np.random.default_rng(13)
        net = random_mlp(rng, (2, 1))
        post_mean = net.flatten() + 2.0  # keep f away from zero
        mean_ratio, std_ratio = belief.taylor_ratio(
            net, post_mean, np.full(net.num_params, -2.0), rng.random((5, 2)),
            4, np.random.default_rng(0))
        assert mean_ratio == pytest.approx(1.0, abs=1e-9)
        assert std_ratio == pytest.approx(0.0, abs=1e-9)

    def test_close_to_one_for_tight_posterior(self):
        rng = np.random.default_rng(14)
        net = random_mlp(rng, (2, 8, 1))
        post_mean = net.flatten()
        mean_ratio, std_ratio = belief.taylor_ratio(
            net, post_mean, np.full(net.num_params, -4.0), rng.random((10, 2)),
            5, np.random.default_rng(1), output_shift=5.0)
        assert abs(mean_ratio - 1.0) < 0.05
        assert std_ratio < 0.05

    def test_shift_changes_the_ratio(self):
        rng = np.random.default_rng(15)
        net = random_mlp(rng, (2, 8, 1))
        X = rng.random((5, 2))
        log_std = np.full(net.num_params, -2.0)
        a = belief.taylor_ratio(net, net.flatten(), log_std, X, 5,
                                np.random.default_rng(2), output_shift=0.0)
        b = belief.taylor_ratio(net, net.flatten(), log_std, X, 5,
                                np.random.default_rng(2), output_shift=50.0)
        assert a[0] != pytest.approx(b[0])

    def test_zero_displacement_gives_ratio_one(self):
        rng = np.random.default_rng(16)
        net = random_mlp(rng, (2, 4, 1))
        mean_ratio, std_ratio = belief.taylor_ratio(
            net, net.flatten(), np.full(net.num_params, -np.inf),
            rng.random((3, 2)), 3, np.random.default_rng(3), output_shift=1.0)
        assert mean_ratio == 1.0
        assert std_ratio == 0.0

    def test_degenerate_expansion_raises(self):
        # Zero weights and near-zero displacements make both terms vanish.
        net = numkit.MlpParams([np.zeros((1, 2))], [np.zeros(1)])
        with pytest.raises(DegenerateExpansion):
            belief.taylor_ratio(
                net, net.flatten(), np.full(net.num_params, -60.0),
                np.zeros((1, 2)), 2, np.random.default_rng(4))

    def test_requires_scalar_output(self):
        net = random_mlp(np.random.default_rng(0), (2, 3, 2))
        with pytest.raises(ShapeMismatch):
            belief.taylor_ratio(net, net.flatten(),
                                np.zeros(net.num_params), np.zeros((1, 2)),
                                1, np.random.default_rng(0))
