import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tactile_gplvm.gp import (
    FactorizationError,
    KernelParams,
    LatentPoint,
    NoiseLevel,
    build_covariance,
    cholesky_factor,
    fit_kernel_params,
    gp_posterior,
    kernel_eval,
    kernel_matrix,
    lml_gradient,
    log_marginal_likelihood,
)

NOISE = NoiseLevel()
finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.05, 20)
latent = st.builds(LatentPoint, finite, st.floats(-5, 5))
params = st.builds(KernelParams, positive, positive, positive)


def dense_lml(X, Y, p, noise):
    """Textbook form with an explicit inverse and determinant."""
    n, D = Y.shape
    K = np.array([[kernel_eval(LatentPoint(*a), LatentPoint(*b), p) for b in X] for a in X])
    K += noise.sigma_n**2 * np.eye(n)
    Kinv = np.linalg.inv(K)
    _, logdet = np.linalg.slogdet(K)
    return (-(D / 2) * np.trace(Kinv @ (Y @ Y.T) / D) - (D / 2) * logdet
            - (D * n / 2) * math.log(2 * math.pi))


def random_instance(rng, n_max=10, d_max=5):
    n = int(rng.integers(1, n_max + 1))
    D = int(rng.integers(1, d_max + 1))
    X = np.column_stack([rng.uniform(-10, 10, n), rng.uniform(-2, 2, n)])
    Y = rng.normal(0, 3, (n, D))
    p = KernelParams(*rng.uniform([0.5, 1.0, 0.3], [5.0, 8.0, 3.0]))
    return X, Y, p


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        assert kernel_eval(LatentPoint(0, 0), LatentPoint(0, 0), KernelParams(2, 1, 1)) == 4.0

    def test_unit_step_in_r(self):
        v = kernel_eval(LatentPoint(0, 0), LatentPoint(1, 0), KernelParams(1, 1, 1))
        assert v == pytest.approx(0.606530659712633423, rel=1e-14)

    def test_anisotropic_example(self):
        v = kernel_eval(LatentPoint(3, 2), LatentPoint(1, 1), KernelParams(1.5, 2.0, 0.5))
        assert v == pytest.approx(0.184691246903772289, rel=1e-14)

    def test_non_finite_latent_rejected(self):
        with pytest.raises(ValueError):
            LatentPoint(float("nan"), 0.0)

    @pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, float("inf"))])
    def test_params_must_be_positive(self, bad):
        with pytest.raises(ValueError):
            KernelParams(*bad)

    @given(latent, latent, params)
    def test_symmetric_and_bounded(self, a, b, p):
        k_ab = kernel_eval(a, b, p)
        assert k_ab == kernel_eval(b, a, p)
        assert 0 <= k_ab <= p.sigma_f**2
        if a == b:
            assert k_ab == p.sigma_f**2

    @given(params, st.integers(0, 2**32 - 1))
    def test_matrix_agrees_with_scalar(self, p, seed):
        rng = np.random.default_rng(seed)
        A, B = rng.normal(0, 5, (4, 2)), rng.normal(0, 5, (3, 2))
        M = kernel_matrix(A, B, p)
        ref = [[kernel_eval(LatentPoint(*a), LatentPoint(*b), p) for b in B] for a in A]
        np.testing.assert_allclose(M, ref, rtol=1e-12, atol=1e-300)


class TestCovariance:
    def test_single_point(self):
        cf = build_covariance([LatentPoint(0, 0)], KernelParams(1, 1, 1), NOISE)
        assert cf.K[0, 0] == pytest.approx(2.2996, rel=1e-14)

    def test_duplicate_inputs_still_factorize(self):
        p = KernelParams(1.7, 1, 1)
        cf = build_covariance(np.zeros((5, 2)), p, NOISE)
        np.testing.assert_allclose(cf.K, p.sigma_f**2 * np.ones((5, 5)) + NOISE.sigma_n**2 * np.eye(5))
        np.testing.assert_allclose(cf.L @ cf.L.T, cf.K, rtol=1e-12)

    def test_random_thirty_points_eigen_floor(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(-10, 10, (30, 2))
        cf = build_covariance(X, KernelParams(4, 3, 1), NOISE)
        assert np.linalg.eigvalsh(cf.K).min() >= NOISE.sigma_n**2 * (1 - 1e-6)

    def test_reconstruction(self):
        rng = np.random.default_rng(1)
        cf = build_covariance(rng.normal(0, 3, (12, 2)), KernelParams(2, 2, 1), NOISE)
        err = np.linalg.norm(cf.L @ cf.L.T - cf.K) / np.linalg.norm(cf.K)
        assert err < 1e-8

    def test_indefinite_matrix_reports_pivot(self):
        K = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
        with pytest.raises(FactorizationError) as exc:
            cholesky_factor(K)
        assert exc.value.pivot == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_covariance(np.zeros((0, 2)), KernelParams(1, 1, 1), NOISE)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            build_covariance([[0.0, np.inf]], KernelParams(1, 1, 1), NOISE)


class TestLogMarginalLikelihood:
    def test_one_by_one_closed_form(self):
        p = KernelParams(1.3, 2.0, 1.0)
        v = log_marginal_likelihood([LatentPoint(4, -1)], [[1.7]], p, NOISE)
        assert v == pytest.approx(-1.94985058594347463, rel=1e-13)

    def test_zero_outputs_leave_only_determinant(self):
        rng = np.random.default_rng(2)
        X = rng.normal(0, 3, (6, 2))
        p = KernelParams(2, 3, 1)
        cf = build_covariance(X, p, NOISE)
        D = 4
        expected = -(D / 2) * cf.log_det - (D * 6 / 2) * math.log(2 * math.pi)
        assert log_marginal_likelihood(X, np.zeros((6, D)), p, NOISE) == pytest.approx(expected, rel=1e-12)

    def test_dense_oracle_small(self):
        rng = np.random.default_rng(3)
        X = rng.normal(0, 3, (3, 2))
        Y = rng.normal(0, 2, (3, 2))
        p = KernelParams(1.5, 2.0, 0.7)
        assert log_marginal_likelihood(X, Y, p, NOISE) == pytest.approx(dense_lml(X, Y, p, NOISE), rel=1e-8)

    def test_row_mismatch_rejected(self):
        with pytest.raises(ValueError):
            log_marginal_likelihood(np.zeros((3, 2)), np.zeros((2, 4)), KernelParams(1, 1, 1), NOISE)


def _fd(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


class TestGradient:
    def test_random_instance_against_finite_differences(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(-5, 5, (4, 2))
        Y = rng.normal(0, 2, (4, 3))
        p = KernelParams(1.8, 2.5, 0.9)
        g = lml_gradient(X, Y, p, NOISE)
        for i in range(4):
            for j in range(2):
                def f(v):
                    Z = X.copy()
                    Z[i, j] = v
                    return log_marginal_likelihood(Z, Y, p, NOISE)
                assert g.dX[i, j] == pytest.approx(_fd(f, X[i, j]), rel=1e-4, abs=1e-7)
        base = p.as_array()
        for k in range(3):
            def f(v):
                q = base.copy()
                q[k] = v
                return log_marginal_likelihood(X, Y, KernelParams.from_array(q), NOISE)
            assert g.d_params[k] == pytest.approx(_fd(f, base[k]), rel=1e-4, abs=1e-7)

    def test_value_matches_lml(self):
        rng = np.random.default_rng(5)
        X, Y, p = random_instance(rng)
        assert lml_gradient(X, Y, p, NOISE).value == pytest.approx(log_marginal_likelihood(X, Y, p, NOISE), rel=1e-10)

    def test_zero_outputs_gradient_is_log_det_gradient(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-4, 4, (5, 2))
        p = KernelParams(2.0, 2.0, 1.0)
        D = 3
        g = lml_gradient(X, np.zeros((5, D)), p, NOISE)

        def neg_half_logdet(Z):
            return -(D / 2) * build_covariance(Z, p, NOISE).log_det

        for i in range(5):
            for j in range(2):
                def f(v):
                    Z = X.copy()
                    Z[i, j] = v
                    return neg_half_logdet(Z)
                assert g.dX[i, j] == pytest.approx(_fd(f, X[i, j]), rel=1e-4, abs=1e-8)

    def test_mirror_pair_antisymmetric(self):
        X = np.array([[-1.5, 0.0], [1.5, 0.0]])
        Y = np.array([[0.7, -2.0], [0.7, -2.0]])
        g = lml_gradient(X, Y, KernelParams(1.5, 2.0, 1.0), NOISE)
        assert g.dX[0, 0] == pytest.approx(-g.dX[1, 0], rel=1e-12)


class TestPosterior:
    def test_near_noiseless_interpolation(self):
        x = np.array([-2.0, 0.5, 3.0])
        y = np.array([1.0, -0.4, 2.2])
        mean, var = gp_posterior(x, y, x[1], KernelParams(2, 1.5, 1), NoiseLevel(1e-6))
        assert mean[0] == pytest.approx(-0.4, abs=1e-5)
        assert var[0] > 0

    def test_prior_reversion_far_away(self):
        p = KernelParams(2, 1, 1)
        mean, var = gp_posterior([0.0, 1.0], [3.0, -1.0], [50.0], p, NOISE)
        assert mean[0] == pytest.approx(0.0, abs=1e-12)
        assert var[0] == pytest.approx(p.sigma_f**2 + NOISE.sigma_n**2)

    def test_parabola_argmin(self):
        r = np.array([0.0, 2.0, 4.0, 6.0, 8.0])
        d = (r - 3.7) ** 2
        fit = fit_kernel_params(np.column_stack([r, 0 * r]), d - d.mean(), NoiseLevel(0.1),
                                KernelParams(10, 3, 1))
        grid = np.arange(0.0, 8.0 + 1e-9, 0.01)
        mean, _ = gp_posterior(r, d - d.mean(), grid, fit.params, NoiseLevel(0.1))
        # dense grid oracle of the generating parabola has its minimum at 3.70
        assert abs(grid[np.argmin(mean)] - 3.7) <= 0.5

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError):
            gp_posterior(np.zeros(0), np.zeros(0), [0.0], KernelParams(1, 1, 1), NOISE)


class TestFit:
    def test_never_worse_than_start(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-5, 5, (15, 2))
        Y = rng.normal(0, 2, (15, 3))
        init = KernelParams(1, 1, 1)
        fit = fit_kernel_params(X, Y, NOISE, init)
        assert fit.log_likelihood >= log_marginal_likelihood(X, Y, init, NOISE) - 1e-9
