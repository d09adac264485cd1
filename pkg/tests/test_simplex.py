"""Simplex coordinate maps, metric, and projection."""

import numpy as np
import pytest

from gsbbse.simplex import (
    centered_logodds,
    euclidean_simplex_projection,
    fisher_rao_apply,
    fisher_rao_inner,
    project_tangent,
    softmax_centered,
)


class TestSoftmaxCentered:
    def test_uniform_at_zero(self):
        np.testing.assert_allclose(softmax_centered(np.zeros(3)), np.full(3, 1 / 3))

    def test_reference_point(self):
        q = softmax_centered(np.array([0.4621, -0.2310, -0.2310]))
        np.testing.assert_allclose(q, [0.5, 0.25, 0.25], atol=1e-4)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        theta = rng.normal(size=6)
        np.testing.assert_allclose(
            softmax_centered(theta + 7.3), softmax_centered(theta), atol=1e-13
        )

    def test_overflow_safe(self):
        q = softmax_centered(np.array([1000.0, 0.0, -1000.0]))
        assert np.all(np.isfinite(q)) and abs(q.sum() - 1.0) < 1e-12

    def test_output_interior(self):
        q = softmax_centered(np.array([50.0, -50.0]))
        assert np.all(q > 0)


class TestCenteredLogodds:
    def test_uniform_maps_to_zero(self):
        np.testing.assert_allclose(centered_logodds(np.full(3, 1 / 3)), 0.0, atol=1e-14)

    def test_direct_log_arithmetic(self):
        # oracle: log q minus its mean, computed by hand
        q = np.array([0.5, 0.25, 0.25])
        expected = np.log(q) - np.log(q).mean()
        got = centered_logodds(q)
        np.testing.assert_allclose(got, expected, atol=1e-14)
        np.testing.assert_allclose(got, [0.4621, -0.2310, -0.2310], atol=1e-4)

    def test_two_class_half_log_odds(self):
        # oracle: +-0.5*log(9) for a 90/10 split
        got = centered_logodds(np.array([0.9, 0.1]))
        np.testing.assert_allclose(got, [0.5 * np.log(9), -0.5 * np.log(9)], atol=1e-4)

    def test_sum_zero_always(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            q = rng.dirichlet(np.ones(rng.integers(2, 8)))
            q = np.maximum(q, 1e-9)
            q = q / q.sum()
            assert abs(centered_logodds(q).sum()) < 1e-10

    def test_boundary_raises(self):
        with pytest.raises(ValueError):
            centered_logodds(np.array([1.0, 0.0]))

    def test_roundtrip_thousand_points(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            q = rng.dirichlet(np.ones(5) * 0.8)
            q = np.maximum(q, 1e-10)
            q = q / q.sum()
            back = softmax_centered(centered_logodds(q))
            np.testing.assert_allclose(back, q, atol=1e-10)


class TestProjectTangent:
    def test_constant_annihilated(self):
        np.testing.assert_allclose(project_tangent(np.ones(3)), 0.0, atol=1e-15)

    def test_mean_subtraction(self):
        np.testing.assert_allclose(
            project_tangent(np.array([1.0, 0.0, 0.0])), [2 / 3, -1 / 3, -1 / 3]
        )

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            v = rng.normal(size=rng.integers(2, 10))
            once = project_tangent(v)
            np.testing.assert_allclose(project_tangent(once), once, atol=1e-14)


class TestFisherRao:
    def test_uniform_scaling(self):
        v = np.array([1.0, -1.0, 0.0, 0.0])
        np.testing.assert_allclose(
            fisher_rao_apply(np.full(4, 0.25), v), [4.0, -4.0, 0.0, 0.0]
        )

    def test_elementwise_division_oracle(self):
        q = np.array([0.5, 0.3, 0.2])
        v = np.array([0.1, -0.05, -0.05])
        np.testing.assert_allclose(fisher_rao_apply(q, v), v / q, atol=1e-14)
        np.testing.assert_allclose(fisher_rao_apply(q, v), [0.2, -1 / 6, -0.25],
                                   atol=1e-4)

    def test_metric_dominates_euclidean(self):
        # every q_i < 1 inside the simplex, so g_q(v, v) >= ||v||^2
        rng = np.random.default_rng(4)
        for _ in range(100):
            q = rng.dirichlet(np.ones(5))
            q = np.maximum(q, 1e-9)
            q = q / q.sum()
            v = project_tangent(rng.normal(size=5))
            assert fisher_rao_inner(q, v, v) >= np.dot(v, v) - 1e-12

    def test_non_interior_rejected(self):
        with pytest.raises(ValueError):
            fisher_rao_apply(np.array([1.0, 0.0]), np.array([1.0, -1.0]))


class TestSoftmaxJacobian:
    def test_matches_diag_q_minus_qqt(self):
        # central finite differences against the analytic derivative
        rng = np.random.default_rng(5)
        for _ in range(20):
            K = rng.integers(2, 6)
            theta = project_tangent(rng.normal(size=K))
            q = softmax_centered(theta)
            analytic = np.diag(q) - np.outer(q, q)
            h = 1e-6
            fd = np.empty((K, K))
            for j in range(K):
                tp, tm = theta.copy(), theta.copy()
                tp[j] += h
                tm[j] -= h
                fd[:, j] = (softmax_centered(tp) - softmax_centered(tm)) / (2 * h)
            scale = np.maximum(np.abs(analytic), 1e-8)
            assert np.max(np.abs(fd - analytic) / scale) < 1e-5


class TestEuclideanProjection:
    def test_feasible_unchanged(self):
        x = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(euclidean_simplex_projection(x), x, atol=1e-15)

    def test_two_dim_vertex_against_grid(self):
        # brute-force oracle: scan the 1-D simplex at 1e-4 resolution
        x = np.array([1.2, -0.2])
        grid = np.linspace(0.0, 1.0, 10001)
        dists = (grid - x[0]) ** 2 + (1 - grid - x[1]) ** 2
        best = grid[np.argmin(dists)]
        got = euclidean_simplex_projection(x)
        np.testing.assert_allclose(got, [best, 1 - best], atol=1e-4)
        np.testing.assert_allclose(got, [1.0, 0.0], atol=1e-12)

    def test_symmetric_point(self):
        np.testing.assert_allclose(
            euclidean_simplex_projection(np.array([0.6, 0.6])), [0.5, 0.5]
        )

    def test_matches_quadratic_program(self):
        # independent oracle: constrained solver on random 3-d instances
        from scipy.optimize import minimize

        rng = np.random.default_rng(6)
        for _ in range(25):
            x = rng.normal(scale=2.0, size=3)
            got = euclidean_simplex_projection(x)
            assert abs(got.sum() - 1.0) < 1e-12 and np.all(got >= 0)
            res = minimize(
                lambda p: np.sum((p - x) ** 2),
                np.full(3, 1 / 3),
                constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0}],
                bounds=[(0.0, 1.0)] * 3,
                method="SLSQP",
                options={"ftol": 1e-14, "maxiter": 200},
            )
            np.testing.assert_allclose(got, res.x, atol=1e-6)
