"""Samplers, MAP optimisation, summaries, and chain diagnostics."""

import numpy as np
import pytest

from gsbbse.inference import (
    HmcConfig,
    NewtonConfig,
    PosteriorDraws,
    block_newton_cg,
    bulk_ess,
    draws_to_csv,
    posterior_predictive,
    run_hmc,
    split_rhat,
    summarize,
)
from gsbbse.labelgraph import identity_fallback_graph, laplacian, path_graph
from gsbbse.model import CountData, HyperParams
from gsbbse.simplex import centered_logodds


def _two_class_data(n_src=5000, tgt=(7000, 3000)):
    return CountData(source_counts=np.array([[n_src, 0], [0, n_src]]),
                     target_counts=np.array(tgt))


def _zero_data(K):
    return CountData(source_counts=np.zeros((K, K), dtype=int),
                     target_counts=np.zeros(K, dtype=int))


class TestConfigs:
    def test_hmc_validation(self):
        with pytest.raises(ValueError):
            HmcConfig(chains=0)
        with pytest.raises(ValueError):
            HmcConfig(target_accept=0.4)
        with pytest.raises(ValueError):
            HmcConfig(target_accept=0.995)

    def test_newton_validation(self):
        with pytest.raises(ValueError):
            NewtonConfig(cg_tolerance=0.0)
        with pytest.raises(ValueError):
            NewtonConfig(max_outer_iters=0)


class TestRunHmc:
    def test_prior_only_marginal_variances(self):
        # with zero counts and fixed tau the posterior is the GMRF prior;
        # oracle: the Laplacian pseudoinverse diagonal
        K = 4
        lap = laplacian(path_graph(K))
        config = HmcConfig(chains=4, warmup_iters=300, sampling_iters=1000, seed=3)
        draws = run_hmc(_zero_data(K), lap, HyperParams(), config,
                        tau_fixed=(1.0, 1.0))
        theta = draws.theta.reshape(-1, K)
        target = np.diag(lap.pseudoinverse())
        np.testing.assert_allclose(theta.var(axis=0), target, rtol=0.10)
        np.testing.assert_allclose(theta.mean(axis=0), 0.0,
                                   atol=4 * np.sqrt(target / len(theta)).max())

    def test_two_class_grid_posterior_oracle(self):
        # brute-force oracle: 1-D grid over the free log-odds coordinate
        # at fixed confusion (the huge source counts pin C at identity)
        K = 2
        lap = laplacian(identity_fallback_graph(K))
        data = _two_class_data(n_src=20000)
        config = HmcConfig(chains=2, warmup_iters=300, sampling_iters=800, seed=5)
        draws = run_hmc(data, lap, HyperParams(), config, tau_fixed=(1.0, 1.0))
        q_mean = draws.q_draws().reshape(-1, K).mean(axis=0)

        t = np.linspace(-8, 8, 16001)
        q1 = 1.0 / (1.0 + np.exp(-t))
        # theta = (t/2, -t/2); quadratic form on the fallback Laplacian
        log_post = (7000 * np.log(q1) + 3000 * np.log1p(-q1) - 0.5 * (t / 2) ** 2 * 2)
        w = np.exp(log_post - log_post.max())
        oracle = float((q1 * w).sum() / w.sum())
        assert abs(q_mean[0] - oracle) < 0.02
        np.testing.assert_allclose(q_mean, [0.7, 0.3], atol=0.02)

    def test_bit_identical_reruns(self):
        K = 3
        lap = laplacian(identity_fallback_graph(K))
        data = CountData(source_counts=np.diag([300, 300, 300]),
                         target_counts=np.array([50, 30, 20]))
        config = HmcConfig(chains=2, warmup_iters=100, sampling_iters=150, seed=17)
        a = run_hmc(data, lap, HyperParams(), config)
        b = run_hmc(data, lap, HyperParams(), config)
        assert np.array_equal(a.theta, b.theta)
        assert np.array_equal(a.phi, b.phi)
        assert np.array_equal(a.tau_q, b.tau_q)
        assert np.array_equal(a.accept_rates, b.accept_rates)

    def test_seed_argument_overrides_config(self):
        K = 2
        lap = laplacian(identity_fallback_graph(K))
        data = _two_class_data(n_src=200, tgt=(70, 30))
        config = HmcConfig(chains=2, warmup_iters=80, sampling_iters=100, seed=1)
        a = run_hmc(data, lap, HyperParams(), config)
        c = run_hmc(data, lap, HyperParams(), config, rng=99)
        assert not np.array_equal(a.theta, c.theta)

    def test_draw_invariants(self):
        K = 3
        lap = laplacian(identity_fallback_graph(K))
        data = CountData(source_counts=np.diag([200, 200, 200]),
                         target_counts=np.array([40, 35, 25]))
        config = HmcConfig(chains=2, warmup_iters=100, sampling_iters=200, seed=7)
        draws = run_hmc(data, lap, HyperParams(), config)
        assert np.max(np.abs(draws.theta.sum(axis=2))) < 1e-8
        assert np.max(np.abs(draws.phi.sum(axis=2))) < 1e-8
        assert np.all(draws.tau_q > 0) and np.all(draws.tau_C > 0)

    def test_disconnected_graph_rejected(self):
        from gsbbse.labelgraph import graph_from_weights

        w = np.zeros((4, 4))
        w[0, 1] = w[1, 0] = 1.0
        lap = laplacian(graph_from_weights(w))
        with pytest.raises(ValueError):
            run_hmc(_zero_data(4), lap, HyperParams(), HmcConfig())


class TestBlockNewtonCg:
    def test_restart_at_optimum_one_iteration(self):
        K = 3
        lap = laplacian(identity_fallback_graph(K))
        rng = np.random.default_rng(8)
        C = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]])
        src = np.stack([rng.multinomial(800, C[:, i]) for i in range(K)], axis=1)
        tgt = rng.multinomial(4000, C @ np.array([0.5, 0.3, 0.2]))
        data = CountData(source_counts=src, target_counts=tgt)
        first = block_newton_cg(data, lap, HyperParams(),
                                NewtonConfig(outer_rel_tol=1e-10,
                                             max_outer_iters=300))
        second = block_newton_cg(data, lap, HyperParams(),
                                 NewtonConfig(outer_rel_tol=1e-10,
                                              max_outer_iters=300),
                                 init=first.state)
        assert second.converged and second.n_iters == 1
        assert np.abs(second.state.q - first.state.q).sum() < 1e-6

    def test_monotone_log_joint_on_random_instances(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            K = int(rng.integers(2, 5))
            lap = laplacian(identity_fallback_graph(K))
            C = rng.dirichlet(np.ones(K) * 2, size=K).T
            q = rng.dirichlet(np.ones(K))
            src = np.stack([rng.multinomial(int(rng.integers(50, 400)), C[:, i])
                            for i in range(K)], axis=1)
            tgt = rng.multinomial(int(rng.integers(500, 3000)), C @ q)
            data = CountData(source_counts=src, target_counts=tgt)
            result = block_newton_cg(data, lap, HyperParams())
            trace = result.logp_trace
            assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

    def test_map_close_to_posterior_mean(self):
        # the sampler is the oracle here: with ample data the posterior
        # is close to Gaussian, so its mode and mean nearly coincide
        rng = np.random.default_rng(10)
        K = 3
        lap = laplacian(identity_fallback_graph(K))
        C = np.array([[0.75, 0.15, 0.1], [0.15, 0.7, 0.15], [0.1, 0.15, 0.75]])
        q = np.array([0.5, 0.3, 0.2])
        src = np.stack([rng.multinomial(2000, C[:, i]) for i in range(K)], axis=1)
        tgt = rng.multinomial(10000, C @ q)
        data = CountData(source_counts=src, target_counts=tgt)
        result = block_newton_cg(data, lap, HyperParams(),
                                 NewtonConfig(outer_rel_tol=1e-8,
                                              max_outer_iters=200))
        draws = run_hmc(data, lap, HyperParams(),
                        HmcConfig(chains=2, warmup_iters=300,
                                  sampling_iters=600, seed=12))
        q_mean = draws.q_draws().reshape(-1, K).mean(axis=0)
        assert np.abs(result.state.q - q_mean).sum() < 0.03

    def test_unconverged_flag(self):
        rng = np.random.default_rng(11)
        K = 3
        lap = laplacian(identity_fallback_graph(K))
        C = rng.dirichlet(np.ones(K), size=K).T
        src = np.stack([rng.multinomial(200, C[:, i]) for i in range(K)], axis=1)
        tgt = rng.multinomial(2000, C @ rng.dirichlet(np.ones(K)))
        data = CountData(source_counts=src, target_counts=tgt)
        result = block_newton_cg(data, lap, HyperParams(),
                                 NewtonConfig(outer_rel_tol=1e-14,
                                              max_outer_iters=2))
        assert not result.converged and result.n_iters == 2


class TestDiagnostics:
    def test_rhat_identical_distributions(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 1000))
        assert split_rhat(x) < 1.05

    def test_rhat_separated_chains(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((2, 500))
        x[1] += 5.0
        assert split_rhat(x) > 1.5

    def test_rhat_constant_chain(self):
        assert split_rhat(np.ones((2, 100))) == 1.0

    def test_bulk_ess_iid(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((4, 1000))
        ess = bulk_ess(x)
        assert 2000 < ess <= 4000

    def test_bulk_ess_autocorrelated(self):
        rng = np.random.default_rng(16)
        n = 2000
        x = np.empty((2, n))
        for c in range(2):
            e = rng.standard_normal(n)
            for t in range(n):
                x[c, t] = 0.95 * x[c, t - 1] + e[t] if t else e[t]
        ess = bulk_ess(x)
        assert ess < 0.2 * x.size


class TestSummarize:
    def _synthetic_draws(self, theta, n=400, chains=2, jitter=0.0, seed=0):
        rng = np.random.default_rng(seed)
        K = theta.shape[0]
        th = np.tile(theta, (chains, n, 1))
        if jitter:
            th = th + jitter * rng.standard_normal(th.shape)
            th -= th.mean(axis=2, keepdims=True)
        phi = np.zeros((chains, n, K, K))
        return PosteriorDraws(
            theta=th, phi=phi,
            tau_q=np.ones((chains, n)), tau_C=np.ones((chains, n)),
            accept_rates=np.full(chains, 0.9), divergence_count=0,
            step_sizes=np.full(chains, 0.1),
            config=HmcConfig(chains=chains, warmup_iters=1, sampling_iters=n),
        )

    def test_constant_draws_zero_width(self):
        draws = self._synthetic_draws(np.array([0.3, -0.1, -0.2]))
        summary = summarize(draws)
        np.testing.assert_allclose(summary.q_ci_low, summary.q_ci_high, atol=1e-12)
        np.testing.assert_allclose(summary.q_variance, 0.0, atol=1e-15)
        assert all(v == 1.0 for v in summary.rhat.values())

    def test_gaussian_quantiles_match_analytic(self):
        # inject independent normal draws for one coordinate pair and
        # compare the 95% interval with the exact normal quantiles
        rng = np.random.default_rng(17)
        n, chains = 4000, 2
        t = 0.5 + 0.2 * rng.standard_normal((chains, n))
        theta = np.stack([t / 2, -t / 2], axis=2)
        draws = PosteriorDraws(
            theta=theta, phi=np.zeros((chains, n, 2, 2)),
            tau_q=np.ones((chains, n)), tau_C=np.ones((chains, n)),
            accept_rates=np.full(chains, 0.9), divergence_count=0,
            step_sizes=np.full(chains, 0.1),
            config=HmcConfig(chains=chains, warmup_iters=1, sampling_iters=n),
        )
        summary = summarize(draws)
        from scipy.stats import norm

        # q_0 = sigmoid(t): transform the normal quantiles through it
        lo_t, hi_t = norm.ppf([0.025, 0.975], loc=0.5, scale=0.2)
        lo_q = 1 / (1 + np.exp(-lo_t))
        hi_q = 1 / (1 + np.exp(-hi_t))
        assert abs(summary.q_ci_low[0] - lo_q) < 0.01
        assert abs(summary.q_ci_high[0] - hi_q) < 0.01

    def test_rhat_two_identical_chains_small(self):
        draws = self._synthetic_draws(np.array([0.1, -0.1]), n=1000, jitter=0.3,
                                      seed=18)
        summary = summarize(draws)
        assert summary.rhat["q_0"] < 1.05

    def test_single_chain_rhat_unavailable(self):
        draws = self._synthetic_draws(np.array([0.1, -0.1]), n=100, chains=1,
                                      jitter=0.1)
        summary = summarize(draws)
        assert summary.rhat["q_0"] is None

    def test_mean_inside_interval(self):
        draws = self._synthetic_draws(np.array([0.4, -0.4]), n=800, jitter=0.5,
                                      seed=19)
        summary = summarize(draws)
        assert np.all(summary.q_ci_low <= summary.q_mean)
        assert np.all(summary.q_mean <= summary.q_ci_high)
        assert abs(summary.q_mean.sum() - 1.0) < 1e-9

    def test_burn_discard_validation(self):
        draws = self._synthetic_draws(np.array([0.1, -0.1]), n=50)
        with pytest.raises(ValueError):
            summarize(draws, burn_discard=50)


class TestPosteriorPredictive:
    def _point_draws(self, theta, phi, n=50):
        K = theta.shape[0]
        return PosteriorDraws(
            theta=np.tile(theta, (1, n, 1)), phi=np.tile(phi, (1, n, 1, 1)),
            tau_q=np.ones((1, n)), tau_C=np.ones((1, n)),
            accept_rates=np.array([0.9]), divergence_count=0,
            step_sizes=np.array([0.1]),
            config=HmcConfig(chains=1, warmup_iters=1, sampling_iters=n),
        )

    def test_degenerate_point_mass(self):
        # q concentrated on the first class and diagonal confusion:
        # every predicted count lands on class one
        theta = np.array([20.0, -10.0, -10.0])
        theta = theta - theta.mean()
        phi = np.stack([np.eye(3)[:, i] * 30 for i in range(3)], axis=1)
        phi -= phi.mean(axis=0, keepdims=True)
        draws = self._point_draws(theta, phi)
        pred = posterior_predictive(draws, 500, rng=0)
        np.testing.assert_allclose(pred.mean, [500.0, 0.0, 0.0], atol=1e-9)

    def test_mean_matches_tower_property(self):
        rng = np.random.default_rng(20)
        K = 3
        theta = rng.normal(size=(1, 80, K))
        theta -= theta.mean(axis=2, keepdims=True)
        phi = rng.normal(size=(1, 80, K, K))
        phi -= phi.mean(axis=2, keepdims=True)
        draws = PosteriorDraws(
            theta=theta, phi=phi, tau_q=np.ones((1, 80)), tau_C=np.ones((1, 80)),
            accept_rates=np.array([0.9]), divergence_count=0,
            step_sizes=np.array([0.1]),
            config=HmcConfig(chains=1, warmup_iters=1, sampling_iters=80),
        )
        n_target = 20000
        pred = posterior_predictive(draws, n_target, rng=1)
        q = draws.q_draws().reshape(-1, K)
        C = draws.confusion_draws().reshape(-1, K, K)
        expected = n_target * np.einsum("djk,dk->dj", C, q).mean(axis=0)
        np.testing.assert_allclose(pred.mean, expected,
                                   atol=4 * np.sqrt(n_target * 0.25))

    def test_binomial_spread_single_draw(self):
        theta = np.zeros(2)
        phi = 20 * np.eye(2)
        phi -= phi.mean(axis=0, keepdims=True)
        draws = self._point_draws(theta, phi, n=400)
        pred = posterior_predictive(draws, 10000, rng=2)
        assert abs(pred.mean[0] - 5000) < 4 * np.sqrt(2500)


class TestDrawsCsv:
    def test_schema(self, tmp_path):
        K = 2
        lap = laplacian(identity_fallback_graph(K))
        data = _two_class_data(n_src=100, tgt=(60, 40))
        draws = run_hmc(data, lap, HyperParams(),
                        HmcConfig(chains=2, warmup_iters=50, sampling_iters=40,
                                  seed=21))
        path = tmp_path / "draws.csv"
        draws_to_csv(draws, path)
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header[:2] == ["chain", "iter"]
        assert "tau_q" in header and "tau_C" in header
        assert len(lines) == 1 + 2 * 40
