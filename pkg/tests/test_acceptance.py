"""Acceptance gate: every headline guarantee checked at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` or ``-rA`` to
see them).  The expensive statistical checks run at the exact scales and
tolerances fixed below; seeds are pinned so reruns are reproducible.
"""

import time
from dataclasses import replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import binom

from gsbbse.baselines import bbse, mlls, rlls, saerens_em
from gsbbse.geometry import (
    convexity_modulus,
    penalised_objective,
    replicator_flow,
)
from gsbbse.harness import (
    ScenarioConfig,
    contraction_experiment,
    coverage_experiment,
    default_scenarios,
    generate_scenario,
    robustness_experiment,
    variance_connectivity_experiment,
)
from gsbbse.inference import HmcConfig, run_hmc, summarize
from gsbbse.labelgraph import (
    graph_from_weights,
    identity_fallback_graph,
    laplacian,
    path_graph,
)
from gsbbse.model import CountData, HyperParams, make_value_and_grad, pack_state
from gsbbse.model import ModelState
from gsbbse.simplex import project_tangent, softmax_centered

EXPERIMENT_HMC = HmcConfig(chains=2, warmup_iters=300, sampling_iters=500, seed=777)


def _report(number: int, name: str, passed: bool, detail: str, t0: float) -> bool:
    status = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {number} ({name}): {status} [{time.time() - t0:.1f}s] {detail}")
    return passed


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(1001)
    worst = 0.0
    checked = 0
    for K in (2, 3, 5):
        lap = laplacian(identity_fallback_graph(K))
        C = rng.dirichlet(np.ones(K) * 2, size=K).T
        q = rng.dirichlet(np.ones(K))
        src = np.stack([rng.multinomial(int(rng.integers(50, 300)), C[:, i])
                        for i in range(K)], axis=1)
        tgt = rng.multinomial(2000, C @ q)
        data = CountData(source_counts=src, target_counts=tgt)
        dim, fn = make_value_and_grad(data, lap, HyperParams())
        for _ in range(50):
            theta = project_tangent(rng.normal(scale=0.6, size=K))
            phi = rng.normal(scale=0.6, size=(K, K))
            phi -= phi.mean(axis=0, keepdims=True)
            state = ModelState(theta=theta, phi=phi,
                               tau_q=float(rng.uniform(0.3, 3.0)),
                               tau_C=float(rng.uniform(0.3, 3.0)))
            z = pack_state(state)
            _, grad = fn(z)
            h = 1e-6
            for d in rng.choice(dim, size=min(dim, 10), replace=False):
                zp, zm = z.copy(), z.copy()
                zp[d] += h
                zm[d] -= h
                fd = (fn(zp)[0] - fn(zm)[0]) / (2 * h)
                if abs(fd) <= 1e-8:
                    continue
                # the absolute floor covers central-difference rounding
                # noise at the log-joint's magnitude; above it the check
                # is the plain 1e-5 relative tolerance
                err = abs(grad[d] - fd) / max(abs(fd), 1e-1)
                worst = max(worst, err)
                checked += 1
    elapsed = time.time() - t0
    ok = worst < 1e-5 and elapsed < 10.0
    assert _report(1, "gradient correctness", ok,
                   f"worst rel err {worst:.2e} over {checked} coords", t0)


def test_criterion_2_identifiability():
    t0 = time.time()
    rng = np.random.default_rng(1002)
    n = 3

    def joint_pmf(a, b, q1):
        # independent blocks: two source binomials and the target binomial
        r1 = a * q1 + b * (1 - q1)
        p = np.zeros((n + 1, n + 1, n + 1))
        for k1 in range(n + 1):
            for k2 in range(n + 1):
                for k3 in range(n + 1):
                    p[k1, k2, k3] = (binom.pmf(k1, n, a) * binom.pmf(k2, n, b)
                                     * binom.pmf(k3, n, r1))
        return p

    def draw_params():
        # the lemma needs invertible C: det = a - b, kept away from zero
        while True:
            a, b = rng.uniform(0.05, 0.95, size=2)
            if abs(a - b) >= 0.1:
                break
        q1 = rng.uniform(0.05, 0.95)
        return a, b, q1

    min_tv = np.inf
    pairs = 0
    while pairs < 100:
        pa = draw_params()
        pb = draw_params()
        dist = max(abs(pa[0] - pb[0]), abs(pa[1] - pb[1]), abs(pa[2] - pb[2]))
        if dist <= 0.05:
            continue
        tv = 0.5 * np.abs(joint_pmf(*pa) - joint_pmf(*pb)).sum()
        min_tv = min(min_tv, tv)
        pairs += 1
    elapsed = time.time() - t0
    ok = min_tv > 1e-4 and elapsed < 5.0
    assert _report(2, "identifiability", ok,
                   f"min total variation {min_tv:.2e} over 100 pairs", t0)


def test_criterion_3_contraction_rate():
    t0 = time.time()
    base = ScenarioConfig(K=5, shift_kind="powerlaw", classifier_quality=0.7,
                          seed=3001)
    result = contraction_experiment(base, [1000, 10000, 100000], seeds=20,
                                    hmc=EXPERIMENT_HMC)
    ok = -0.65 <= result.slope <= -0.35 and (time.time() - t0) < 900
    assert _report(3, "posterior contraction", ok,
                   f"log-log slope {result.slope:.3f}, "
                   f"mean errors {np.round(result.mean_errors, 4).tolist()}", t0)


def test_criterion_4_variance_vs_connectivity():
    t0 = time.time()
    cfg = ScenarioConfig(K=5, shift_kind="powerlaw", n_source_per_class=40,
                         n_target=200, classifier_quality=0.65, seed=4001)
    result = variance_connectivity_experiment(
        cfg, seeds=50,
        hmc=HmcConfig(chains=2, warmup_iters=250, sampling_iters=400, seed=444),
        tau_fixed=(15.0, 15.0),
    )
    ok = (result.monotone_fraction >= 0.8 and result.bound_ok
          and (time.time() - t0) < 1200)
    assert _report(4, "variance vs connectivity", ok,
                   f"monotone in {result.monotone_fraction:.0%} of seeds, "
                   f"bound dominates: {result.bound_ok}, "
                   f"mean vars {np.round(result.variances.mean(axis=1), 6).tolist()}",
                   t0)


def test_criterion_5_robustness_bound():
    t0 = time.time()
    cfg = ScenarioConfig(K=5, shift_kind="powerlaw", classifier_quality=0.7,
                         seed=5001)
    result = robustness_experiment(cfg, None, None, [1000, 10000, 100000],
                                   seeds=20, hmc=EXPERIMENT_HMC)
    ok = (result.decay_fraction >= 0.9 and bool(np.all(result.within_bound))
          and (time.time() - t0) < 900)
    assert _report(5, "graph misspecification robustness", ok,
                   f"decay in {result.decay_fraction:.0%} of seeds, "
                   f"bias norms {np.round(result.bias_norms, 4).tolist()} vs "
                   f"bound+3SE {np.round(result.bounds + 3 * result.bias_se, 4).tolist()}",
                   t0)


def test_criterion_6_flow_invariants_and_decay():
    t0 = time.time()
    rng = np.random.default_rng(1006)

    max_drift = 0.0
    worst_increase = -np.inf
    for _ in range(20):
        K = int(rng.integers(2, 6))
        W = rng.uniform(0, 1, size=(K, K))
        W = (W + W.T) / 2
        np.fill_diagonal(W, 0.0)
        lap = (laplacian(identity_fallback_graph(K)) if rng.random() < 0.3
               else laplacian(graph_from_weights(W)))
        q0 = rng.dirichlet(np.ones(K) * 3)
        q0 = np.maximum(q0, 0.02)
        q0 = q0 / q0.sum()
        r_hat = rng.dirichlet(np.ones(K) * 3)
        C = rng.dirichlet(np.ones(K) * 3, size=K).T
        traj = replicator_flow(q0, r_hat, C, lap, float(rng.uniform(0.2, 3)),
                               float(rng.uniform(5, 100)), steps=250)
        max_drift = max(max_drift, traj.max_abs_drift)
        worst_increase = max(worst_increase, float(np.max(np.diff(traj.F))))

    # calibrated decay-rate instance: symmetric two-class confusion with
    # determinant 1/sqrt(2) makes the convexity modulus tight
    lap2 = laplacian(identity_fallback_graph(2))
    det = 1 / np.sqrt(2)
    c = (1 + det) / 2
    C2 = np.array([[c, 1 - c], [1 - c, c]])
    r_hat2 = np.array([0.5, 0.5])
    nprime, tau = 200.0, 5.0

    def f_of_t(tval):
        qv = softmax_centered(np.array([tval / 2, -tval / 2]))
        return penalised_objective(qv, r_hat2, C2, lap2, tau, nprime)

    f_star = minimize_scalar(f_of_t, bounds=(-3, 3), method="bounded",
                             options={"xatol": 1e-12}).fun
    alpha = convexity_modulus(np.array([0.5, 0.5]), C2, lap2, tau, nprime)
    traj2 = replicator_flow(np.array([0.75, 0.25]), r_hat2, C2, lap2, tau,
                            nprime, steps=4000)
    gap = traj2.F - f_star
    window = (gap > 1e-10 * gap[0]) & (gap < 1e-2 * gap[0])
    slope = np.polyfit(traj2.t[window], np.log(gap[window]), 1)[0]
    rate_err = abs(-slope - 2 * alpha) / (2 * alpha)

    ok = (max_drift < 1e-10 and worst_increase <= 1e-9 and rate_err < 0.15
          and (time.time() - t0) < 60)
    assert _report(6, "flow invariants", ok,
                   f"max drift {max_drift:.1e}, max F increase "
                   f"{worst_increase:.1e}, decay rate within {rate_err:.1%} of 2a",
                   t0)


def test_criterion_7_hmc_sanity():
    t0 = time.time()
    # prior-only target: moments against the Laplacian pseudoinverse
    K = 4
    lap = laplacian(path_graph(K))
    zero = CountData(source_counts=np.zeros((K, K), dtype=int),
                     target_counts=np.zeros(K, dtype=int))
    draws = run_hmc(zero, lap, HyperParams(),
                    HmcConfig(chains=4, warmup_iters=300, sampling_iters=1000,
                              seed=7007),
                    tau_fixed=(1.0, 1.0))
    theta = draws.theta.reshape(-1, K)
    target = np.diag(lap.pseudoinverse())
    var_err = float(np.max(np.abs(theta.var(axis=0) - target) / target))
    mean_ok = bool(np.all(np.abs(theta.mean(axis=0))
                          < 4 * np.sqrt(target / len(theta)) + 0.02))

    # every harness scenario: chain diagnostics within their gates
    rhat_max = 0.0
    accept_lo, accept_hi = 1.0, 0.0
    for cfg in default_scenarios():
        dataset = generate_scenario(cfg)
        lap_s = laplacian(dataset.graph)
        d = run_hmc(dataset.counts, lap_s, HyperParams(),
                    replace(EXPERIMENT_HMC, seed=7100 + cfg.seed))
        summary = summarize(d)
        rhat_max = max(rhat_max, max(v for v in summary.rhat.values()
                                     if v is not None))
        accept_lo = min(accept_lo, float(d.accept_rates.min()))
        accept_hi = max(accept_hi, float(d.accept_rates.max()))

    ok = (var_err < 0.10 and mean_ok and rhat_max < 1.05
          and 0.6 <= accept_lo and accept_hi <= 0.95
          and (time.time() - t0) < 600)
    assert _report(7, "hmc sanity", ok,
                   f"prior-moment err {var_err:.1%}, split-Rhat max {rhat_max:.3f}, "
                   f"acceptance in [{accept_lo:.2f}, {accept_hi:.2f}]", t0)


def test_criterion_8_baseline_oracles():
    t0 = time.time()
    rng = np.random.default_rng(1008)

    # exact recovery on noiseless instances
    recover_ok = True
    done = 0
    while done < 50:
        K = int(rng.integers(2, 8))
        C = rng.dirichlet(np.ones(K) * 3, size=K).T
        if np.linalg.cond(C) > 50:
            continue
        q = rng.dirichlet(np.ones(K))
        est = bbse(C, C @ q)
        recover_ok &= bool(np.abs(est.q_hat - q).max() < 1e-8)
        done += 1

    # EM and direct likelihood maximisation coincide at interior optima
    agree_ok = True
    done = 0
    while done < 15:
        K = int(rng.integers(2, 6))
        C = rng.dirichlet(np.ones(K) * 3, size=K).T
        if np.linalg.cond(C) > 30:
            continue
        q_true = rng.dirichlet(np.ones(K) * 5)
        counts = np.round(50000 * (C @ q_true)).astype(int)
        a = saerens_em(C, counts, tol=1e-13, max_iters=300000).q_hat
        b = mlls(C, counts, tol=1e-13).q_hat
        if np.all(a > 1e-4) and np.all(b > 1e-4):
            agree_ok &= bool(np.abs(a - b).sum() < 1e-5)
        done += 1

    # ridge endpoints: lambda -> 0 meets the inversion, lambda -> inf
    # collapses to the source prior
    C = np.array([[0.9, 0.1], [0.1, 0.9]])
    q_tilde = np.array([0.66, 0.34])
    p = np.array([0.5, 0.5])
    end_lo = np.abs(rlls(C, q_tilde, p, lambda_reg=0.0).q_hat
                    - bbse(C, q_tilde).q_hat).sum()
    end_hi = np.abs(rlls(C, q_tilde, p, lambda_reg=1e12).q_hat - p).sum()
    ends_ok = end_lo < 1e-8 and end_hi < 1e-6

    elapsed = time.time() - t0
    ok = recover_ok and agree_ok and ends_ok and elapsed < 30.0
    assert _report(8, "baseline oracle equivalence", ok,
                   f"recovery {recover_ok}, em-mlls {agree_ok}, "
                   f"ridge endpoints ({end_lo:.1e}, {end_hi:.1e})", t0)


def test_criterion_9_ordering_vs_bbse():
    t0 = time.time()
    base = ScenarioConfig(K=10, shift_kind="powerlaw", n_source_per_class=30,
                          n_target=7000, classifier_quality=0.55,
                          spill_floor=0.15, seed=9001)
    seeds = 20
    bbse_errs = np.empty(seeds)
    gsb_errs = np.empty(seeds)
    for s in range(seeds):
        dataset = generate_scenario(replace(base, seed=base.seed + s))
        lap = laplacian(dataset.graph)
        est = bbse(dataset.counts.empirical_confusion(),
                   dataset.counts.target_histogram())
        bbse_errs[s] = np.abs(est.q_hat - dataset.true_q).sum()
        draws = run_hmc(dataset.counts, lap, HyperParams(),
                        replace(EXPERIMENT_HMC, seed=9100 + s))
        q_mean = summarize(draws).q_mean
        gsb_errs[s] = np.abs(q_mean - dataset.true_q).sum()

    diffs = bbse_errs - gsb_errs
    rng = np.random.default_rng(1009)
    boot = np.array([diffs[rng.integers(0, seeds, seeds)].mean()
                     for _ in range(4000)])
    se = boot.std(ddof=1)
    gap = diffs.mean()
    ok = (gsb_errs.mean() <= bbse_errs.mean() and gap > 2 * se
          and (time.time() - t0) < 1200)
    assert _report(9, "ordering vs plug-in inversion", ok,
                   f"mean L1: smoothed {gsb_errs.mean():.4f} vs plug-in "
                   f"{bbse_errs.mean():.4f}; paired gap {gap:.4f} = "
                   f"{gap / se:.1f} bootstrap SEs", t0)


def test_criterion_10_coverage_calibration():
    t0 = time.time()
    result = coverage_experiment(K=5, n_runs=200, n_source_per_class=1000,
                                 n_target=5000, hmc=EXPERIMENT_HMC, seed=10001)
    per_class = result.coverage_per_class
    ok = (bool(np.all(per_class >= 0.90)) and bool(np.all(per_class <= 0.99))
          and (time.time() - t0) < 1800)
    assert _report(10, "credible interval coverage", ok,
                   f"per-class coverage {np.round(per_class, 3).tolist()} "
                   f"(overall {result.overall:.3f}, 200 runs)", t0)
