"""Posterior computation for the graph-smoothed hierarchical model.

Two routes to the posterior: Hamiltonian Monte Carlo on the
unconstrained coordinates (theta, phi columns, log tau), and a block
Newton-CG optimizer for the MAP state.  Both share the same warm start:
a BBSE solve for theta and add-one-smoothed empirical confusion columns
for phi.

The HMC kernel is plain fixed-trajectory leapfrog with dual-averaging
step-size adaptation toward a target acceptance rate, per-iteration
jitter of the step count, and a block-diagonal mass matrix estimated
midway through warmup.  Mass entries are constant within each sum-zero
block so the dynamics never leave the constraint subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .baselines import bbse
from .labelgraph import LaplacianMatrix
from .model import (
    CountData,
    HyperParams,
    ModelState,
    gamma_update,
    make_value_and_grad,
)
from .simplex import centered_logodds, project_tangent, softmax_centered


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings; ``leapfrog_steps`` is the pre-jitter base count."""

    chains: int = 4
    warmup_iters: int = 500
    sampling_iters: int = 1000
    leapfrog_steps: int = 20
    target_accept: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if min(self.chains, self.warmup_iters, self.sampling_iters,
               self.leapfrog_steps) <= 0:
            raise ValueError("chain, iteration, and step counts must be positive")
        if not 0.5 < self.target_accept < 0.99:
            raise ValueError("target_accept must lie in (0.5, 0.99)")


@dataclass(frozen=True)
class NewtonConfig:
    """Block Newton-CG settings (defaults follow the reference protocol)."""

    cg_tolerance: float = 1e-4
    max_cg_iters: int = 8
    outer_rel_tol: float = 1e-3
    max_outer_iters: int = 100

    def __post_init__(self):
        if self.cg_tolerance <= 0 or self.outer_rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_cg_iters <= 0 or self.max_outer_iters <= 0:
            raise ValueError("iteration caps must be positive")


@dataclass
class PosteriorDraws:
    """Post-warmup draws, stored per chain as stacked arrays."""

    theta: np.ndarray   # (chains, draws, K)
    phi: np.ndarray     # (chains, draws, K, K)
    tau_q: np.ndarray   # (chains, draws)
    tau_C: np.ndarray   # (chains, draws)
    accept_rates: np.ndarray
    divergence_count: int
    step_sizes: np.ndarray
    config: HmcConfig

    @property
    def n_chains(self) -> int:
        return self.theta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.theta.shape[1]

    @property
    def n_classes(self) -> int:
        return self.theta.shape[2]

    def state(self, chain: int, draw: int) -> ModelState:
        return ModelState(
            theta=self.theta[chain, draw].copy(),
            phi=self.phi[chain, draw].copy(),
            tau_q=float(self.tau_q[chain, draw]),
            tau_C=float(self.tau_C[chain, draw]),
        )

    def q_draws(self, burn_discard: int = 0) -> np.ndarray:
        """Target-prior draws mapped through softmax, shape (chains, n, K)."""
        th = self.theta[:, burn_discard:, :]
        z = np.exp(th - th.max(axis=2, keepdims=True))
        return z / z.sum(axis=2, keepdims=True)

    def confusion_draws(self, burn_discard: int = 0) -> np.ndarray:
        ph = self.phi[:, burn_discard:, :, :]
        z = np.exp(ph - ph.max(axis=2, keepdims=True))
        return z / z.sum(axis=2, keepdims=True)


@dataclass(frozen=True)
class PosteriorSummary:
    """Moments, equal-tailed 95% intervals, and chain diagnostics."""

    q_mean: np.ndarray
    q_ci_low: np.ndarray
    q_ci_high: np.ndarray
    q_variance: np.ndarray
    C_mean: np.ndarray
    rhat: dict
    ess: dict
    n_draws: int
    n_chains: int

    def to_dict(self) -> dict:
        return {
            "q_mean": [float(v) for v in self.q_mean],
            "q_ci_low": [float(v) for v in self.q_ci_low],
            "q_ci_high": [float(v) for v in self.q_ci_high],
            "q_variance": [float(v) for v in self.q_variance],
            "C_mean": [[float(v) for v in row] for row in self.C_mean],
            "rhat": {k: (None if v is None else float(v)) for k, v in self.rhat.items()},
            "ess": {k: (None if v is None else float(v)) for k, v in self.ess.items()},
            "n_draws": self.n_draws,
            "n_chains": self.n_chains,
        }


@dataclass(frozen=True)
class PredictiveSummary:
    """Posterior predictive of target prediction counts."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_target: int
    level: float = 0.95


@dataclass
class MapResult:
    """Output of the block Newton-CG optimizer."""

    state: ModelState
    converged: bool
    n_iters: int
    log_joint: float
    grad_norm: float
    logp_trace: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Shared warm start

def default_initial_state(data: CountData, lap: LaplacianMatrix,
                          hyper: HyperParams,
                          tau_fixed: tuple[float, float] | None = None) -> ModelState:
    """BBSE-centred initial state near the likelihood mode.

    theta starts at the centered log-odds of the BBSE estimate, floored
    at 1e-3 and renormalised to stay interior; phi columns start at the
    add-one-smoothed empirical confusion columns.
    """
    C0 = data.empirical_confusion(smoothing=1.0)
    est = bbse(C0, data.target_histogram())
    q0 = np.maximum(est.q_hat, 1e-3)
    q0 = q0 / q0.sum()
    theta0 = centered_logodds(q0)
    phi0 = np.log(C0)
    phi0 = phi0 - phi0.mean(axis=0, keepdims=True)
    if tau_fixed is not None:
        tau_q0, tau_C0 = float(tau_fixed[0]), float(tau_fixed[1])
    else:
        tau_q0 = hyper.a_q / hyper.b_q
        tau_C0 = hyper.a_C / hyper.b_C
    return ModelState(theta=theta0, phi=phi0, tau_q=tau_q0, tau_C=tau_C0)


def _pack(state: ModelState, tau_fixed) -> np.ndarray:
    parts = [state.theta, state.phi.ravel(order="F")]
    if tau_fixed is None:
        parts.append(np.array([np.log(state.tau_q), np.log(state.tau_C)]))
    return np.concatenate(parts)


def _unpack(z: np.ndarray, K: int, tau_fixed) -> ModelState:
    theta = project_tangent(z[:K])
    phi = z[K : K + K * K].reshape(K, K, order="F")
    phi = phi - phi.mean(axis=0, keepdims=True)
    if tau_fixed is None:
        tau_q, tau_C = float(np.exp(z[-2])), float(np.exp(z[-1]))
    else:
        tau_q, tau_C = float(tau_fixed[0]), float(tau_fixed[1])
    return ModelState(theta=theta, phi=phi.copy(), tau_q=tau_q, tau_C=tau_C)


def _project_blocks(v: np.ndarray, K: int, n_tau: int) -> None:
    """In-place projection of theta and each phi column to sum zero."""
    v[:K] -= v[:K].mean()
    body = v[K : K + K * K].reshape(K, K, order="F")
    body -= body.mean(axis=0, keepdims=True)
    # tau coordinates (if any) are unconstrained


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo

def _leapfrog(z, p, grad, eps, n_steps, inv_mass, target):
    """Standard leapfrog; returns the endpoint and its value/gradient."""
    p = p + 0.5 * eps * grad
    val = -np.inf
    for step in range(n_steps):
        z = z + eps * inv_mass * p
        val, grad = target(z)
        if not np.isfinite(val):
            return z, p, val, grad
        if step < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return z, p, val, grad


def _find_reasonable_epsilon(z, val, grad, inv_mass, target, rng, K, n_tau):
    """Heuristic initial step size: double/halve until acceptance crosses 1/2."""
    eps = 0.1
    p = rng.standard_normal(z.shape[0]) / np.sqrt(inv_mass)
    _project_blocks(p, K, n_tau)
    h0 = val - 0.5 * float(np.sum(p * p * inv_mass))
    z1, p1, val1, _ = _leapfrog(z, p, grad, eps, 1, inv_mass, target)
    h1 = (val1 - 0.5 * float(np.sum(p1 * p1 * inv_mass))) if np.isfinite(val1) else -np.inf
    log_ratio = h1 - h0
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(60):
        eps = eps * (2.0 ** direction)
        z1, p1, val1, _ = _leapfrog(z, p, grad, eps, 1, inv_mass, target)
        h1 = (val1 - 0.5 * float(np.sum(p1 * p1 * inv_mass))) if np.isfinite(val1) else -np.inf
        log_ratio = h1 - h0
        if direction == 1.0 and log_ratio <= math.log(0.5):
            break
        if direction == -1.0 and log_ratio >= math.log(0.5):
            break
        if eps < 1e-10 or eps > 1e6:
            break
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, eps0: float, target_accept: float,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target_accept
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_prob: float) -> float:
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


def _block_inv_mass(samples: np.ndarray, K: int, n_tau: int) -> np.ndarray:
    """Per-block inverse mass from warmup draws.

    One shared scalar for the theta block, one per phi column, and one
    per tau coordinate; block-constant entries keep the leapfrog drift
    inside the sum-zero subspaces.
    """
    var = samples.var(axis=0, ddof=1)
    inv_mass = np.ones(samples.shape[1])
    inv_mass[:K] = max(var[:K].mean(), 1e-8)
    for i in range(K):
        sl = slice(K + i * K, K + (i + 1) * K)
        inv_mass[sl] = max(var[sl].mean(), 1e-8)
    for t in range(n_tau):
        inv_mass[-(t + 1)] = max(var[-(t + 1)], 1e-8)
    return inv_mass


def run_hmc(data: CountData, lap: LaplacianMatrix, hyper: HyperParams,
            config: HmcConfig, rng: int | None = None,
            tau_fixed: tuple[float, float] | None = None,
            init: ModelState | None = None) -> PosteriorDraws:
    """Sample the joint posterior with fixed-trajectory HMC.

    Chains run sequentially on independent streams spawned from the seed
    (``rng`` overrides ``config.seed`` when given), so results are
    reproducible bit-for-bit.  The step count is jittered +-20% around
    ``config.leapfrog_steps`` each iteration; theta and phi blocks are
    re-centered after every accepted move.
    """
    if not lap.connected:
        raise ValueError("HMC needs a connected graph prior (use the identity fallback)")
    K = data.n_classes
    n_tau = 0 if tau_fixed is not None else 2
    dim, core = make_value_and_grad(data, lap, hyper, tau_fixed=tau_fixed)

    if tau_fixed is None:
        def target(z):
            val, g = core(z)
            # change of variables tau -> log tau
            val = val + z[-2] + z[-1]
            g = g.copy()
            g[-2] += 1.0
            g[-1] += 1.0
            return val, g
    else:
        target = core

    base = default_initial_state(data, lap, hyper, tau_fixed)
    if init is not None:
        base = init.projected()
    z_init = _pack(base, tau_fixed)

    seed = config.seed if rng is None else int(rng)
    root = np.random.SeedSequence(seed)
    chain_seeds = root.spawn(config.chains)

    n_keep = config.sampling_iters
    theta_out = np.empty((config.chains, n_keep, K))
    phi_out = np.empty((config.chains, n_keep, K, K))
    tq_out = np.empty((config.chains, n_keep))
    tc_out = np.empty((config.chains, n_keep))
    accept_rates = np.empty(config.chains)
    step_sizes = np.empty(config.chains)
    divergences = 0

    for c in range(config.chains):
        crng = np.random.default_rng(chain_seeds[c])
        z = z_init.copy()
        if c > 0:
            z = z + 0.01 * crng.standard_normal(dim)
            _project_blocks(z, K, n_tau)
        val, grad = target(z)
        retries = 0
        while not np.isfinite(val):
            retries += 1
            if retries > 10:
                raise RuntimeError("non-finite log-joint after 10 scaled-down restarts")
            z = z * 0.5
            _project_blocks(z, K, n_tau)
            val, grad = target(z)

        inv_mass = np.ones(dim)
        eps = _find_reasonable_epsilon(z, val, grad, inv_mass, target, crng, K, n_tau)
        da = _DualAveraging(eps, config.target_accept)
        warm_buffer = np.empty((config.warmup_iters, dim))
        mass_switch = config.warmup_iters // 2 if config.warmup_iters >= 100 else None

        def one_iteration(z, val, grad, eps, count_divergence):
            nonlocal divergences
            n_steps = max(1, int(round(config.leapfrog_steps * crng.uniform(0.8, 1.2))))
            p = crng.standard_normal(dim) / np.sqrt(inv_mass)
            _project_blocks(p, K, n_tau)
            h0 = val - 0.5 * float(np.sum(p * p * inv_mass))
            z1, p1, val1, grad1 = _leapfrog(z, p, grad, eps, n_steps, inv_mass, target)
            if np.isfinite(val1):
                h1 = val1 - 0.5 * float(np.sum(p1 * p1 * inv_mass))
                log_ratio = h1 - h0
            else:
                log_ratio = -np.inf
            if not np.isfinite(log_ratio) or log_ratio < -1000.0:
                if count_divergence:
                    divergences += 1
                accept_prob = 0.0
            else:
                accept_prob = min(1.0, math.exp(min(0.0, log_ratio)))
            if crng.random() < accept_prob:
                _project_blocks(z1, K, n_tau)
                return z1, val1, grad1, accept_prob, True
            return z, val, grad, accept_prob, False

        for m in range(config.warmup_iters):
            z, val, grad, accept_prob, _ = one_iteration(z, val, grad, eps, False)
            eps = da.update(accept_prob)
            warm_buffer[m] = z
            if mass_switch is not None and m + 1 == mass_switch:
                half = warm_buffer[mass_switch // 2 : mass_switch]
                inv_mass = _block_inv_mass(half, K, n_tau)
                eps = _find_reasonable_epsilon(z, val, grad, inv_mass, target, crng, K, n_tau)
                da = _DualAveraging(eps, config.target_accept)

        eps = da.adapted
        accepted = 0
        for m in range(n_keep):
            z, val, grad, accept_prob, accepted_move = one_iteration(z, val, grad, eps, True)
            accepted += int(accepted_move)
            st = _unpack(z, K, tau_fixed)
            theta_out[c, m] = st.theta
            phi_out[c, m] = st.phi
            tq_out[c, m] = st.tau_q
            tc_out[c, m] = st.tau_C
        accept_rates[c] = accepted / n_keep
        step_sizes[c] = eps

    return PosteriorDraws(
        theta=theta_out, phi=phi_out, tau_q=tq_out, tau_C=tc_out,
        accept_rates=accept_rates, divergence_count=divergences,
        step_sizes=step_sizes, config=config,
    )


# ---------------------------------------------------------------------------
# Block Newton-CG MAP

def _cg_solve(hvp, g: np.ndarray, rel_tol: float, max_iters: int) -> np.ndarray:
    """Conjugate gradients for ``H d = g`` from zero, PSD-guarded."""
    x = np.zeros_like(g)
    r = g.copy()
    p = r.copy()
    rs = float(r @ r)
    g_norm = math.sqrt(rs)
    if g_norm == 0.0:
        return x
    for _ in range(max_iters):
        Hp = hvp(p)
        curv = float(p @ Hp)
        if curv <= 1e-300:
            break
        alpha = rs / curv
        x += alpha * p
        r -= alpha * Hp
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= rel_tol * g_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    if not np.any(x):
        return g.copy()
    return x


def block_newton_cg(data: CountData, lap: LaplacianMatrix, hyper: HyperParams,
                    config: NewtonConfig | None = None,
                    tau_fixed: tuple[float, float] | None = None,
                    init: ModelState | None = None) -> MapResult:
    """Alternating MAP optimisation: phi step, theta step, tau update.

    Newton directions use the per-block Gauss-Newton curvature (the
    multinomial Fisher information pushed through the softmax and
    confusion maps) plus the Laplacian prior precision; a backtracking
    line search keeps the log-joint non-decreasing.  The tau update
    takes the conjugate Gamma posterior mean, falling back to the
    posterior mode whenever the mean would lower the log-joint.
    """
    if config is None:
        config = NewtonConfig()
    if not lap.connected:
        raise ValueError("MAP optimisation needs a connected graph prior")
    K = data.n_classes
    L = lap.matrix
    hyperp = hyper

    state = (init.projected() if init is not None
             else default_initial_state(data, lap, hyperp, tau_fixed))
    theta = state.theta.copy()
    phi = state.phi.copy()
    tau_q, tau_C = state.tau_q, state.tau_C

    from .model import _core_grad, _core_logp  # internal fast paths

    def logp(th, ph, tq, tc):
        return _core_logp(th, ph, tq, tc, data, L, hyperp)

    current = logp(theta, phi, tau_q, tau_C)
    if not np.isfinite(current):
        raise RuntimeError("non-finite log-joint at the initial state")
    trace = [current]
    nt = data.target_counts.astype(float)
    n_prime = float(data.target_total)
    n_src = data.source_totals.astype(float)

    def line_search(candidate_fn, base_val):
        alpha = 1.0
        for _ in range(40):
            cand = candidate_fn(alpha)
            val = logp(*cand)
            if np.isfinite(val) and val >= base_val - 1e-11 * max(1.0, abs(base_val)):
                if val >= base_val or alpha < 1e-9:
                    return cand, max(val, base_val) if val < base_val else val, True
            alpha *= 0.5
        return None, base_val, False

    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        prev = current

        # phi block: joint Newton-CG step over all columns.  Curvature is
        # the exact Gauss-Newton/Fisher form: the source multinomial
        # contributes n_i (diag(c_i) - c_i c_i^T); the target likelihood
        # enters through dr/dphi_i = q_i J_{c_i}.
        q = softmax_centered(theta)
        C = np.exp(phi - phi.max(axis=0, keepdims=True))
        C = C / C.sum(axis=0, keepdims=True)
        r = C @ q
        w_target = n_prime / np.maximum(r, 1e-300)
        _, g_phi, _, _ = _core_grad(theta, phi, tau_q, tau_C, data, L, hyperp)
        D = np.zeros_like(phi)
        for i in range(K):
            ci = C[:, i]
            qi = q[i]
            ni = n_src[i]

            def hvp(v, ci=ci, qi=qi, ni=ni):
                jv = ci * v - ci * float(ci @ v)
                tgt = w_target * jv
                gn = qi * qi * (ci * tgt - ci * float(ci @ tgt))
                return ni * jv + gn + tau_C * (L @ v)

            D[:, i] = _cg_solve(hvp, g_phi[:, i], config.cg_tolerance,
                                config.max_cg_iters)

        def phi_candidate(alpha):
            ph = phi + alpha * D
            ph = ph - ph.mean(axis=0, keepdims=True)
            return theta, ph, tau_q, tau_C

        cand, val, ok = line_search(phi_candidate, current)
        if ok and cand is not None:
            phi = cand[1]
            current = val

        # theta block: Gauss-Newton curvature J_q C^T diag(n'/r) C J_q,
        # which reduces to n' (diag(r) - r r^T) for identity confusion but
        # stays honest when confusion columns are nearly collinear
        C = np.exp(phi - phi.max(axis=0, keepdims=True))
        C = C / C.sum(axis=0, keepdims=True)
        q = softmax_centered(theta)
        r = C @ q
        w_target = n_prime / np.maximum(r, 1e-300)
        g_theta, _, _, _ = _core_grad(theta, phi, tau_q, tau_C, data, L, hyperp)

        def hvp_theta(v):
            jv = q * v - q * float(q @ v)
            cjv = C @ jv
            back = C.T @ (w_target * cjv)
            return (q * back - q * float(q @ back)) + tau_q * (L @ v)

        d_theta = _cg_solve(hvp_theta, g_theta, config.cg_tolerance,
                            config.max_cg_iters)

        def theta_candidate(alpha):
            th = project_tangent(theta + alpha * d_theta)
            return th, phi, tau_q, tau_C

        cand, val, ok = line_search(theta_candidate, current)
        if ok and cand is not None:
            theta = cand[0]
            current = val

        # tau updates from the conjugate Gamma posteriors
        if tau_fixed is None:
            shape_q, rate_q = gamma_update([theta], lap, hyperp.a_q, hyperp.b_q)
            shape_c, rate_c = gamma_update(list(phi.T), lap, hyperp.a_C, hyperp.b_C)
            for (shape, rate, which) in ((shape_q, rate_q, "q"), (shape_c, rate_c, "C")):
                mean = shape / rate
                tq, tc = (mean, tau_C) if which == "q" else (tau_q, mean)
                val = logp(theta, phi, tq, tc)
                if val < current and shape > 1.0:
                    mode = (shape - 1.0) / rate
                    tq, tc = (mode, tau_C) if which == "q" else (tau_q, mode)
                    val = logp(theta, phi, tq, tc)
                if val >= current:
                    tau_q, tau_C, current = tq, tc, val

        trace.append(current)
        rel = abs(current - prev) / max(1.0, abs(prev))
        if rel < config.outer_rel_tol:
            converged = True
            break

    g_theta, g_phi, _, _ = _core_grad(theta, phi, tau_q, tau_C, data, L, hyperp)
    grad_norm = float(np.sqrt(np.sum(g_theta**2) + np.sum(g_phi**2)))
    final = ModelState(theta=theta, phi=phi, tau_q=tau_q, tau_C=tau_C).projected()
    return MapResult(state=final, converged=converged, n_iters=it,
                     log_joint=current, grad_norm=grad_norm, logp_trace=trace)


# ---------------------------------------------------------------------------
# Chain diagnostics and summaries

def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction for one scalar parameter.

    ``x`` has shape (chains, draws).  Constant draws return exactly 1.
    """
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    half = n // 2
    if half < 2:
        return float("nan")
    halves = np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)
    within = halves.var(axis=1, ddof=1).mean()
    scale = max(1.0, float(np.abs(halves.mean()))) ** 2
    if within <= 1e-28 * scale:
        return 1.0
    between = half * halves.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    from scipy.stats import rankdata

    flat = x.reshape(-1)
    ranks = rankdata(flat, method="average")
    z = ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(x.shape)


def bulk_ess(x: np.ndarray) -> float:
    """Rank-normalised split-chain effective sample size (Geyer truncation)."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    half = n // 2
    if half < 4:
        return float("nan")
    halves = np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)
    if np.allclose(halves, halves[0, 0]):
        return float(halves.size)
    z = _rank_normalize(halves)
    mm, nn = z.shape

    centered = z - z.mean(axis=1, keepdims=True)
    width = 1
    while width < 2 * nn:
        width <<= 1
    f = np.fft.rfft(centered, n=2 * width, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :nn].real / nn

    chain_var = acov[:, 0] * nn / (nn - 1)
    within = chain_var.mean()
    between = nn * z.mean(axis=1).var(ddof=1) if mm > 1 else 0.0
    var_plus = within * (nn - 1) / nn + (between / nn if mm > 1 else 0.0)
    if var_plus == 0.0:
        return float(z.size)

    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    # Geyer initial positive + monotone sequence over pairs
    tau = 0.0
    prev_pair = None
    t = 1
    pair_sum = 1.0 + rho[1] if nn > 1 else 1.0
    while t + 1 < nn - 1:
        if pair_sum <= 0.0:
            break
        if prev_pair is not None:
            pair_sum = min(pair_sum, prev_pair)
        tau += 2.0 * pair_sum
        prev_pair = pair_sum
        t += 2
        pair_sum = rho[t] + (rho[t + 1] if t + 1 < nn else 0.0)
    tau = max(tau - 1.0, 1.0 / (mm * nn))
    return float(min(mm * nn / tau, mm * nn))


def summarize(draws: PosteriorDraws, burn_discard: int = 0) -> PosteriorSummary:
    """Posterior summary in probability space with chain diagnostics.

    Each retained draw is mapped through softmax before statistics are
    taken; intervals are equal-tailed 95%.  With a single chain, R-hat
    is reported as unavailable (None).
    """
    if burn_discard >= draws.n_draws:
        raise ValueError("burn_discard leaves no draws")
    q = draws.q_draws(burn_discard)
    C = draws.confusion_draws(burn_discard)
    m, n, K = q.shape
    flat_q = q.reshape(-1, K)
    q_mean = flat_q.mean(axis=0)
    q_var = flat_q.var(axis=0)
    lo = np.percentile(flat_q, 2.5, axis=0)
    hi = np.percentile(flat_q, 97.5, axis=0)
    c_mean = C.reshape(-1, K, K).mean(axis=0)

    scalar_series = {f"q_{i}": q[:, :, i] for i in range(K)}
    scalar_series["log_tau_q"] = np.log(draws.tau_q[:, burn_discard:])
    scalar_series["log_tau_C"] = np.log(draws.tau_C[:, burn_discard:])
    multi_chain = m >= 2
    rhat = {k: (split_rhat(v) if multi_chain else None) for k, v in scalar_series.items()}
    ess = {k: bulk_ess(v) for k, v in scalar_series.items()}

    return PosteriorSummary(
        q_mean=q_mean, q_ci_low=np.minimum(lo, q_mean),
        q_ci_high=np.maximum(hi, q_mean), q_variance=q_var, C_mean=c_mean,
        rhat=rhat, ess=ess, n_draws=n, n_chains=m,
    )


def posterior_predictive(draws: PosteriorDraws, n_target: int,
                         rng: np.random.Generator | int | None = None,
                         burn_discard: int = 0) -> PredictiveSummary:
    """Simulate target prediction counts from each retained draw.

    For every draw, counts are sampled from ``Multinomial(n_target, C q)``;
    the summary reports the mean vector and equal-tailed 95% predictive
    intervals per class.
    """
    if rng is None or isinstance(rng, int):
        rng = np.random.default_rng(rng)
    q = draws.q_draws(burn_discard).reshape(-1, draws.n_classes)
    C = draws.confusion_draws(burn_discard).reshape(-1, draws.n_classes, draws.n_classes)
    probs = np.einsum("djk,dk->dj", C, q)
    probs = probs / probs.sum(axis=1, keepdims=True)
    samples = np.array([rng.multinomial(n_target, p) for p in probs])
    return PredictiveSummary(
        mean=samples.mean(axis=0),
        lower=np.percentile(samples, 2.5, axis=0),
        upper=np.percentile(samples, 97.5, axis=0),
        n_target=int(n_target),
    )


def draws_to_csv(draws: PosteriorDraws, path, burn_discard: int = 0) -> None:
    """Stream raw draws to CSV: chain, iter, theta, phi (column-major), taus."""
    import csv as _csv

    K = draws.n_classes
    header = (["chain", "iter"] + [f"theta_{i}" for i in range(K)]
              + [f"phi_{j}_{i}" for i in range(K) for j in range(K)]
              + ["tau_q", "tau_C"])
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for c in range(draws.n_chains):
            for m in range(burn_discard, draws.n_draws):
                row = ([c, m] + [repr(float(v)) for v in draws.theta[c, m]]
                       + [repr(float(v)) for v in draws.phi[c, m].ravel(order="F")]
                       + [repr(float(draws.tau_q[c, m])), repr(float(draws.tau_C[c, m]))])
                writer.writerow(row)
