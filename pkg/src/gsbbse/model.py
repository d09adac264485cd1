"""Hierarchical model for joint inference of target priors and confusion.

Observed data are multinomial counts: one source column per true class
(predictions of the frozen classifier on held-out labelled data) and one
target histogram of predictions on unlabelled data.  Latent quantities
live in centered log-odds coordinates: ``theta`` for the target prior
``q = softmax(theta)`` and one column ``phi_i`` per confusion column
``C[:, i] = softmax(phi_i)``.  Graph-Laplacian Gaussian priors shrink
both along the label graph, with Gamma hyper-priors on the precision
scales ``tau_q`` and ``tau_C``.

The log-joint drops multinomial coefficients (constant in the state) but
keeps the tau-dependent GMRF normalisers ``(K-1)/2 * log tau`` per
smoothed vector; without them the conjugate Gamma updates and the
sampled tau posterior would disagree.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .labelgraph import LaplacianMatrix
from .simplex import project_tangent, softmax_centered


@dataclass(frozen=True)
class CountData:
    """Prediction counts: a K x K source block and a K target histogram.

    ``source_counts[j, i]`` counts predictions ``j`` among the source
    validation examples of true class ``i``; column sums are the
    per-class totals.  ``target_counts[j]`` counts predictions ``j`` on
    the unlabelled target sample.
    """

    source_counts: np.ndarray
    target_counts: np.ndarray
    source_totals: np.ndarray = field(init=False)
    target_total: int = field(init=False)

    def __post_init__(self):
        sc = np.asarray(self.source_counts)
        tc = np.asarray(self.target_counts)
        if sc.ndim != 2 or sc.shape[0] != sc.shape[1]:
            raise ValueError(f"source_counts must be square, got shape {sc.shape}")
        K = sc.shape[0]
        if tc.shape != (K,):
            raise ValueError(f"target_counts shape {tc.shape} does not match K={K}")
        if np.any(sc < 0) or np.any(tc < 0):
            raise ValueError("counts must be nonnegative")
        if np.any(sc != np.floor(sc)) or np.any(tc != np.floor(tc)):
            raise ValueError("counts must be integers")
        object.__setattr__(self, "source_counts", sc.astype(np.int64))
        object.__setattr__(self, "target_counts", tc.astype(np.int64))
        object.__setattr__(self, "source_totals", self.source_counts.sum(axis=0))
        object.__setattr__(self, "target_total", int(self.target_counts.sum()))

    @property
    def n_classes(self) -> int:
        return self.source_counts.shape[0]

    @property
    def total(self) -> int:
        """Combined sample size N = n' + sum_i n^S_i."""
        return int(self.target_total + self.source_totals.sum())

    def empirical_confusion(self, smoothing: float = 0.0) -> np.ndarray:
        """Column-normalised source counts, optionally add-``smoothing``."""
        cols = self.source_counts + smoothing
        return cols / cols.sum(axis=0, keepdims=True)

    def target_histogram(self) -> np.ndarray:
        """Normalised target prediction histogram (uniform if empty)."""
        if self.target_total == 0:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return self.target_counts / self.target_total


@dataclass(frozen=True)
class HyperParams:
    """Gamma shape/rate pairs for the two precision scales."""

    a_q: float = 1.0
    b_q: float = 1.0
    a_C: float = 1.0
    b_C: float = 1.0

    def __post_init__(self):
        if min(self.a_q, self.b_q, self.a_C, self.b_C) <= 0:
            raise ValueError("Gamma hyper-parameters must be positive")


@dataclass
class ModelState:
    """One point of the latent space.

    ``phi`` stores the K log-odds columns as a K x K matrix whose column
    ``i`` parameterises confusion column ``i``.  Both blocks are kept on
    the sum-zero subspace; tau values are positive.
    """

    theta: np.ndarray
    phi: np.ndarray
    tau_q: float
    tau_C: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        K = self.theta.shape[0]
        if self.phi.shape != (K, K):
            raise ValueError(f"phi shape {self.phi.shape} does not match K={K}")
        if self.tau_q <= 0 or self.tau_C <= 0:
            raise ValueError("tau values must be positive")

    @property
    def n_classes(self) -> int:
        return self.theta.shape[0]

    @property
    def q(self) -> np.ndarray:
        return softmax_centered(self.theta)

    @property
    def confusion(self) -> np.ndarray:
        z = np.exp(self.phi - self.phi.max(axis=0, keepdims=True))
        return z / z.sum(axis=0, keepdims=True)

    def projected(self) -> "ModelState":
        """Copy with theta and every phi column re-centered to sum zero."""
        return ModelState(
            theta=project_tangent(self.theta),
            phi=self.phi - self.phi.mean(axis=0, keepdims=True),
            tau_q=self.tau_q,
            tau_C=self.tau_C,
        )


@dataclass(frozen=True)
class FisherInfo:
    """Multinomial Fisher information ``diag(r) - r r^T`` at ``r = C q``."""

    matrix: np.ndarray

    def min_eigenvalue_sum_zero(self) -> float:
        """Smallest eigenvalue restricted to the sum-zero subspace.

        The all-ones direction always carries eigenvalue 0, so the
        restricted value is the one that can be positive.
        """
        K = self.matrix.shape[0]
        basis = _sum_zero_basis(K)
        lam = np.linalg.eigvalsh(basis.T @ self.matrix @ basis)
        return float(lam[0])


def _sum_zero_basis(K: int) -> np.ndarray:
    """Orthonormal basis of the sum-zero subspace, shape (K, K-1)."""
    a = np.eye(K) - np.full((K, K), 1.0 / K)
    u, s, _ = np.linalg.svd(a)
    return u[:, : K - 1]


def fisher_information(C: np.ndarray, q: np.ndarray) -> FisherInfo:
    """``diag(C q) - (C q)(C q)^T``, the target-likelihood curvature scale."""
    C = np.asarray(C, dtype=float)
    q = np.asarray(q, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[1] != q.shape[0]:
        raise ValueError(f"shape mismatch: C {C.shape}, q {q.shape}")
    r = C @ q
    return FisherInfo(matrix=np.diag(r) - np.outer(r, r))


def _gamma_logpdf(x: float, a: float, b: float) -> float:
    return a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(x) - b * x


def _core_logp(theta, phi, tau_q, tau_C, data: CountData, L: np.ndarray,
               hyper: HyperParams) -> float:
    """All state-dependent terms of the log-joint."""
    K = theta.shape[0]
    if not (np.isfinite(tau_q) and np.isfinite(tau_C) and tau_q > 0 and tau_C > 0):
        return -np.inf
    logC = phi - _logsumexp_cols(phi)
    val = float(np.sum(data.source_counts * logC))

    # target block through r = C q, in log space for small entries
    m = theta.max()
    e = np.exp(theta - m)
    r = np.exp(logC) @ (e / e.sum())
    nt = data.target_counts
    pos = nt > 0
    if np.any(r[pos] <= 0.0):
        return -np.inf
    val += float(nt[pos] @ np.log(r[pos]))

    quad_theta = float(theta @ L @ theta)
    quad_phi = float(np.sum(phi * (L @ phi)))
    val -= 0.5 * tau_q * quad_theta + 0.5 * tau_C * quad_phi
    # GMRF normalisers: tau^{(K-1)/2} per smoothed vector
    val += 0.5 * (K - 1) * np.log(tau_q) + 0.5 * K * (K - 1) * np.log(tau_C)
    val += _gamma_logpdf(tau_q, hyper.a_q, hyper.b_q)
    val += _gamma_logpdf(tau_C, hyper.a_C, hyper.b_C)
    if not np.isfinite(val):
        return -np.inf
    return val


def _logsumexp_cols(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=0, keepdims=True)
    return m + np.log(np.sum(np.exp(x - m), axis=0, keepdims=True))


def log_joint(state: ModelState, data: CountData, lap: LaplacianMatrix,
              hyper: HyperParams) -> float:
    """Log posterior density up to the multinomial coefficients.

    Includes both multinomial likelihood blocks, the two Laplacian
    quadratic penalties with their tau-dependent normalisers, and the
    Gamma log-densities of the precision scales.
    """
    return _core_logp(state.theta, state.phi, state.tau_q, state.tau_C,
                      data, lap.matrix, hyper)


def _core_grad(theta, phi, tau_q, tau_C, data: CountData, L: np.ndarray,
               hyper: HyperParams):
    """Gradient of :func:`_core_logp` in (theta, phi, log tau_q, log tau_C).

    The theta and phi components are projected onto their sum-zero
    subspaces; tau derivatives are with respect to log tau.
    """
    K = theta.shape[0]
    q = softmax_centered(theta)
    Cexp = np.exp(phi - _logsumexp_cols(phi))
    r = Cexp @ q
    nt = data.target_counts
    s = np.where(r > 0, nt / np.where(r > 0, r, 1.0), 0.0)

    a = Cexp.T @ s
    g_theta = q * a - q * float(q @ a) - tau_q * (L @ theta)
    g_theta -= g_theta.mean()

    # source block: counts minus expected; target block: chain rule
    # through each column's softmax with weight q_i
    g_phi = data.source_counts - Cexp * data.source_totals[None, :]
    col_dot = Cexp.T @ s
    g_phi += (Cexp * s[:, None] - Cexp * col_dot[None, :]) * q[None, :]
    g_phi -= tau_C * (L @ phi)
    g_phi -= g_phi.mean(axis=0, keepdims=True)

    quad_theta = float(theta @ L @ theta)
    quad_phi = float(np.sum(phi * (L @ phi)))
    g_ltq = tau_q * (-0.5 * quad_theta - hyper.b_q) + 0.5 * (K - 1) + (hyper.a_q - 1.0)
    g_ltc = tau_C * (-0.5 * quad_phi - hyper.b_C) + 0.5 * K * (K - 1) + (hyper.a_C - 1.0)
    return g_theta, g_phi, g_ltq, g_ltc


def grad_log_joint(state: ModelState, data: CountData, lap: LaplacianMatrix,
                   hyper: HyperParams) -> np.ndarray:
    """Analytic gradient of :func:`log_joint`, flattened.

    Layout matches :func:`pack_state`: ``theta`` (K entries), the phi
    columns in order (K*K entries, column-major), then the derivatives
    with respect to ``log tau_q`` and ``log tau_C``.
    """
    g_theta, g_phi, g_ltq, g_ltc = _core_grad(
        state.theta, state.phi, state.tau_q, state.tau_C,
        data, lap.matrix, hyper,
    )
    return np.concatenate([g_theta, g_phi.ravel(order="F"), [g_ltq, g_ltc]])


def pack_state(state: ModelState) -> np.ndarray:
    """Flatten to ``[theta, phi columns, log tau_q, log tau_C]``."""
    return np.concatenate([
        state.theta,
        state.phi.ravel(order="F"),
        [np.log(state.tau_q), np.log(state.tau_C)],
    ])


def unpack_state(z: np.ndarray, K: int) -> ModelState:
    """Inverse of :func:`pack_state`."""
    theta = z[:K]
    phi = z[K : K + K * K].reshape(K, K, order="F")
    return ModelState(theta=theta.copy(), phi=phi.copy(),
                      tau_q=float(np.exp(z[-2])), tau_C=float(np.exp(z[-1])))


def _fused_logp_grad(theta, phi, tau_q, tau_C, data: CountData, L: np.ndarray,
                     hyper: HyperParams, _lg_consts={}):
    """Log-joint and its gradient in one pass over the shared intermediates.

    Returns ``(val, g_theta, g_phi, g_log_tau_q, g_log_tau_C)``; a
    non-finite state yields ``val = -inf`` with zero gradients.
    """
    K = theta.shape[0]
    if not (np.isfinite(tau_q) and np.isfinite(tau_C) and tau_q > 0 and tau_C > 0):
        return -np.inf, np.zeros(K), np.zeros((K, K)), 0.0, 0.0

    key = (hyper.a_q, hyper.b_q, hyper.a_C, hyper.b_C)
    consts = _lg_consts.get(key)
    if consts is None:
        consts = (hyper.a_q * np.log(hyper.b_q) - gammaln(hyper.a_q)
                  + hyper.a_C * np.log(hyper.b_C) - gammaln(hyper.a_C))
        _lg_consts[key] = consts

    mphi = phi.max(axis=0, keepdims=True)
    ephi = np.exp(phi - mphi)
    colsum = ephi.sum(axis=0, keepdims=True)
    C = ephi / colsum
    logC = phi - (mphi + np.log(colsum))

    mth = theta.max()
    eth = np.exp(theta - mth)
    q = eth / eth.sum()
    r = C @ q

    nt = data.target_counts
    pos = nt > 0
    if np.any(r[pos] <= 0.0):
        return -np.inf, np.zeros(K), np.zeros((K, K)), 0.0, 0.0

    Lth = L @ theta
    Lph = L @ phi
    quad_theta = float(theta @ Lth)
    quad_phi = float(np.sum(phi * Lph))

    val = float(np.sum(data.source_counts * logC))
    val += float(nt[pos] @ np.log(r[pos]))
    val -= 0.5 * tau_q * quad_theta + 0.5 * tau_C * quad_phi
    val += (0.5 * (K - 1) + hyper.a_q - 1.0) * np.log(tau_q) - hyper.b_q * tau_q
    val += (0.5 * K * (K - 1) + hyper.a_C - 1.0) * np.log(tau_C) - hyper.b_C * tau_C
    val += consts
    if not np.isfinite(val):
        return -np.inf, np.zeros(K), np.zeros((K, K)), 0.0, 0.0

    # r > 0 was checked wherever nt > 0; zero counts contribute zero
    s = nt / np.maximum(r, 1e-300)
    a = C.T @ s
    g_theta = q * a - q * float(q @ a) - tau_q * Lth
    g_theta -= g_theta.mean()

    g_phi = data.source_counts - C * data.source_totals[None, :]
    g_phi += (C * s[:, None] - C * a[None, :]) * q[None, :]
    g_phi -= tau_C * Lph
    g_phi -= g_phi.mean(axis=0, keepdims=True)

    g_ltq = tau_q * (-0.5 * quad_theta - hyper.b_q) + 0.5 * (K - 1) + (hyper.a_q - 1.0)
    g_ltc = tau_C * (-0.5 * quad_phi - hyper.b_C) + 0.5 * K * (K - 1) + (hyper.a_C - 1.0)
    return val, g_theta, g_phi, g_ltq, g_ltc


def make_value_and_grad(data: CountData, lap: LaplacianMatrix, hyper: HyperParams,
                        tau_fixed: tuple[float, float] | None = None):
    """Fused log-joint + gradient on the packed vector, for samplers.

    With ``tau_fixed`` the packed vector holds only ``[theta, phi]`` and
    the tau values stay constant.  Returns ``(dim, fn)`` where
    ``fn(z) -> (value, grad)``.
    """
    K = data.n_classes
    L = lap.matrix

    if tau_fixed is not None:
        tq, tc = float(tau_fixed[0]), float(tau_fixed[1])
        dim = K + K * K

        def fn_fixed(z: np.ndarray):
            theta = z[:K]
            phi = z[K:].reshape(K, K, order="F")
            val, g_theta, g_phi, _, _ = _fused_logp_grad(
                theta, phi, tq, tc, data, L, hyper
            )
            return val, np.concatenate([g_theta, g_phi.ravel(order="F")])

        return dim, fn_fixed

    dim = K + K * K + 2

    def fn(z: np.ndarray):
        theta = z[:K]
        phi = z[K : K + K * K].reshape(K, K, order="F")
        with np.errstate(over="ignore"):
            tau_q, tau_C = np.exp(z[-2]), np.exp(z[-1])
        val, g_theta, g_phi, g_ltq, g_ltc = _fused_logp_grad(
            theta, phi, tau_q, tau_C, data, L, hyper
        )
        return val, np.concatenate([g_theta, g_phi.ravel(order="F"), [g_ltq, g_ltc]])

    return dim, fn


def sample_gmrf(lap: LaplacianMatrix, tau: float, rng: np.random.Generator) -> np.ndarray:
    """One draw from the degenerate Gaussian with precision ``tau * L``.

    Expands over the nonzero eigenpairs, so the output is exactly on the
    sum-zero subspace.  Requires a connected graph.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if not lap.connected or lap.lambda2 <= 0:
        raise ValueError("GMRF prior needs a connected graph (lambda2 > 0)")
    lam, u = lap.eigenvalues, lap.eigenvectors
    pos = lam > 1e-10
    z = rng.standard_normal(int(pos.sum()))
    x = u[:, pos] @ (z / np.sqrt(tau * lam[pos]))
    return project_tangent(x)


def gamma_update(block_vectors, lap: LaplacianMatrix, a: float, b: float) -> tuple[float, float]:
    """Conjugate Gamma posterior for a precision scale.

    For ``m`` smoothed vectors on a connected graph the posterior is
    ``Gamma(a + m (K-1)/2, b + 0.5 * sum_x x^T L x)``; ``K-1`` is the
    Laplacian rank.
    """
    if a <= 0 or b <= 0:
        raise ValueError("Gamma hyper-parameters must be positive")
    vectors = [np.asarray(x, dtype=float) for x in block_vectors]
    m = len(vectors)
    K = lap.n_classes
    quad = sum(lap.quadratic_form(x) for x in vectors)
    return a + 0.5 * m * (K - 1), b + 0.5 * quad


# ---------------------------------------------------------------------------
# File formats: counts as CSV (K rows of K ints, then the target line)
# or JSON {"source_counts": [[...]], "target_counts": [...]}.

def load_count_data_csv(path) -> CountData:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([int(c) for c in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad integer ({exc})") from None
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a K x K block plus a target row")
    K = len(rows[0])
    if len(rows) != K + 1:
        raise ValueError(f"{path}: got {len(rows)} rows, expected K+1={K + 1}")
    return CountData(source_counts=np.array(rows[:K]), target_counts=np.array(rows[K]))


def load_count_data_json(path) -> CountData:
    with open(path) as fh:
        payload = json.load(fh)
    return CountData(
        source_counts=np.array(payload["source_counts"]),
        target_counts=np.array(payload["target_counts"]),
    )


def load_count_data(path) -> CountData:
    path = str(path)
    if path.endswith(".json"):
        return load_count_data_json(path)
    return load_count_data_csv(path)


def save_count_data_csv(data: CountData, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in data.source_counts:
            writer.writerow([int(v) for v in row])
        writer.writerow([int(v) for v in data.target_counts])
