"""Information-geometric form of the penalised prior-estimation objective.

The target-fit objective is a scaled KL divergence between the observed
prediction histogram and the model histogram ``C q``, plus the graph
quadratic penalty in centered log-odds coordinates.  Its steepest
descent under the Fisher-Rao metric is a replicator-style flow with a
Laplacian mixing force; the strong-convexity modulus combines the
multinomial curvature scale with the graph's algebraic connectivity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labelgraph import LaplacianMatrix
from .model import fisher_information
from .simplex import centered_logodds, check_simplex, is_interior

# Flow states this close to the boundary trigger step halving.
FLOW_INTERIOR_EPS = 1e-12


@dataclass(frozen=True)
class FlowState:
    """One point on a natural-gradient trajectory."""

    q: np.ndarray
    t: float
    F_value: float


@dataclass
class FlowTrajectory:
    """Recorded natural-gradient flow with per-step drift bookkeeping.

    ``max_abs_drift`` is the largest ``|sum(q) - 1|`` observed after an
    integrator step, before renormalisation; it stays at rounding level
    because the exact flow preserves the simplex.
    """

    t: np.ndarray
    q: np.ndarray
    F: np.ndarray
    max_abs_drift: float
    truncated: bool
    dt: float

    @property
    def states(self) -> list[FlowState]:
        return [FlowState(q=self.q[i].copy(), t=float(self.t[i]), F_value=float(self.F[i]))
                for i in range(len(self.t))]

    def to_csv(self, path) -> None:
        import csv

        K = self.q.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"q_{i}" for i in range(K)] + ["F"])
            for i in range(len(self.t)):
                writer.writerow([repr(float(self.t[i]))]
                                + [repr(float(v)) for v in self.q[i]]
                                + [repr(float(self.F[i]))])


def kl_divergence(p: np.ndarray, r: np.ndarray) -> float:
    """``sum p log(p/r)`` with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    pos = p > 0
    if np.any(r[pos] <= 0.0):
        return float("inf")
    return float(np.sum(p[pos] * np.log(p[pos] / r[pos])))


def penalised_objective(q: np.ndarray, r_hat: np.ndarray, C: np.ndarray,
                        lap: LaplacianMatrix, tau_q: float, n_prime: float) -> float:
    """``n' KL(r_hat || C q) + (tau_q / 2) theta^T L theta`` at ``theta = clo(q)``."""
    q = np.asarray(q, dtype=float)
    r_hat = check_simplex(r_hat, name="r_hat")
    if not is_interior(q):
        raise ValueError("objective needs an interior point")
    theta = centered_logodds(q)
    fit = n_prime * kl_divergence(r_hat, np.asarray(C, dtype=float) @ q)
    return float(fit + 0.5 * tau_q * lap.quadratic_form(theta))


def natural_gradient(q: np.ndarray, r_hat: np.ndarray, C: np.ndarray,
                     lap: LaplacianMatrix, tau_q: float, n_prime: float) -> np.ndarray:
    """Fisher-Rao gradient of the penalised objective.

    Equals ``diag(q) grad_euc`` projected to the tangent space, which
    works out to ``n' q o (C^T (1 - r_hat / r(q))) + tau_q L theta``.
    The fit term sums to zero against ``q`` and ``L theta`` sums to zero
    outright, so the output is tangent and the flow never leaves the
    simplex.  (Weighting the Laplacian term by ``q`` as well would break
    exactly that property; the metric inverse only multiplies the
    Euclidean gradient, whose smoothing part carries a ``1/q`` factor
    from the log-odds chain rule.)
    """
    q = np.asarray(q, dtype=float)
    if not is_interior(q):
        raise ValueError("natural gradient needs an interior point")
    C = np.asarray(C, dtype=float)
    r = C @ q
    ratio = np.where(np.asarray(r_hat) > 0, np.asarray(r_hat) / np.maximum(r, 1e-300), 0.0)
    theta = centered_logodds(q)
    return n_prime * q * (C.T @ (1.0 - ratio)) + tau_q * (lap.matrix @ theta)


def convexity_modulus(q: np.ndarray, C: np.ndarray, lap: LaplacianMatrix,
                      tau_q: float, n_prime: float) -> float:
    """Strong-convexity modulus ``n' lambda_min(F0) + tau_q lambda2(L)``.

    ``lambda_min`` is taken on the sum-zero subspace, where the
    multinomial Fisher information can be positive (the all-ones
    direction always carries eigenvalue zero).
    """
    info = fisher_information(np.asarray(C, dtype=float), np.asarray(q, dtype=float))
    return float(n_prime * info.min_eigenvalue_sum_zero() + tau_q * lap.lambda2)


def fisher_rao_geodesic(q: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    """Point at time ``t`` on the Fisher-Rao geodesic from ``q`` with velocity ``v``.

    Uses the sphere representation ``x = sqrt(q)``: great circles of the
    sphere are the geodesics, and the initial sphere velocity matching
    ``dq/dt = v`` is ``v / (2 sqrt(q))``.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    x0 = np.sqrt(q)
    u = v / (2.0 * x0)
    speed = float(np.linalg.norm(u))
    if speed == 0.0:
        return q.copy()
    x = np.cos(speed * t) * x0 + np.sin(speed * t) * (u / speed)
    return x * x


def replicator_flow(q0: np.ndarray, r_hat: np.ndarray, C: np.ndarray,
                    lap: LaplacianMatrix, tau_q: float, n_prime: float,
                    dt: float | None = None, steps: int = 2000) -> FlowTrajectory:
    """Integrate the natural-gradient descent flow with classic RK4.

    The state is renormalised to unit sum after every step (the
    pre-renormalisation drift is recorded and stays at rounding level).
    A step that would leave the interior is halved and retried; if
    halving cannot rescue it the trajectory is truncated and flagged.
    """
    q0 = np.asarray(q0, dtype=float)
    if not is_interior(q0):
        raise ValueError("flow must start at an interior point")
    if dt is None:
        alpha = convexity_modulus(q0, C, lap, tau_q, n_prime)
        dt = 1e-3 / alpha if alpha > 0 else 1e-3
    if dt <= 0:
        raise ValueError("dt must be positive")

    def field(qv: np.ndarray) -> np.ndarray:
        if not is_interior(qv, FLOW_INTERIOR_EPS) or np.any(~np.isfinite(qv)):
            raise FloatingPointError("left the interior")
        return -natural_gradient(qv, r_hat, C, lap, tau_q, n_prime)

    ts = [0.0]
    qs = [q0.copy()]
    fs = [penalised_objective(q0, r_hat, C, lap, tau_q, n_prime)]
    q = q0.copy()
    t = 0.0
    max_drift = 0.0
    truncated = False

    for _ in range(steps):
        h = dt
        for attempt in range(40):
            try:
                k1 = field(q)
                k2 = field(q + 0.5 * h * k1)
                k3 = field(q + 0.5 * h * k2)
                k4 = field(q + h * k3)
                q_new = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not is_interior(q_new, FLOW_INTERIOR_EPS):
                    raise FloatingPointError("left the interior")
                break
            except FloatingPointError:
                h *= 0.5
        else:
            truncated = True
            break
        drift = abs(float(q_new.sum()) - 1.0)
        max_drift = max(max_drift, drift)
        q = q_new / q_new.sum()
        t += h
        ts.append(t)
        qs.append(q.copy())
        fs.append(penalised_objective(q, r_hat, C, lap, tau_q, n_prime))

    return FlowTrajectory(
        t=np.array(ts), q=np.array(qs), F=np.array(fs),
        max_abs_drift=max_drift, truncated=truncated, dt=dt,
    )


def pythagorean_residual(r_hat: np.ndarray, C: np.ndarray, q_star: np.ndarray,
                         q_center: np.ndarray) -> float:
    """Gap in the generalized Pythagorean identity at a candidate optimum.

    Returns ``|KL(r_hat || q_center) - KL(r_hat || C q_star) -
    KL(C q_star || q_center)|``.  Zero when ``C q_star`` is the exact
    information projection between the data histogram and the center.
    """
    r_hat = check_simplex(r_hat, name="r_hat")
    q_star = check_simplex(q_star, name="q_star")
    q_center = check_simplex(q_center, name="q_center")
    if not is_interior(q_center):
        raise ValueError("q_center must be interior (it sits inside two logs)")
    m = np.asarray(C, dtype=float) @ q_star
    total = kl_divergence(r_hat, q_center)
    parts = kl_divergence(r_hat, m) + kl_divergence(m, q_center)
    return float(abs(total - parts))
