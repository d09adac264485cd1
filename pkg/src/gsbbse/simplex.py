"""Coordinate maps and metric operations on the probability simplex.

Points of the simplex are plain 1-D numpy arrays that sum to one.  The
unconstrained coordinate used everywhere else in the package is the
centered log-odds vector: log-probabilities minus their mean, which sums
to zero.  Both directions of the map, the tangent-space projector, the
Fisher-Rao metric action, and the Euclidean projection onto the simplex
live here.
"""

from __future__ import annotations

import numpy as np

# Entries at or below this are treated as boundary points; centered
# log-odds and the Fisher-Rao metric refuse them instead of clamping.
INTERIOR_EPS = 1e-12


def is_interior(q: np.ndarray, eps: float = INTERIOR_EPS) -> bool:
    """True when every entry of ``q`` exceeds ``eps``."""
    q = np.asarray(q, dtype=float)
    return bool(np.all(q > eps))


def check_simplex(q: np.ndarray, tol: float = 1e-9, name: str = "q") -> np.ndarray:
    """Validate a simplex point: nonnegative entries summing to one."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(q < -tol):
        raise ValueError(f"{name} has negative entries: min={q.min():.3e}")
    s = q.sum()
    if abs(s - 1.0) > tol:
        raise ValueError(f"{name} sums to {s!r}, expected 1")
    return q


def softmax_centered(theta: np.ndarray) -> np.ndarray:
    """Map a (centered) log-odds vector to the interior of the simplex.

    Shift-invariant: ``softmax_centered(theta + c)`` equals
    ``softmax_centered(theta)`` for any constant ``c``.  The maximum is
    subtracted before exponentiation so large inputs cannot overflow.
    """
    theta = np.asarray(theta, dtype=float)
    z = np.exp(theta - theta.max())
    return z / z.sum()


def centered_logodds(q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`softmax_centered` on the interior of the simplex.

    Returns ``log q - mean(log q)``, which sums to zero.  Raises
    ``ValueError`` for boundary points rather than clamping them, since a
    silently clamped value would corrupt gradient checks downstream.
    """
    q = np.asarray(q, dtype=float)
    if not is_interior(q):
        raise ValueError(f"point is not interior (min entry {q.min():.3e})")
    logq = np.log(q)
    return logq - logq.mean()


def project_tangent(v: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the sum-zero subspace (mean removal)."""
    v = np.asarray(v, dtype=float)
    return v - v.mean()


def fisher_rao_apply(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the Fisher-Rao metric tensor at ``q`` to a tangent vector.

    Returns ``v / q`` elementwise; the bilinear form ``g_q(v, w)`` is the
    ordinary inner product of this output with ``w``.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if not is_interior(q):
        raise ValueError(f"metric undefined off the interior (min entry {q.min():.3e})")
    return v / q


def fisher_rao_inner(q: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    """The Fisher-Rao inner product ``sum_i v_i w_i / q_i``."""
    return float(np.dot(fisher_rao_apply(q, v), np.asarray(w, dtype=float)))


def euclidean_simplex_projection(x: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``x`` onto the probability simplex.

    Sort-and-threshold method: find the largest ``rho`` with
    ``u_rho + (1 - cumsum(u)_rho) / rho > 0`` for the descending sort
    ``u`` of ``x``, then shift and clip.  Exact on feasible input.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project non-finite input")
    u = np.sort(x)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, x.size + 1)
    cond = u + (1.0 - css) / j > 0
    rho = int(np.nonzero(cond)[0][-1])
    lam = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(x + lam, 0.0)
