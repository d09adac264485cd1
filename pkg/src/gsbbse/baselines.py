"""Classical point estimators of the target class prior.

All four estimators consume the same ingredients: an empirical confusion
matrix (column-stochastic) and the histogram of the frozen classifier's
predictions on the target sample.  Outputs are always valid simplex
vectors; infeasible intermediate solutions are repaired by Euclidean
projection rather than clamp-and-renormalise, since the projection is
the well-defined optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simplex import check_simplex, euclidean_simplex_projection

# Condition number beyond which the linear solve falls back to the
# pseudo-inverse and the estimate is flagged.
SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class PriorEstimate:
    """A point estimate of the target prior with solver diagnostics."""

    q_hat: np.ndarray
    method: str
    residual: float
    iterations: int = 0
    converged: bool = True
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "q_hat", np.asarray(self.q_hat, dtype=float))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "q_hat": [float(v) for v in self.q_hat],
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "note": self.note,
        }


def _check_confusion(C_hat: np.ndarray) -> np.ndarray:
    C_hat = np.asarray(C_hat, dtype=float)
    if C_hat.ndim != 2 or C_hat.shape[0] != C_hat.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {C_hat.shape}")
    if np.any(C_hat < 0):
        raise ValueError("confusion matrix entries must be nonnegative")
    if not np.allclose(C_hat.sum(axis=0), 1.0, atol=1e-6):
        raise ValueError("confusion matrix columns must sum to 1")
    return C_hat


def bbse(C_hat: np.ndarray, q_tilde: np.ndarray) -> PriorEstimate:
    """Invert the confusion matrix against the target prediction histogram.

    Least-squares solve of ``C q = q_tilde`` followed by projection onto
    the simplex.  A numerically singular matrix (condition beyond 1e12)
    switches to the pseudo-inverse and flags the estimate.
    """
    C_hat = _check_confusion(C_hat)
    q_tilde = check_simplex(q_tilde, name="q_tilde")
    cond = np.linalg.cond(C_hat)
    note = ""
    if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
        x = np.linalg.pinv(C_hat) @ q_tilde
        note = f"condition {cond:.2e} beyond {SINGULAR_CONDITION:.0e}; pseudo-inverse used"
    else:
        x = np.linalg.lstsq(C_hat, q_tilde, rcond=None)[0]
    q_hat = euclidean_simplex_projection(x)
    residual = float(np.linalg.norm(C_hat @ q_hat - q_tilde))
    return PriorEstimate(q_hat=q_hat, method="bbse", residual=residual, note=note)


def saerens_em(C_hat: np.ndarray, target_counts: np.ndarray,
               max_iters: int = 10000, tol: float = 1e-10) -> PriorEstimate:
    """Multiplicative EM re-estimation of the prior from count data.

    Starting from the uniform prior, updates
    ``q_i <- q_i * sum_j (n_j / n') C_{j,i} / (C q)_j`` until the L1
    change falls under ``tol``.  At an interior fixed point the
    stationarity condition ``C^T (r_hat / r) = 1`` holds.
    """
    C_hat = _check_confusion(C_hat)
    target_counts = np.asarray(target_counts, dtype=float)
    if np.any(target_counts < 0):
        raise ValueError("target counts must be nonnegative")
    n_prime = target_counts.sum()
    if n_prime <= 0:
        raise ValueError("target count total must be positive")
    r_hat = target_counts / n_prime

    K = C_hat.shape[0]
    q = np.full(K, 1.0 / K)
    converged = False
    iterations = max_iters
    for it in range(1, max_iters + 1):
        r = C_hat @ q
        ratio = np.where(r_hat > 0, r_hat / np.maximum(r, 1e-300), 0.0)
        q_new = q * (C_hat.T @ ratio)
        q_new = q_new / q_new.sum()
        delta = float(np.abs(q_new - q).sum())
        q = q_new
        if delta < tol:
            converged = True
            iterations = it
            break
    r = C_hat @ q
    ratio = np.where(r_hat > 0, r_hat / np.maximum(r, 1e-300), 0.0)
    support = q > 1e-12
    residual = float(np.max(np.abs((C_hat.T @ ratio)[support] - 1.0))) if support.any() else 0.0
    return PriorEstimate(q_hat=q, method="em", residual=residual,
                         iterations=iterations, converged=converged)


def mlls(C_hat: np.ndarray, target_counts: np.ndarray,
         max_iters: int = 5000, tol: float = 1e-12) -> PriorEstimate:
    """Maximum-likelihood prior estimate by exponentiated gradient ascent.

    Maximises the multinomial log-likelihood ``n^T log(C q)`` over the
    simplex with multiplicative (mirror-descent) updates and a
    backtracking step size, so the objective never decreases.  The
    residual is the fixed-point gap ``max |q - P(q + grad)|`` of the
    projected optimality condition.
    """
    C_hat = _check_confusion(C_hat)
    target_counts = np.asarray(target_counts, dtype=float)
    n_prime = target_counts.sum()
    if n_prime <= 0:
        raise ValueError("target count total must be positive")

    def objective(qv: np.ndarray) -> float:
        r = C_hat @ qv
        pos = target_counts > 0
        if np.any(r[pos] <= 0):
            return -np.inf
        return float(target_counts[pos] @ np.log(r[pos]))

    K = C_hat.shape[0]
    q = np.full(K, 1.0 / K)
    obj = objective(q)
    eta = 1.0
    converged = False
    iterations = max_iters
    for it in range(1, max_iters + 1):
        r = C_hat @ q
        grad = C_hat.T @ np.where(r > 0, target_counts / np.maximum(r, 1e-300), 0.0)
        # normalised ascent direction; exact zero at the MLE
        direction = grad / n_prime - 1.0
        improved = False
        step = eta
        for _ in range(60):
            q_new = q * np.exp(step * direction)
            q_new = q_new / q_new.sum()
            obj_new = objective(q_new)
            if obj_new >= obj:
                improved = True
                break
            step *= 0.5
        if not improved:
            iterations = it
            break
        delta = float(np.abs(q_new - q).sum())
        gain = obj_new - obj
        q, obj = q_new, obj_new
        eta = min(step * 2.0, 10.0)
        # second clause: objective gains at the float-resolution floor
        if delta < tol or (gain < 1e-12 and delta < 1e-7):
            converged = True
            iterations = it
            break
    r = C_hat @ q
    grad = C_hat.T @ np.where(r > 0, target_counts / np.maximum(r, 1e-300), 0.0)
    residual = float(np.max(np.abs(q - euclidean_simplex_projection(q + grad / n_prime - 1.0))))
    return PriorEstimate(q_hat=q, method="mlls", residual=residual,
                         iterations=iterations, converged=converged)


def rlls(C_hat: np.ndarray, q_tilde: np.ndarray, p_source: np.ndarray,
         lambda_reg: float | None = None, n_prime: float | None = None) -> PriorEstimate:
    """Ridge-regularised inversion in the importance-weight parameterisation.

    Solves ``min_w ||C (p o w) - q_tilde||^2 + lambda ||w - 1||^2`` in
    closed form and projects ``p o w`` onto the simplex.  When
    ``lambda_reg`` is omitted it defaults to ``1 / sqrt(n_prime)``.
    """
    C_hat = _check_confusion(C_hat)
    q_tilde = check_simplex(q_tilde, name="q_tilde")
    p_source = check_simplex(p_source, name="p_source")
    if lambda_reg is None:
        if n_prime is None:
            raise ValueError("need lambda_reg or n_prime for its default 1/sqrt(n')")
        lambda_reg = 1.0 / float(np.sqrt(n_prime))
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")

    K = C_hat.shape[0]
    A = C_hat * p_source[None, :]
    lhs = A.T @ A + lambda_reg * np.eye(K)
    rhs = A.T @ q_tilde + lambda_reg * np.ones(K)
    if lambda_reg == 0.0:
        w = np.linalg.lstsq(A, q_tilde, rcond=None)[0]
    else:
        w = np.linalg.solve(lhs, rhs)
    q_hat = euclidean_simplex_projection(p_source * w)
    residual = float(np.linalg.norm(C_hat @ q_hat - q_tilde))
    return PriorEstimate(q_hat=q_hat, method="rlls", residual=residual,
                         note=f"lambda={lambda_reg:.6g}")


def saerens_correction(posterior_matrix: np.ndarray, p_source: np.ndarray,
                       q_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reweight classifier posteriors by the estimated prior ratio.

    Each row is multiplied elementwise by ``q_hat / p_source`` and
    renormalised; returns the corrected rows and their argmax labels.
    """
    posterior_matrix = np.asarray(posterior_matrix, dtype=float)
    p_source = check_simplex(p_source, name="p_source")
    q_hat = check_simplex(q_hat, name="q_hat")
    if np.any(p_source <= 0) or np.any(q_hat <= 0):
        raise ValueError("p_source and q_hat must be interior for reweighting")
    if posterior_matrix.ndim != 2 or posterior_matrix.shape[1] != p_source.shape[0]:
        raise ValueError(f"posterior matrix shape {posterior_matrix.shape} mismatch")
    row_sums = posterior_matrix.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("posterior rows must sum to 1")
    weighted = posterior_matrix * (q_hat / p_source)[None, :]
    corrected = weighted / weighted.sum(axis=1, keepdims=True)
    labels = np.argmax(corrected, axis=1)
    return corrected, labels
